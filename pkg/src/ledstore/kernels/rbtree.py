"""Red-black tree with an allocated nil sentinel (its parent field is
scratch space during deletion, as in the textbook formulation).

Record shapes:

  node v1 manual         {key u32, value 16B, color u32, parent, left, right}   72 B
  node v2 manual change  {key u64, value 16B, color u32, parent, left, right}   76 B
  node v2 manual add     v1 fields + name 16B                                   88 B
  node auto              v1 fields + trailing extension link                    88 B record

Deletion moves the successor node itself (pointer surgery, no key/value
copy), so under the automatic model the only record that ever materializes
an extension per remove is the matched node.
"""

from __future__ import annotations

import struct

from .. import leds
from ..pool import ObjectId
from .base import MapKernel, check_key, decode_value, encode_value

_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")

RED = 0
BLACK = 1


def auto_node_type(change: str | None) -> leds.TypeDescriptor:
    desc = leds.define_type(
        "rbtree_node",
        [("key", "u32"), ("value", "oid"), ("color", "u32"),
         ("parent", "oid"), ("left", "oid"), ("right", "oid")],
    )
    if change == "change":
        desc = leds.append_extension(
            desc, [("key64", "u64")], {"op": "copy_fields", "map": {"key64": "key"}}
        )
    elif change == "add":
        desc = leds.append_extension(desc, [("name", "bytes16")], {"op": "zero"})
    return desc


class RBTreeKernel(MapKernel):
    kind = "rbtree"

    # root: tree root oid @0, nil oid @16, count u64 @32

    def __init__(self, pool, **kw):
        super().__init__(pool, **kw)
        if self.mode == "auto":
            self.desc = auto_node_type(self.change if self.version == 2 else None)
            self.key_off, self.val_off, self.color_off = 0, 4, 20
            self.par_off, self.left_off, self.right_off = 24, 40, 56
            self.node_size, self.key_is64 = self.desc.base_size, False
        elif self.version == 1:
            self.key_off, self.val_off, self.color_off = 0, 4, 20
            self.par_off, self.left_off, self.right_off = 24, 40, 56
            self.node_size, self.key_is64 = 72, False
        elif self.change == "change":
            self.key_off, self.val_off, self.color_off = 0, 8, 24
            self.par_off, self.left_off, self.right_off = 28, 44, 60
            self.node_size, self.key_is64 = 76, True
        else:
            self.key_off, self.val_off, self.color_off = 0, 4, 20
            self.par_off, self.left_off, self.right_off = 24, 40, 56
            self.node_size, self.key_is64 = 88, False
        self.nil = None

    # -- structure ----------------------------------------------------------

    def _init_structure(self, tx) -> None:
        nil = tx.alloc_zeroed(self.node_size)
        record = bytearray(self.node_size)
        _U32.pack_into(record, self.color_off, BLACK)
        record[self.par_off : self.par_off + 16] = nil.pack()
        record[self.left_off : self.left_off + 16] = nil.pack()
        record[self.right_off : self.right_off + 16] = nil.pack()
        if self.mode == "auto":
            tx.write(nil, 0, bytes(record[: self.desc.link_offset]))
        else:
            tx.write(nil, 0, bytes(record))
        tx.write(self.root, 0, nil.pack())
        tx.write(self.root, 16, nil.pack())
        tx.write(self.root, self.COUNT_OFF, _U64.pack(0))
        self.nil = nil

    def _load_structure(self) -> None:
        self.nil = self._root_oid_field(16)

    def _tree_root(self) -> ObjectId:
        return self._root_oid_field(0)

    # -- field access ---------------------------------------------------------

    def _key(self, oid: ObjectId) -> int:
        raw = self.pool.load(oid, self.key_off, 8 if self.key_is64 else 4)
        return (_U64 if self.key_is64 else _U32).unpack(raw)[0]

    def _color(self, oid: ObjectId) -> int:
        return _U32.unpack(self.pool.load(oid, self.color_off, 4))[0]

    def _oid_at(self, oid: ObjectId, off: int) -> ObjectId:
        return ObjectId.unpack(self.pool.load(oid, off, 16))

    def _confirm(self, oid: ObjectId, key: int) -> None:
        if self.mode == "auto" and self.version == 2 and self.change == "change":
            k64 = leds.read_field(self.pool, oid, self.desc, "key64")
            assert k64 == key, "key64 invariant violated"

    # -- rotations -------------------------------------------------------------

    def _rotate(self, tx, x: ObjectId, left: bool) -> None:
        a_off, b_off = (self.left_off, self.right_off) if left else (self.right_off, self.left_off)
        y = self._oid_at(x, b_off)
        y_a = self._oid_at(y, a_off)
        tx.write(x, b_off, y_a.pack())
        if y_a != self.nil:
            tx.write(y_a, self.par_off, x.pack())
        xp = self._oid_at(x, self.par_off)
        tx.write(y, self.par_off, xp.pack())
        if xp == self.nil:
            tx.write(self.root, 0, y.pack())
        elif x == self._oid_at(xp, self.left_off):
            tx.write(xp, self.left_off, y.pack())
        else:
            tx.write(xp, self.right_off, y.pack())
        tx.write(y, a_off, x.pack())
        tx.write(x, self.par_off, y.pack())

    # -- operations --------------------------------------------------------------

    def _search(self, key: int) -> ObjectId | None:
        cur = self._tree_root()
        while cur != self.nil:
            k = self._key(cur)
            if key == k:
                return cur
            cur = self._oid_at(cur, self.left_off if key < k else self.right_off)
        return None

    def insert(self, tx, key: int, value: int) -> bool:
        check_key(key)
        y = self.nil
        x = self._tree_root()
        while x != self.nil:
            k = self._key(x)
            if key == k:
                self._confirm(x, key)
                return False
            y = x
            x = self._oid_at(x, self.left_off if key < k else self.right_off)

        z = tx.alloc_zeroed(self.node_size)
        record = bytearray(self.node_size if self.mode != "auto" else self.desc.link_offset)
        if self.key_is64:
            record[0:8] = _U64.pack(key)
        else:
            record[0:4] = _U32.pack(key)
        record[self.val_off : self.val_off + 16] = encode_value(value)
        _U32.pack_into(record, self.color_off, RED)
        record[self.par_off : self.par_off + 16] = y.pack()
        record[self.left_off : self.left_off + 16] = self.nil.pack()
        record[self.right_off : self.right_off + 16] = self.nil.pack()
        tx.write(z, 0, bytes(record))
        if y == self.nil:
            tx.write(self.root, 0, z.pack())
        elif key < self._key(y):
            tx.write(y, self.left_off, z.pack())
        else:
            tx.write(y, self.right_off, z.pack())
        if self.mode == "auto" and self.version == 2 and self.change == "change":
            leds.ensure_extension(tx, self.pool, z, self.desc, 1)
        self._insert_fixup(tx, z)
        self._bump_count(tx, 1)
        self.kstats.inserts += 1
        return True

    def _insert_fixup(self, tx, z: ObjectId) -> None:
        while True:
            zp = self._oid_at(z, self.par_off)
            if zp == self.nil or self._color(zp) != RED:
                break
            zpp = self._oid_at(zp, self.par_off)
            zp_is_left = zp == self._oid_at(zpp, self.left_off)
            uncle = self._oid_at(zpp, self.right_off if zp_is_left else self.left_off)
            if uncle != self.nil and self._color(uncle) == RED:
                tx.write(zp, self.color_off, _U32.pack(BLACK))
                tx.write(uncle, self.color_off, _U32.pack(BLACK))
                tx.write(zpp, self.color_off, _U32.pack(RED))
                z = zpp
                continue
            if zp_is_left:
                if z == self._oid_at(zp, self.right_off):
                    z = zp
                    self._rotate(tx, z, left=True)
                    zp = self._oid_at(z, self.par_off)
                    zpp = self._oid_at(zp, self.par_off)
                tx.write(zp, self.color_off, _U32.pack(BLACK))
                tx.write(zpp, self.color_off, _U32.pack(RED))
                self._rotate(tx, zpp, left=False)
            else:
                if z == self._oid_at(zp, self.left_off):
                    z = zp
                    self._rotate(tx, z, left=False)
                    zp = self._oid_at(z, self.par_off)
                    zpp = self._oid_at(zp, self.par_off)
                tx.write(zp, self.color_off, _U32.pack(BLACK))
                tx.write(zpp, self.color_off, _U32.pack(RED))
                self._rotate(tx, zpp, left=True)
        troot = self._tree_root()
        if self._color(troot) != BLACK:
            tx.write(troot, self.color_off, _U32.pack(BLACK))

    def _transplant(self, tx, u: ObjectId, v: ObjectId) -> None:
        up = self._oid_at(u, self.par_off)
        if up == self.nil:
            tx.write(self.root, 0, v.pack())
        elif u == self._oid_at(up, self.left_off):
            tx.write(up, self.left_off, v.pack())
        else:
            tx.write(up, self.right_off, v.pack())
        tx.write(v, self.par_off, up.pack())  # nil's parent is legal scratch

    def remove(self, tx, key: int) -> bool:
        z = self._search(key)
        if z is None:
            return False
        self._confirm(z, key)
        y = z
        y_color = self._color(y)
        z_left = self._oid_at(z, self.left_off)
        z_right = self._oid_at(z, self.right_off)
        if z_left == self.nil:
            x = z_right
            self._transplant(tx, z, z_right)
        elif z_right == self.nil:
            x = z_left
            self._transplant(tx, z, z_left)
        else:
            y = z_right
            while (nxt := self._oid_at(y, self.left_off)) != self.nil:
                y = nxt
            y_color = self._color(y)
            x = self._oid_at(y, self.right_off)
            if self._oid_at(y, self.par_off) == z:
                tx.write(x, self.par_off, y.pack())
            else:
                self._transplant(tx, y, x)
                tx.write(y, self.right_off, z_right.pack())
                tx.write(z_right, self.par_off, y.pack())
            self._transplant(tx, z, y)
            tx.write(y, self.left_off, z_left.pack())
            tx.write(z_left, self.par_off, y.pack())
            tx.write(y, self.color_off, _U32.pack(self._color(z)))
        if y_color == BLACK:
            self._delete_fixup(tx, x)
        if self.mode == "auto":
            leds.free_extendible(tx, self.pool, z, self.desc)
        else:
            tx.free(z)
        self._bump_count(tx, -1)
        self.kstats.removes += 1
        return True

    def _delete_fixup(self, tx, x: ObjectId) -> None:
        while x != self._tree_root() and self._color(x) == BLACK:
            xp = self._oid_at(x, self.par_off)
            x_is_left = x == self._oid_at(xp, self.left_off)
            sib_off = self.right_off if x_is_left else self.left_off
            w = self._oid_at(xp, sib_off)
            if self._color(w) == RED:
                tx.write(w, self.color_off, _U32.pack(BLACK))
                tx.write(xp, self.color_off, _U32.pack(RED))
                self._rotate(tx, xp, left=x_is_left)
                w = self._oid_at(xp, sib_off)
            w_left = self._oid_at(w, self.left_off)
            w_right = self._oid_at(w, self.right_off)
            if self._color(w_left) == BLACK and self._color(w_right) == BLACK:
                tx.write(w, self.color_off, _U32.pack(RED))
                x = xp
                continue
            near, far = (w_right, w_left) if not x_is_left else (w_left, w_right)
            if self._color(far) == BLACK:
                tx.write(near, self.color_off, _U32.pack(BLACK))
                tx.write(w, self.color_off, _U32.pack(RED))
                self._rotate(tx, w, left=not x_is_left)
                w = self._oid_at(xp, sib_off)
                far = self._oid_at(w, sib_off)
            tx.write(w, self.color_off, _U32.pack(self._color(xp)))
            tx.write(xp, self.color_off, _U32.pack(BLACK))
            if far != self.nil:
                tx.write(far, self.color_off, _U32.pack(BLACK))
            self._rotate(tx, xp, left=x_is_left)
            break
        if self._color(x) != BLACK:
            tx.write(x, self.color_off, _U32.pack(BLACK))

    def lookup(self, key: int):
        node = self._search(key)
        if node is None:
            self.kstats.misses += 1
            return None
        self._confirm(node, key)
        self.kstats.hits += 1
        return decode_value(self.pool.load(node, self.val_off, 16))

    def _entry_key(self, oid: ObjectId) -> int:
        if self.mode == "auto" and self.version == 2 and self.change == "change":
            return leds.read_field(self.pool, oid, self.desc, "key64")
        return self._key(oid)

    def scan(self):
        stack = []
        cur = self._tree_root()
        while stack or cur != self.nil:
            while cur != self.nil:
                stack.append(cur)
                cur = self._oid_at(cur, self.left_off)
            cur = stack.pop()
            yield self._entry_key(cur), decode_value(self.pool.load(cur, self.val_off, 16))
            cur = self._oid_at(cur, self.right_off)

    def validate(self) -> None:
        troot = self._tree_root()
        if troot == self.nil:
            assert self.count() == 0, "count drift on empty tree"
            return
        assert self._color(troot) == BLACK, "root must be black"

        def check(oid, lo, hi):
            if oid == self.nil:
                return 1, 0
            k = self._key(oid)
            assert lo < k < hi, f"BST order violated at {k}"
            left = self._oid_at(oid, self.left_off)
            right = self._oid_at(oid, self.right_off)
            if self._color(oid) == RED:
                assert self._color(left) == BLACK and self._color(right) == BLACK, \
                    f"red node {k} has a red child"
            for child in (left, right):
                if child != self.nil:
                    assert self._oid_at(child, self.par_off) == oid, "parent link broken"
            bh_l, n_l = check(left, lo, k)
            bh_r, n_r = check(right, k, hi)
            assert bh_l == bh_r, f"black heights differ under {k}"
            return bh_l + (1 if self._color(oid) == BLACK else 0), n_l + n_r + 1

        _, size = check(troot, -1, 1 << 65)
        assert size == self.count(), f"count {self.count()} != walked {size}"


# -- manual migration --------------------------------------------------------

def migrate(pool, tx, old_root: ObjectId, temp: ObjectId, ms, change: str) -> None:
    """Clone the tree node-for-node bottom-up; one store per new record."""
    old_tree = ObjectId.unpack(pool.load(old_root, 0, 16))
    old_nil = ObjectId.unpack(pool.load(old_root, 16, 16))
    count = _U64.unpack_from(pool.load(old_root, 32, 8))[0]

    new_size = 76 if change == "change" else 88
    val_off = 8 if change == "change" else 4
    color_off = 24 if change == "change" else 20

    nil = tx.alloc_zeroed(new_size)
    nil_rec = bytearray(new_size)
    _U32.pack_into(nil_rec, color_off, BLACK)
    nil_rec[color_off + 4 : color_off + 52] = nil.pack() * 3
    tx.write(nil, 0, bytes(nil_rec))

    def clone(old_oid: ObjectId, new_parent: ObjectId) -> ObjectId:
        if old_oid == old_nil:
            return nil
        raw = pool.load(old_oid, 0, 72)
        key = _U32.unpack_from(raw)[0]
        value = raw[4:20]
        color = raw[20:24]
        new = tx.alloc_zeroed(new_size)
        left = clone(ObjectId.unpack(raw, 40), new)
        right = clone(ObjectId.unpack(raw, 56), new)
        if change == "change":
            record = _U64.pack(key) + value + color + new_parent.pack() + left.pack() + right.pack()
        else:
            record = (_U32.pack(key) + value + color + new_parent.pack()
                      + left.pack() + right.pack() + bytes(16))
        tx.write(new, 0, record)
        ms.nodes_migrated += 1
        ms.bytes_node_records += len(record)
        tx.free(old_oid)
        return new

    new_tree = clone(old_tree, nil)
    tx.free(old_nil)
    tx.write(temp, 0, new_tree.pack())
    tx.write(temp, 16, nil.pack())
    tx.write(temp, 32, _U64.pack(count))
