"""B-tree of order 8: up to 8 children and 7 live keys per node, with the
record shape declaring 8 item slots (the last is an always-free spare).

Record shapes (items array at +4, children after it):

  v1 manual         {n i32, 8 x {key u32, value 16B}, 8 links}   292 B
  v2 manual change  {n i32, 8 x {key u64, value 16B}, 8 links}   324 B
  v2 manual add     {n i32, 8 x {key u32, value, name}, 8 links} 420 B
  auto              {n i32, 8 x extendible item (48 B), 8 links} 516 B

In auto mode the embedded key-value item is the extendible unit: each item
slot carries its own trailing extension link, so one migration is one
24-byte {key64} record plus a 16-byte link store regardless of how many
items share the node. Items that move between nodes during splits, borrows
and merges either transfer their extension link verbatim (the shallow-copy
optimization) or clone-and-free the chain (the unoptimized deep copy),
selected by the kernel's shallow_copy flag. In-node shifts always transfer:
the source slot dies.
"""

from __future__ import annotations

import struct

from .. import leds
from ..pool import ObjectId
from .base import MapKernel, check_key, decode_value, encode_value

_U64 = struct.Struct("<Q")
_U32 = struct.Struct("<I")
_I32 = struct.Struct("<i")

SLOTS = 8
MAX_KEYS = 7
MIN_KEYS = 3


def auto_item_type(change: str | None) -> leds.TypeDescriptor:
    desc = leds.define_type("btree_item", [("key", "u32"), ("value", "oid")])
    if change == "change":
        desc = leds.append_extension(
            desc, [("key64", "u64")], {"op": "copy_fields", "map": {"key64": "key"}}
        )
    elif change == "add":
        desc = leds.append_extension(desc, [("name", "bytes16")], {"op": "zero"})
    return desc


class BTreeKernel(MapKernel):
    kind = "btree"

    # root: tree root oid @0, count u64 @32

    def __init__(self, pool, **kw):
        super().__init__(pool, **kw)
        if self.mode == "auto":
            self.item_desc = auto_item_type(self.change if self.version == 2 else None)
            self.stride, self.key_is64 = self.item_desc.base_size, False
            self.link_in_item = self.item_desc.link_offset
        elif self.version == 1:
            self.stride, self.key_is64 = 20, False
        elif self.change == "change":
            self.stride, self.key_is64 = 24, True
        else:
            self.stride, self.key_is64 = 36, False
        self.items_off = 4
        self.children_off = 4 + SLOTS * self.stride
        self.node_size = self.children_off + SLOTS * 16
        self.val_in_item = 8 if self.key_is64 else 4

    # -- structure ----------------------------------------------------------

    def _init_structure(self, tx) -> None:
        node = tx.alloc_zeroed(self.node_size)
        tx.write(node, 0, _I32.pack(0))
        tx.write(self.root, 0, node.pack())
        tx.write(self.root, self.COUNT_OFF, _U64.pack(0))

    def _tree_root(self) -> ObjectId:
        return self._root_oid_field(0)

    # -- node accessors --------------------------------------------------------

    def _n(self, node: ObjectId) -> int:
        return _I32.unpack(self.pool.load(node, 0, 4))[0]

    def _set_n(self, tx, node: ObjectId, n: int) -> None:
        tx.write(node, 0, _I32.pack(n))

    def _item_off(self, i: int) -> int:
        return self.items_off + i * self.stride

    def _keys(self, node: ObjectId, n: int) -> list[int]:
        if n == 0:
            return []
        raw = self.pool.load(node, self.items_off, n * self.stride)
        fmt = _U64 if self.key_is64 else _U32
        return [fmt.unpack_from(raw, i * self.stride)[0] for i in range(n)]

    def _item_raw(self, node: ObjectId, i: int) -> bytes:
        return self.pool.load(node, self._item_off(i), self.stride)

    def _put_item(self, tx, node: ObjectId, i: int, raw: bytes) -> None:
        tx.write(node, self._item_off(i), raw)

    def _move_item(self, tx, src: ObjectId, si: int, dst: ObjectId, di: int) -> None:
        """Between-node item move; honors the shallow-copy toggle in auto mode."""
        raw = self._item_raw(src, si)
        if self.mode == "auto" and not self.shallow_copy:
            link = ObjectId.unpack(raw, self.link_in_item)
            if not link.is_null():
                clone = leds.clone_extension_chain(
                    tx, self.pool, link, self.item_desc
                )
                leds.free_extension_chain(tx, self.pool, link, self.item_desc)
                raw = raw[: self.link_in_item] + clone.pack()
                self.pool.stats.deep_copies += 1
        self._put_item(tx, dst, di, raw)

    def _make_item(self, key: int, value: int) -> bytes:
        if self.key_is64:
            raw = _U64.pack(key) + encode_value(value)
        else:
            raw = _U32.pack(key) + encode_value(value)
        return raw + bytes(self.stride - len(raw))

    def _child(self, node: ObjectId, i: int) -> ObjectId:
        return ObjectId.unpack(self.pool.load(node, self.children_off + i * 16, 16))

    def _set_child(self, tx, node: ObjectId, i: int, child: ObjectId) -> None:
        tx.write(node, self.children_off + i * 16, child.pack())

    def _is_leaf(self, node: ObjectId) -> bool:
        return self._child(node, 0).is_null()

    def _confirm(self, node: ObjectId, i: int, key: int) -> None:
        if self.mode == "auto" and self.version == 2 and self.change == "change":
            k64 = leds.read_field(self.pool, node, self.item_desc, "key64",
                                  base_off=self._item_off(i))
            assert k64 == key, "key64 invariant violated"

    # -- search ------------------------------------------------------------------

    def _find(self, key: int):
        cur = self._tree_root()
        while True:
            n = self._n(cur)
            keys = self._keys(cur, n)
            pos = 0
            while pos < n and keys[pos] < key:
                pos += 1
            if pos < n and keys[pos] == key:
                return cur, pos
            if self._is_leaf(cur):
                return None
            cur = self._child(cur, pos)

    def lookup(self, key: int):
        found = self._find(key)
        if found is None:
            self.kstats.misses += 1
            return None
        node, pos = found
        self._confirm(node, pos, key)
        self.kstats.hits += 1
        raw = self.pool.load(node, self._item_off(pos) + self.val_in_item, 16)
        return decode_value(raw)

    # -- insert --------------------------------------------------------------------

    def insert(self, tx, key: int, value: int) -> bool:
        check_key(key)
        if self._find(key) is not None:
            node, pos = self._find(key)
            self._confirm(node, pos, key)
            return False
        troot = self._tree_root()
        if self._n(troot) == MAX_KEYS:
            new_root = tx.alloc_zeroed(self.node_size)
            self._set_child(tx, new_root, 0, troot)
            self._split_child(tx, new_root, 0)
            tx.write(self.root, 0, new_root.pack())
            troot = new_root
        self._insert_nonfull(tx, troot, key, value)
        self._bump_count(tx, 1)
        self.kstats.inserts += 1
        return True

    def _insert_nonfull(self, tx, cur: ObjectId, key: int, value: int) -> None:
        while True:
            n = self._n(cur)
            keys = self._keys(cur, n)
            pos = 0
            while pos < n and keys[pos] < key:
                pos += 1
            if self._is_leaf(cur):
                for j in range(n - 1, pos - 1, -1):
                    self._put_item(tx, cur, j + 1, self._item_raw(cur, j))
                self._put_item(tx, cur, pos, self._make_item(key, value))
                self._set_n(tx, cur, n + 1)
                if self.mode == "auto" and self.version == 2 and self.change == "change":
                    leds.ensure_extension(tx, self.pool, cur, self.item_desc, 1,
                                          base_off=self._item_off(pos))
                return
            child = self._child(cur, pos)
            if self._n(child) == MAX_KEYS:
                self._split_child(tx, cur, pos)
                if key > self._keys(cur, self._n(cur))[pos]:
                    pos += 1
                child = self._child(cur, pos)
            cur = child

    def _split_child(self, tx, parent: ObjectId, i: int) -> None:
        child = self._child(parent, i)
        right = tx.alloc_zeroed(self.node_size)
        for j in range(MIN_KEYS):
            self._move_item(tx, child, MIN_KEYS + 1 + j, right, j)
        if not self._is_leaf(child):
            for j in range(MIN_KEYS + 1):
                self._set_child(tx, right, j, self._child(child, MIN_KEYS + 1 + j))
        self._set_n(tx, right, MIN_KEYS)
        pn = self._n(parent)
        for j in range(pn - 1, i - 1, -1):
            self._put_item(tx, parent, j + 1, self._item_raw(parent, j))
        for j in range(pn, i, -1):
            self._set_child(tx, parent, j + 1, self._child(parent, j))
        self._move_item(tx, child, MIN_KEYS, parent, i)
        self._set_child(tx, parent, i + 1, right)
        self._set_n(tx, parent, pn + 1)
        self._set_n(tx, child, MIN_KEYS)

    # -- delete ----------------------------------------------------------------------

    def remove(self, tx, key: int) -> bool:
        found = self._find(key)
        if found is None:
            return False
        self._confirm(found[0], found[1], key)
        troot = self._tree_root()
        self._delete_from(tx, troot, key)
        if self._n(troot) == 0 and not self._is_leaf(troot):
            tx.write(self.root, 0, self._child(troot, 0).pack())
            tx.free(troot)
        self._bump_count(tx, -1)
        self.kstats.removes += 1
        return True

    def _free_item_chain(self, tx, raw: bytes) -> None:
        if self.mode != "auto":
            return
        link = ObjectId.unpack(raw, self.link_in_item)
        if not link.is_null():
            leds.free_extension_chain(tx, self.pool, link, self.item_desc)

    def _delete_from(self, tx, cur: ObjectId, key: int) -> None:
        n = self._n(cur)
        keys = self._keys(cur, n)
        pos = 0
        while pos < n and keys[pos] < key:
            pos += 1
        if pos < n and keys[pos] == key:
            if self._is_leaf(cur):
                self._free_item_chain(tx, self._item_raw(cur, pos))
                for j in range(pos + 1, n):
                    self._put_item(tx, cur, j - 1, self._item_raw(cur, j))
                self._set_n(tx, cur, n - 1)
                return
            left, right = self._child(cur, pos), self._child(cur, pos + 1)
            if self._n(left) > MIN_KEYS:
                raw = self._extract_edge(tx, left, last=True)
                self._free_item_chain(tx, self._item_raw(cur, pos))
                self._put_item(tx, cur, pos, raw)
            elif self._n(right) > MIN_KEYS:
                raw = self._extract_edge(tx, right, last=False)
                self._free_item_chain(tx, self._item_raw(cur, pos))
                self._put_item(tx, cur, pos, raw)
            else:
                self._merge(tx, cur, pos)
                self._delete_from(tx, left, key)
            return
        # not in this node
        child = self._child(cur, pos)
        if self._n(child) == MIN_KEYS:
            pos = self._fill(tx, cur, pos)
            child = self._child(cur, pos)
        self._delete_from(tx, child, key)

    def _extract_edge(self, tx, cur: ObjectId, *, last: bool) -> bytes:
        """Detach and return the max (or min) item of a subtree, refilling on
        the way down; the caller takes over the item's extension chain."""
        while not self._is_leaf(cur):
            n = self._n(cur)
            idx = n if last else 0
            child = self._child(cur, idx)
            if self._n(child) == MIN_KEYS:
                idx = self._fill(tx, cur, idx)
                child = self._child(cur, idx)
            cur = child
        n = self._n(cur)
        i = n - 1 if last else 0
        raw = self._item_raw(cur, i)
        if not last:
            for j in range(1, n):
                self._put_item(tx, cur, j - 1, self._item_raw(cur, j))
        self._set_n(tx, cur, n - 1)
        return raw

    def _fill(self, tx, parent: ObjectId, i: int) -> int:
        """Give child i more than MIN_KEYS; returns its possibly shifted index."""
        if i > 0 and self._n(self._child(parent, i - 1)) > MIN_KEYS:
            self._borrow_prev(tx, parent, i)
            return i
        if i < self._n(parent) and self._n(self._child(parent, i + 1)) > MIN_KEYS:
            self._borrow_next(tx, parent, i)
            return i
        if i < self._n(parent):
            self._merge(tx, parent, i)
            return i
        self._merge(tx, parent, i - 1)
        return i - 1

    def _borrow_prev(self, tx, parent: ObjectId, i: int) -> None:
        child, sib = self._child(parent, i), self._child(parent, i - 1)
        cn, sn = self._n(child), self._n(sib)
        for j in range(cn - 1, -1, -1):
            self._put_item(tx, child, j + 1, self._item_raw(child, j))
        if not self._is_leaf(child):
            for j in range(cn, -1, -1):
                self._set_child(tx, child, j + 1, self._child(child, j))
            self._set_child(tx, child, 0, self._child(sib, sn))
        self._move_item(tx, parent, i - 1, child, 0)
        self._move_item(tx, sib, sn - 1, parent, i - 1)
        self._set_n(tx, child, cn + 1)
        self._set_n(tx, sib, sn - 1)

    def _borrow_next(self, tx, parent: ObjectId, i: int) -> None:
        child, sib = self._child(parent, i), self._child(parent, i + 1)
        cn, sn = self._n(child), self._n(sib)
        self._move_item(tx, parent, i, child, cn)
        self._move_item(tx, sib, 0, parent, i)
        if not self._is_leaf(child):
            self._set_child(tx, child, cn + 1, self._child(sib, 0))
            for j in range(1, sn + 1):
                self._set_child(tx, sib, j - 1, self._child(sib, j))
        for j in range(1, sn):
            self._put_item(tx, sib, j - 1, self._item_raw(sib, j))
        self._set_n(tx, child, cn + 1)
        self._set_n(tx, sib, sn - 1)

    def _merge(self, tx, parent: ObjectId, i: int) -> None:
        left, right = self._child(parent, i), self._child(parent, i + 1)
        ln, rn = self._n(left), self._n(right)
        self._move_item(tx, parent, i, left, ln)
        for j in range(rn):
            self._move_item(tx, right, j, left, ln + 1 + j)
        if not self._is_leaf(right):
            for j in range(rn + 1):
                self._set_child(tx, left, ln + 1 + j, self._child(right, j))
        self._set_n(tx, left, ln + 1 + rn)
        pn = self._n(parent)
        for j in range(i + 1, pn):
            self._put_item(tx, parent, j - 1, self._item_raw(parent, j))
        for j in range(i + 2, pn + 1):
            self._set_child(tx, parent, j - 1, self._child(parent, j))
        self._set_n(tx, parent, pn - 1)
        tx.free(right)

    # -- scan / validate ------------------------------------------------------------

    def _entry_key(self, node: ObjectId, i: int) -> int:
        if self.mode == "auto" and self.version == 2 and self.change == "change":
            return leds.read_field(self.pool, node, self.item_desc, "key64",
                                   base_off=self._item_off(i))
        raw = self.pool.load(node, self._item_off(i), 8 if self.key_is64 else 4)
        return (_U64 if self.key_is64 else _U32).unpack(raw)[0]

    def scan(self):
        def walk(cur):
            n = self._n(cur)
            leaf = self._is_leaf(cur)
            for i in range(n):
                if not leaf:
                    yield from walk(self._child(cur, i))
                val = self.pool.load(cur, self._item_off(i) + self.val_in_item, 16)
                yield self._entry_key(cur, i), decode_value(val)
            if not leaf:
                yield from walk(self._child(cur, n))

        troot = self._tree_root()
        if self._n(troot) > 0:
            yield from walk(troot)

    def validate(self) -> None:
        troot = self._tree_root()

        def check(cur, lo, hi, is_root):
            n = self._n(cur)
            keys = self._keys(cur, n)
            assert n <= MAX_KEYS, f"node over capacity: {n}"
            if not is_root:
                assert n >= MIN_KEYS, f"node under occupancy: {n}"
            assert keys == sorted(set(keys)), "keys not strictly ascending"
            if keys:
                assert lo < keys[0] and keys[-1] < hi, "key range violated"
            if self.mode == "auto" and self.version == 2 and self.change == "change":
                for i in range(n):
                    k64 = _peek_item_key64(self.pool, cur, self._item_off(i),
                                           self.link_in_item)
                    if k64 is not None:
                        assert k64 == keys[i], "key64 invariant violated"
            if self._is_leaf(cur):
                return 1, n
            depth = None
            total = n
            bounds = [lo] + keys + [hi]
            for i in range(n + 1):
                d, c = check(self._child(cur, i), bounds[i], bounds[i + 1], False)
                assert depth is None or d == depth, "leaves at different depths"
                depth = d
                total += c
            return depth + 1, total

        _, total = check(troot, -1, 1 << 65, True)
        assert total == self.count(), f"count {self.count()} != walked {total}"


def _peek_item_key64(pool, node, item_off, link_off):
    uuid, target = struct.unpack_from("<QQ", pool.buf, node.offset + item_off + link_off)
    if uuid == 0 and target == 0:
        return None
    return _U64.unpack_from(pool.buf, target)[0]


# -- manual migration --------------------------------------------------------

def migrate(pool, tx, old_root: ObjectId, temp: ObjectId, ms, change: str) -> None:
    """Clone the tree node-for-node (same shape, same occupancy); children
    first so every new record is written with a single store."""
    old_tree = ObjectId.unpack(pool.load(old_root, 0, 16))
    count = _U64.unpack_from(pool.load(old_root, 32, 8))[0]

    old_stride, old_items, old_children = 20, 4, 4 + SLOTS * 20
    if change == "change":
        new_stride, new_size = 24, 324
    else:
        new_stride, new_size = 36, 420
    new_children = 4 + SLOTS * new_stride

    def clone(old: ObjectId) -> ObjectId:
        raw = pool.load(old, 0, 292)
        n = _I32.unpack_from(raw)[0]
        record = bytearray(new_size)
        _I32.pack_into(record, 0, n)
        for i in range(n):
            base = old_items + i * old_stride
            key = _U32.unpack_from(raw, base)[0]
            value = raw[base + 4 : base + 20]
            dst = 4 + i * new_stride
            if change == "change":
                record[dst : dst + 8] = _U64.pack(key)
                record[dst + 8 : dst + 24] = value
            else:
                record[dst : dst + 4] = _U32.pack(key)
                record[dst + 4 : dst + 20] = value
        first_child = ObjectId.unpack(raw, old_children)
        if not first_child.is_null():
            for i in range(n + 1):
                child = ObjectId.unpack(raw, old_children + i * 16)
                new_child = clone(child)
                dst = new_children + i * 16
                record[dst : dst + 16] = new_child.pack()
        new = tx.alloc_zeroed(new_size)
        tx.write(new, 0, bytes(record))
        ms.nodes_migrated += 1
        ms.bytes_node_records += new_size
        tx.free(old)
        return new

    new_tree = clone(old_tree)
    tx.write(temp, 0, new_tree.pack())
    tx.write(temp, 32, _U64.pack(count))
