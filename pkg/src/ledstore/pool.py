"""Memory-mapped persistent object pool with stable 128-bit object ids.

File layout (all fields little-endian):

  [0, 4096)                      header page, fixed offsets below
  [heap_offset, +log_capacity)   undo-log region (see txn.py)
  [blocks_offset, capacity)      object heap

The object heap is a sequence of blocks: a 16-byte block header
{payload_size u64, status u64} followed by the payload. Payloads are
16-byte aligned and sized in 16-byte multiples, so ObjectId offsets
(absolute file offset of a payload) are always 16-byte aligned. A zero
size marks the bump frontier. The allocator keeps exact-size free lists
over the frontier and is rebuilt by scanning block headers on open, so
no separate allocator state needs to be persisted or kept crash-safe.

Free blocks always hold zeroed payloads: payloads are zeroed when a block
is returned to the allocator and when a pending allocation is rolled back.
That invariant is what lets abort and crash recovery restore byte-identical
heap images without snapshotting payloads.

Header fields:

  0   magic "LEDSPOOL"
  8   format_version u32
  16  layout_name, 64 bytes zero-padded
  80  layout_version u32
  88  pool_uuid u64
  96  root_id (pool_uuid u64 + offset u64)
  112 root_size u64
  120 heap_offset u64 (default 4096)
  128 capacity u64
  136 allocator_state_offset u64 (start of the scannable block region)
  144 log_state u64 (status byte << 56 | bytes used)
  152 log_capacity u64
  160 schema_fingerprint u64

Handles are single-threaded and exclusive: a sidecar ".lock" file enforces
one live handle per pool file.
"""

from __future__ import annotations

import mmap
import os
import secrets
import struct
from typing import NamedTuple

from .errors import (
    AlreadyExists,
    BadMagic,
    CapacityTooSmall,
    DoubleFree,
    ForeignPool,
    IoError,
    LayoutMismatch,
    OutOfBounds,
    OutOfSpace,
    PoolLocked,
    SimulatedCrash,
    TxStateError,
)
from .stats import WriteStats

MAGIC = b"LEDSPOOL"
FORMAT_VERSION = 1
HEADER_SIZE = 4096
DEFAULT_HEAP_OFFSET = 4096
MIN_CAPACITY = 1 << 20
ALIGN = 16
BLOCK_HDR_SIZE = 16

# block status words
ST_ALLOCATED = 0xA110CA7E
ST_FREE = 0xF4EEB10C

# header field offsets
OFF_MAGIC = 0
OFF_FORMAT = 8
OFF_NAME = 16
NAME_SIZE = 64
OFF_LAYOUT_VER = 80
OFF_UUID = 88
OFF_ROOT = 96
OFF_ROOT_SIZE = 112
OFF_HEAP = 120
OFF_CAPACITY = 128
OFF_BLOCKS = 136
OFF_LOG_STATE = 144
OFF_LOG_CAP = 152
OFF_FPRINT = 160

# log-state status byte
LOG_IDLE = 0
LOG_ACTIVE = 1
LOG_COMMITTING = 2

_U64 = struct.Struct("<Q")
_2U64 = struct.Struct("<QQ")
_U32 = struct.Struct("<I")

_ZEROS = bytes(1 << 16)


def _round16(n: int) -> int:
    return (n + 15) & ~15


class ObjectId(NamedTuple):
    """Persistent reference: pool identity token + absolute payload offset."""

    pool_uuid: int
    offset: int

    def pack(self) -> bytes:
        return _2U64.pack(self.pool_uuid, self.offset)

    @classmethod
    def unpack(cls, data: bytes, off: int = 0) -> "ObjectId":
        return cls(*_2U64.unpack_from(data, off))

    def is_null(self) -> bool:
        return self.pool_uuid == 0 and self.offset == 0


NULL_OID = ObjectId(0, 0)


class CrashPlan:
    """Fires a SimulatedCrash instead of performing the Nth persistent store."""

    __slots__ = ("trigger", "armed")

    def __init__(self, trigger: int):
        if trigger < 1:
            raise ValueError("crash trigger must be >= 1")
        self.trigger = trigger
        self.armed = True


class _Allocator:
    """Volatile view of the block heap: exact-size free lists + bump frontier."""

    __slots__ = ("block_size", "allocated", "free_lists", "frontier", "live_bytes")

    def __init__(self) -> None:
        self.block_size: dict[int, int] = {}   # payload offset -> rounded size
        self.allocated: set[int] = set()
        self.free_lists: dict[int, list[int]] = {}
        self.frontier = 0
        self.live_bytes = 0

    def scan(self, buf, blocks_off: int, capacity: int) -> None:
        self.block_size.clear()
        self.allocated.clear()
        self.free_lists.clear()
        self.live_bytes = 0
        off = blocks_off
        unpack = _2U64.unpack_from
        while off + BLOCK_HDR_SIZE <= capacity:
            size, status = unpack(buf, off)
            if size == 0:
                break
            payload = off + BLOCK_HDR_SIZE
            self.block_size[payload] = size
            if status == ST_ALLOCATED:
                self.allocated.add(payload)
                self.live_bytes += size
            else:
                self.free_lists.setdefault(size, []).append(payload)
            off = payload + size
        self.frontier = off

    def take(self, size: int, capacity: int) -> tuple[int, bool]:
        """Pick a payload offset for `size` (rounded) bytes.

        Returns (payload_offset, from_frontier). Does not touch the file.
        """
        lst = self.free_lists.get(size)
        if lst:
            return lst.pop(), False
        payload = self.frontier + BLOCK_HDR_SIZE
        if payload + size > capacity:
            raise OutOfSpace(
                f"heap exhausted: need {size} bytes at {self.frontier}, capacity {capacity}"
            )
        return payload, True

    def commit_take(self, payload: int, size: int) -> None:
        self.block_size[payload] = size
        self.allocated.add(payload)
        self.live_bytes += size
        if payload + size > self.frontier:
            self.frontier = payload + size

    def release(self, payload: int) -> None:
        size = self.block_size[payload]
        self.allocated.discard(payload)
        self.live_bytes -= size
        self.free_lists.setdefault(size, []).append(payload)


class PoolHandle:
    """An open, memory-mapped pool. Confine to one thread; one per file."""

    def __init__(self, path: str, fileobj, buf):
        self.path = path
        self._file = fileobj
        self.buf = buf
        self.stats = WriteStats()
        self.closed = False
        self._active_tx = None
        self._crash_plan: CrashPlan | None = None
        self._write_ordinal = 0
        self.commit_ordinals: list[int] = []
        self.on_commit = None          # optional callable, invoked after truncation
        self.translation_cache_enabled = False
        self._xlat_cache: dict[int, tuple[int, int]] = {}

        self._alloc = _Allocator()
        # header views are read on demand; hot fields cached below
        self.pool_uuid = self._read_u64(OFF_UUID)
        self.capacity = self._read_u64(OFF_CAPACITY)
        self.heap_offset = self._read_u64(OFF_HEAP)
        self.blocks_offset = self._read_u64(OFF_BLOCKS)
        self.log_capacity = self._read_u64(OFF_LOG_CAP)

    # ------------------------------------------------------------------ raw io

    def _read_u64(self, off: int) -> int:
        return _U64.unpack_from(self.buf, off)[0]

    def _store(self, off: int, data: bytes, category: str) -> None:
        """Single choke point for every persistent store: counted, crash-checked."""
        if self.closed:
            raise TxStateError("handle is closed")
        plan = self._crash_plan
        if plan is not None and plan.armed:
            self._write_ordinal += 1
            if self._write_ordinal >= plan.trigger:
                plan.armed = False
                self._die()
                raise SimulatedCrash(
                    f"simulated crash at persistent write #{self._write_ordinal}"
                )
        else:
            self._write_ordinal += 1
        self.buf[off : off + len(data)] = data
        st = self.stats
        if category == "user":
            st.bytes_user += len(data)
        elif category == "log":
            st.bytes_log += len(data)
        else:
            st.bytes_meta += len(data)
        st.flush_events += 1

    def _store_zeros(self, off: int, length: int, category: str) -> None:
        while length > len(_ZEROS):
            self._store(off, _ZEROS, category)
            off += len(_ZEROS)
            length -= len(_ZEROS)
        if length:
            self._store(off, _ZEROS[:length], category)

    def _die(self) -> None:
        """Simulated process death: drop the handle, keep the file as-is."""
        self.closed = True
        try:
            self.buf.flush()
            self.buf.close()
            self._file.close()
        finally:
            _unlock(self.path)

    # ------------------------------------------------------------------ header

    @property
    def layout_name(self) -> str:
        raw = bytes(self.buf[OFF_NAME : OFF_NAME + NAME_SIZE])
        return raw.rstrip(b"\0").decode("utf-8")

    @property
    def layout_version(self) -> int:
        return _U32.unpack_from(self.buf, OFF_LAYOUT_VER)[0]

    def set_layout_version(self, version: int) -> None:
        if self._active_tx is not None:
            self._active_tx.write_header(OFF_LAYOUT_VER, _U32.pack(version))
        else:
            self._store(OFF_LAYOUT_VER, _U32.pack(version), "meta")

    @property
    def schema_fingerprint(self) -> int:
        return self._read_u64(OFF_FPRINT)

    def set_schema_fingerprint(self, fp: int) -> None:
        self._store(OFF_FPRINT, _U64.pack(fp), "meta")

    @property
    def root_id(self) -> ObjectId:
        return ObjectId.unpack(self.buf, OFF_ROOT)

    @property
    def root_size(self) -> int:
        return self._read_u64(OFF_ROOT_SIZE)

    @property
    def log_state(self) -> tuple[int, int]:
        word = self._read_u64(OFF_LOG_STATE)
        return word >> 56, word & ((1 << 56) - 1)

    def _set_log_state(self, status: int, used: int) -> None:
        self._store(OFF_LOG_STATE, _U64.pack((status << 56) | used), "meta")

    # ------------------------------------------------------------------ oids

    def _resolve(self, oid: ObjectId) -> tuple[int, int]:
        """Validate an id and return (address, payload size).

        With the translation cache enabled, repeated resolutions of one id
        within a transaction skip the whole validation sequence (hits are
        keyed by offset and trust the earlier validation, like a direct
        pointer would); only misses count toward the translation counter.
        """
        if self.translation_cache_enabled:
            hit = self._xlat_cache.get(oid.offset)
            if hit is not None:
                return hit
        if oid.pool_uuid != self.pool_uuid:
            if oid.pool_uuid == 0 and oid.offset == 0:
                raise OutOfBounds("null ObjectId")
            raise ForeignPool(f"id from pool {oid.pool_uuid:#x}, this is {self.pool_uuid:#x}")
        size = self._alloc.block_size.get(oid.offset)
        if size is None or oid.offset not in self._alloc.allocated:
            raise OutOfBounds(f"offset {oid.offset} is not an allocated payload")
        self.stats.translations += 1
        if self.translation_cache_enabled:
            self._xlat_cache[oid.offset] = (oid.offset, size)
        return oid.offset, size

    def translate(self, oid: ObjectId) -> int:
        """Resolve an ObjectId to its session address (absolute buffer offset)."""
        return self._resolve(oid)[0]

    def object_size(self, oid: ObjectId) -> int:
        return self._resolve(oid)[1]

    def _check_range(self, oid: ObjectId, off: int, length: int) -> int:
        addr, size = self._resolve(oid)
        if off < 0 or length < 0 or off + length > size:
            raise OutOfBounds(f"range [{off}, {off + length}) outside {size}-byte payload")
        return addr + off

    # ------------------------------------------------------------------ data access

    def load(self, oid: ObjectId, off: int, length: int) -> bytes:
        addr = self._check_range(oid, off, length)
        return bytes(self.buf[addr : addr + length])

    def store(self, oid: ObjectId, off: int, data: bytes, category: str = "user") -> None:
        """Direct (non-transactional) store. Refused while a transaction is open."""
        if self._active_tx is not None:
            raise TxStateError("use the active transaction's write()")
        addr = self._check_range(oid, off, len(data))
        self._store(addr, data, category)

    # ------------------------------------------------------------------ allocation

    def raw_alloc(self, size: int, zeroed: bool = True) -> ObjectId:
        """Immediate allocation, not crash-protected (transactions use tx.alloc_zeroed)."""
        if self._active_tx is not None:
            raise TxStateError("use the active transaction's alloc_zeroed()")
        if size <= 0:
            raise OutOfSpace("allocation size must be positive")
        rsize = _round16(size)
        payload, _ = self._alloc.take(rsize, self.capacity)
        self._store(payload - BLOCK_HDR_SIZE, _2U64.pack(rsize, ST_ALLOCATED), "meta")
        self._alloc.commit_take(payload, rsize)
        self.stats.n_allocs += 1
        # free blocks are already zeroed; the flag is honored structurally
        return ObjectId(self.pool_uuid, payload)

    def raw_free(self, oid: ObjectId) -> None:
        if self._active_tx is not None:
            raise TxStateError("use the active transaction's free()")
        self._check_owned_for_free(oid)
        payload = oid.offset
        size = self._alloc.block_size[payload]
        self._store_zeros(payload, size, "meta")
        self._store(payload - BLOCK_HDR_SIZE + 8, _U64.pack(ST_FREE), "meta")
        self._alloc.release(payload)
        self.stats.n_frees += 1

    def _check_owned_for_free(self, oid: ObjectId) -> None:
        if oid.pool_uuid != self.pool_uuid:
            raise ForeignPool("id belongs to a different pool")
        if oid.offset not in self._alloc.block_size:
            raise OutOfBounds(f"offset {oid.offset} was never a payload")
        if oid.offset not in self._alloc.allocated:
            raise DoubleFree(f"offset {oid.offset} is already free")

    @property
    def live_bytes(self) -> int:
        return self._alloc.live_bytes

    @property
    def allocated_objects(self) -> int:
        return len(self._alloc.allocated)

    # ------------------------------------------------------------------ root object

    def get_root(self, requested_size: int) -> ObjectId:
        """Create or grow the pool's root object.

        A grown root keeps the old contents as a prefix and zero-fills the
        tail; the old root block is freed. Runs in the active transaction,
        or in an internal one so the swap is failure-atomic either way.
        """
        if requested_size <= 0:
            raise OutOfBounds("root size must be positive")
        root = self.root_id
        if not root.is_null() and requested_size <= self.root_size:
            return root

        from .txn import Transaction

        tx = self._active_tx
        own_tx = tx is None
        if own_tx:
            tx = Transaction(self)
        new_root = tx.alloc_zeroed(requested_size)
        if not root.is_null():
            tx.copy_bytes(new_root, 0, root, 0, min(self.root_size, requested_size))
            tx.free(root)
        tx.write_header(OFF_ROOT, new_root.pack())
        tx.write_header(OFF_ROOT_SIZE, _U64.pack(requested_size))
        if own_tx:
            tx.commit()
        return new_root

    # ------------------------------------------------------------------ transactions

    def tx_begin(self):
        from .txn import Transaction

        return Transaction(self)

    def arm_crash(self, plan: CrashPlan) -> None:
        self._crash_plan = plan
        self._write_ordinal = 0

    def disarm_crash(self) -> None:
        self._crash_plan = None

    # ------------------------------------------------------------------ lifecycle

    def close(self) -> None:
        if self.closed:
            return
        if self._active_tx is not None:
            raise TxStateError("close with an open transaction")
        self.closed = True
        self.buf.flush()
        self.buf.close()
        self._file.close()
        _unlock(self.path)

    def __enter__(self) -> "PoolHandle":
        return self

    def __exit__(self, *exc) -> None:
        if not self.closed:
            self.close()


# ---------------------------------------------------------------------- locking

def _lock_path(path: str) -> str:
    return path + ".lock"


def _lock(path: str) -> None:
    try:
        fd = os.open(_lock_path(path), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise PoolLocked(f"{path} already has a live handle") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)


def _unlock(path: str) -> None:
    try:
        os.unlink(_lock_path(path))
    except FileNotFoundError:
        pass


# ---------------------------------------------------------------------- lifecycle api

def _default_log_capacity(capacity: int) -> int:
    return min(max(capacity // 8, 256 * 1024), 64 * 1024 * 1024)


def create_pool(
    path: str,
    layout_name: str,
    capacity: int,
    *,
    log_capacity: int | None = None,
) -> PoolHandle:
    name_bytes = layout_name.encode("utf-8")
    if len(name_bytes) > NAME_SIZE - 1:
        raise LayoutMismatch(f"layout name longer than {NAME_SIZE - 1} bytes")
    if capacity < MIN_CAPACITY:
        raise CapacityTooSmall(f"capacity {capacity} below minimum {MIN_CAPACITY}")
    if os.path.exists(path) and os.path.getsize(path) > 0:
        raise AlreadyExists(f"{path} exists and is not empty")
    if log_capacity is None:
        log_capacity = _default_log_capacity(capacity)
    log_capacity = _round16(log_capacity)
    blocks_offset = DEFAULT_HEAP_OFFSET + log_capacity
    if blocks_offset + BLOCK_HDR_SIZE + ALIGN >= capacity:
        raise CapacityTooSmall("capacity leaves no room for the object heap")

    _lock(path)
    try:
        f = open(path, "w+b")
        f.truncate(capacity)
        buf = mmap.mmap(f.fileno(), capacity)
    except OSError as e:
        _unlock(path)
        raise IoError(str(e)) from e

    handle = PoolHandle(path, f, buf)
    handle._alloc.frontier = blocks_offset
    uuid = secrets.randbits(64) | 1  # never zero: zero means null
    header = bytearray(HEADER_SIZE)
    header[OFF_MAGIC : OFF_MAGIC + 8] = MAGIC
    _U32.pack_into(header, OFF_FORMAT, FORMAT_VERSION)
    header[OFF_NAME : OFF_NAME + len(name_bytes)] = name_bytes
    _U32.pack_into(header, OFF_LAYOUT_VER, 1)
    _U64.pack_into(header, OFF_UUID, uuid)
    _U64.pack_into(header, OFF_HEAP, DEFAULT_HEAP_OFFSET)
    _U64.pack_into(header, OFF_CAPACITY, capacity)
    _U64.pack_into(header, OFF_BLOCKS, blocks_offset)
    _U64.pack_into(header, OFF_LOG_CAP, log_capacity)
    handle._store(0, bytes(header), "meta")
    handle.pool_uuid = uuid
    handle.capacity = capacity
    handle.heap_offset = DEFAULT_HEAP_OFFSET
    handle.blocks_offset = blocks_offset
    handle.log_capacity = log_capacity
    return handle


def _map_existing(path: str) -> PoolHandle:
    if not os.path.exists(path):
        raise IoError(f"{path} does not exist")
    _lock(path)
    try:
        f = open(path, "r+b")
        size = os.path.getsize(path)
        if size < HEADER_SIZE:
            raise BadMagic(f"{path} is too small to be a pool")
        buf = mmap.mmap(f.fileno(), size)
    except BadMagic:
        _unlock(path)
        raise
    except OSError as e:
        _unlock(path)
        raise IoError(str(e)) from e
    if bytes(buf[OFF_MAGIC : OFF_MAGIC + 8]) != MAGIC:
        buf.close()
        f.close()
        _unlock(path)
        raise BadMagic(f"{path} is not a pool file")
    return PoolHandle(path, f, buf)


def open_pool(path: str, layout_name: str) -> PoolHandle:
    """Open an existing pool, recovering any interrupted transaction first."""
    handle = recover(path)
    stored = handle.layout_name
    if stored != layout_name:
        handle.close()
        raise LayoutMismatch(f"pool holds layout {stored!r}, requested {layout_name!r}")
    return handle


def recover(path: str) -> PoolHandle:
    """Open without the layout-name check, rolling back or finishing the log."""
    handle = _map_existing(path)
    from .txn import recover_log

    recover_log(handle)
    handle._alloc.scan(handle.buf, handle.blocks_offset, handle.capacity)
    return handle


def delete_pool(path: str) -> None:
    if os.path.exists(_lock_path(path)):
        raise IoError(f"{path} has a live handle")
    try:
        os.unlink(path)
    except OSError as e:
        raise IoError(str(e)) from e
