"""Failure-atomic transactions over a pool, with crash injection and recovery.

One flat undo log lives in the pool's log region. Every record is

    {kind u32, body_len u32, target u64, aux u64} + body

  SNAP  (kind 1): body = prior bytes at `target`; rollback restores them.
  ALLOC (kind 2): aux = rounded payload size, body = prior 16-byte block
                  header; rollback restores the header and zeroes the
                  payload (free blocks are kept zeroed, see pool.py).
  FREE  (kind 3): deferred free of the payload at `target`; executed only
                  after the commit point, idempotently re-executed if a
                  crash lands between commit and truncation.

The commit point is a single 8-byte store of the log-state word
(status=COMMITTING). Recovery rolls an ACTIVE log back in reverse order,
finishes a COMMITTING log forward, then truncates. Writes into blocks
allocated by the same transaction skip snapshotting: rollback reclaims and
zeroes the whole block anyway.

Nesting is rejected; the handle owns at most one active transaction.
"""

from __future__ import annotations

import struct

from .errors import (
    DoubleFree,
    NestedTransaction,
    OutOfBounds,
    OutOfSpace,
    TxStateError,
)
from .pool import (
    BLOCK_HDR_SIZE,
    LOG_ACTIVE,
    LOG_COMMITTING,
    LOG_IDLE,
    ObjectId,
    PoolHandle,
    ST_ALLOCATED,
    ST_FREE,
    _round16,
)

REC_SNAP = 1
REC_ALLOC = 2
REC_FREE = 3

REC_HDR_SIZE = 24
_REC_HDR = struct.Struct("<IIQQ")
_U64 = struct.Struct("<Q")
_2U64 = struct.Struct("<QQ")

TX_ACTIVE = "active"
TX_COMMITTED = "committed"
TX_ABORTED = "aborted"


class Transaction:
    """Undo-log scope: all-or-nothing stores, allocations, and frees."""

    def __init__(self, pool: PoolHandle):
        if pool._active_tx is not None:
            raise NestedTransaction("a transaction is already active on this handle")
        if pool.closed:
            raise TxStateError("handle is closed")
        self.pool = pool
        self.state = TX_ACTIVE
        self._log_used = 0
        self._records: list[tuple[int, int, int, bytes]] = []
        self._fresh: set[int] = set()       # payload offsets allocated here
        self._freed: set[int] = set()       # payload offsets pending free
        self._pending_frees: list[int] = []
        self._covered: set[tuple[int, int]] = set()
        pool._active_tx = self
        pool._xlat_cache.clear()

    # ------------------------------------------------------------------ log

    def _append(self, kind: int, target: int, aux: int, body: bytes) -> None:
        pool = self.pool
        rec_off = pool.heap_offset + self._log_used
        total = REC_HDR_SIZE + len(body)
        if self._log_used + total > pool.log_capacity:
            raise OutOfSpace(
                f"undo log full ({pool.log_capacity} bytes); "
                "larger log_capacity needed for this transaction"
            )
        pool._store(rec_off, _REC_HDR.pack(kind, len(body), target, aux) + body, "log")
        self._log_used += total
        pool._set_log_state(LOG_ACTIVE, self._log_used)
        self._records.append((kind, target, aux, body))

    def _require_active(self) -> None:
        if self.state != TX_ACTIVE:
            raise TxStateError(f"transaction is {self.state}")

    # ------------------------------------------------------------------ ops

    def snapshot_range(self, oid: ObjectId, off: int, length: int) -> None:
        """Log prior bytes so later in-place stores to the range can be undone."""
        self._require_active()
        addr = self.pool._check_range(oid, off, length)
        if oid.offset in self._fresh:
            return
        old = bytes(self.pool.buf[addr : addr + length])
        self._append(REC_SNAP, addr, 0, old)
        self._covered.add((addr, length))

    def write(self, oid: ObjectId, off: int, data: bytes, category: str = "user") -> None:
        self._require_active()
        addr = self.pool._check_range(oid, off, len(data))
        if oid.offset not in self._fresh and (addr, len(data)) not in self._covered:
            old = bytes(self.pool.buf[addr : addr + len(data)])
            self._append(REC_SNAP, addr, 0, old)
            self._covered.add((addr, len(data)))
        self.pool._store(addr, data, category)

    def store_covered(self, oid: ObjectId, off: int, data: bytes, category: str = "user") -> None:
        """Store without snapshotting; caller guarantees the range is fresh or snapshotted."""
        self._require_active()
        addr = self.pool._check_range(oid, off, len(data))
        self.pool._store(addr, data, category)

    def write_header(self, off: int, data: bytes) -> None:
        """Snapshotted store into the header page (root id, layout version)."""
        self._require_active()
        old = bytes(self.pool.buf[off : off + len(data)])
        self._append(REC_SNAP, off, 0, old)
        self.pool._store(off, data, "meta")

    def copy_bytes(
        self, dst: ObjectId, dst_off: int, src: ObjectId, src_off: int, length: int
    ) -> None:
        """memcpy between payloads; safe for overlap (reads before writing)."""
        self._require_active()
        if length == 0:
            return
        src_addr = self.pool._check_range(src, src_off, length)
        data = bytes(self.pool.buf[src_addr : src_addr + length])
        self.write(dst, dst_off, data)

    def alloc_zeroed(self, size: int) -> ObjectId:
        self._require_active()
        if size <= 0:
            raise OutOfSpace("allocation size must be positive")
        pool = self.pool
        rsize = _round16(size)
        payload, _ = pool._alloc.take(rsize, pool.capacity)
        hdr_off = payload - BLOCK_HDR_SIZE
        old_hdr = bytes(pool.buf[hdr_off : hdr_off + BLOCK_HDR_SIZE])
        self._append(REC_ALLOC, payload, rsize, old_hdr)
        pool._store(hdr_off, _2U64.pack(rsize, ST_ALLOCATED), "meta")
        pool._alloc.commit_take(payload, rsize)
        pool.stats.n_allocs += 1
        self._fresh.add(payload)
        return ObjectId(pool.pool_uuid, payload)

    def free(self, oid: ObjectId) -> None:
        """Deferred free: the block is reclaimed at commit, kept on abort/crash."""
        self._require_active()
        pool = self.pool
        if oid.offset in self._freed:
            raise DoubleFree(f"offset {oid.offset} already freed in this transaction")
        pool._check_owned_for_free(oid)
        self._append(REC_FREE, oid.offset, 0, b"")
        self._freed.add(oid.offset)
        self._pending_frees.append(oid.offset)

    # ------------------------------------------------------------------ outcome

    def commit(self) -> None:
        self._require_active()
        pool = self.pool
        if self._records:
            # commit point: one 8-byte state-word store
            pool._set_log_state(LOG_COMMITTING, self._log_used)
            commit_ordinal = pool._write_ordinal
            self._execute_frees()
            pool._set_log_state(LOG_IDLE, 0)
        else:
            commit_ordinal = pool._write_ordinal
        self.state = TX_COMMITTED
        pool._active_tx = None
        pool._xlat_cache.clear()
        pool.commit_ordinals.append(commit_ordinal)
        if pool.on_commit is not None:
            pool.on_commit(pool)

    def _execute_frees(self) -> None:
        # zero first, status word last: redo-on-recovery keys off the status
        pool = self.pool
        for payload in self._pending_frees:
            size = pool._alloc.block_size[payload]
            pool._store_zeros(payload, size, "meta")
            pool._store(payload - BLOCK_HDR_SIZE + 8, _U64.pack(ST_FREE), "meta")
            pool._alloc.release(payload)
            pool.stats.n_frees += 1

    def abort(self) -> None:
        self._require_active()
        pool = self.pool
        for kind, target, aux, body in reversed(self._records):
            _undo_record(pool, kind, target, aux, body)
        if self._records:
            pool._set_log_state(LOG_IDLE, 0)
        # volatile allocator state is rebuilt rather than journaled
        pool._alloc.scan(pool.buf, pool.blocks_offset, pool.capacity)
        self.state = TX_ABORTED
        pool._active_tx = None
        pool._xlat_cache.clear()

    def __enter__(self) -> "Transaction":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self.state != TX_ACTIVE:
            return
        if self.pool.closed:
            # simulated crash killed the handle; recovery owns the rollback
            self.state = TX_ABORTED
            return
        if exc_type is None:
            self.commit()
        else:
            self.abort()


def _undo_record(pool: PoolHandle, kind: int, target: int, aux: int, body: bytes) -> None:
    if kind == REC_SNAP:
        pool._store(target, body, "meta")
    elif kind == REC_ALLOC:
        pool._store_zeros(target, aux, "meta")
        pool._store(target - BLOCK_HDR_SIZE, body, "meta")
    elif kind == REC_FREE:
        pass  # deferred free never executed before the commit point
    else:
        raise OutOfBounds(f"corrupt undo record kind {kind}")


def _parse_log(pool: PoolHandle, used: int) -> list[tuple[int, int, int, bytes]]:
    records = []
    off = pool.heap_offset
    end = pool.heap_offset + used
    while off < end:
        kind, body_len, target, aux = _REC_HDR.unpack_from(pool.buf, off)
        body = bytes(pool.buf[off + REC_HDR_SIZE : off + REC_HDR_SIZE + body_len])
        records.append((kind, target, aux, body))
        off += REC_HDR_SIZE + body_len
    return records


def recover_log(pool: PoolHandle) -> None:
    """Roll back an ACTIVE log or finish a COMMITTING one, then truncate."""
    status, used = pool.log_state
    if status == LOG_IDLE and used == 0:
        return
    records = _parse_log(pool, used)
    if status == LOG_COMMITTING:
        for kind, target, aux, body in records:
            if kind != REC_FREE:
                continue
            hdr_off = target - BLOCK_HDR_SIZE
            size, st = _2U64.unpack_from(pool.buf, hdr_off)
            if st == ST_FREE:
                continue  # this free fully executed (status word is written last)
            pool._store_zeros(target, size, "meta")
            pool._store(hdr_off + 8, _U64.pack(ST_FREE), "meta")
    else:
        for kind, target, aux, body in reversed(records):
            _undo_record(pool, kind, target, aux, body)
    pool._set_log_state(LOG_IDLE, 0)
