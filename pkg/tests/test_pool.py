"""Pool lifecycle, object ids, allocation, and the on-disk header format."""

import struct

import pytest

from ledstore import (
    NULL_OID,
    AlreadyExists,
    BadMagic,
    CapacityTooSmall,
    DoubleFree,
    ForeignPool,
    IoError,
    LayoutMismatch,
    ObjectId,
    OutOfBounds,
    OutOfSpace,
    PoolLocked,
    create_pool,
    delete_pool,
    open_pool,
)

MIB = 1024 * 1024


class TestCreate:
    def test_fresh_pool_is_empty(self, pool):
        assert pool.allocated_objects == 0
        assert pool.root_id == NULL_OID
        assert pool.layout_name == "test-layout"
        assert pool.layout_version == 1

    def test_only_metadata_written_at_create(self, pool):
        assert pool.stats.bytes_user == 0
        assert pool.stats.bytes_meta > 0
        assert pool.stats.bytes_log == 0

    def test_capacity_too_small(self, tmp_path):
        with pytest.raises(CapacityTooSmall):
            create_pool(str(tmp_path / "p"), "x", 4096)

    def test_existing_file_rejected(self, tmp_path):
        p = str(tmp_path / "p")
        with open(p, "wb") as f:
            f.write(b"junk")
        with pytest.raises(AlreadyExists):
            create_pool(p, "x", MIB)

    def test_layout_name_length_limit(self, tmp_path):
        with pytest.raises(LayoutMismatch):
            create_pool(str(tmp_path / "p"), "n" * 64, 8 * MIB)

    def test_second_handle_locked_out(self, pool, pool_path):
        with pytest.raises(PoolLocked):
            open_pool(pool_path, "test-layout")


class TestHeaderFormat:
    """The documented little-endian byte layout of the header page."""

    def test_fixed_field_offsets(self, pool, pool_path):
        pool.close()
        with open(pool_path, "rb") as f:
            raw = f.read(4096)
        assert raw[0:8] == b"LEDSPOOL"
        assert struct.unpack_from("<I", raw, 8)[0] == 1  # format_version
        name = raw[16:80].rstrip(b"\0")
        assert name == b"test-layout"
        assert struct.unpack_from("<I", raw, 80)[0] == 1  # layout_version
        root = struct.unpack_from("<QQ", raw, 96)
        assert root == (0, 0)
        assert struct.unpack_from("<Q", raw, 112)[0] == 0  # root_size
        assert struct.unpack_from("<Q", raw, 120)[0] == 4096  # heap_offset
        assert struct.unpack_from("<Q", raw, 128)[0] == 8 * MIB  # capacity

    def test_heap_offset_default(self, pool):
        assert pool.heap_offset == 4096


class TestOpen:
    def test_round_trip_same_root(self, pool, pool_path):
        root = pool.get_root(64)
        pool.close()
        with open_pool(pool_path, "test-layout") as re:
            assert re.root_id == root

    def test_layout_mismatch(self, pool, pool_path):
        pool.close()
        with pytest.raises(LayoutMismatch):
            open_pool(pool_path, "other-layout")

    def test_bad_magic_on_zeros(self, tmp_path):
        p = str(tmp_path / "z")
        with open(p, "wb") as f:
            f.write(bytes(8192))
        with pytest.raises(BadMagic):
            open_pool(p, "x")

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            open_pool(str(tmp_path / "nope"), "x")

    def test_ids_stable_across_reopen(self, pool, pool_path):
        oids = [pool.raw_alloc(24) for _ in range(10)]
        payloads = {}
        for i, oid in enumerate(oids):
            data = bytes([i]) * 24
            pool.store(oid, 0, data)
            payloads[oid] = data
        pool.close()
        with open_pool(pool_path, "test-layout") as re:
            for oid, data in payloads.items():
                assert re.load(oid, 0, 24) == data


class TestRoot:
    def test_fresh_root_zeroed(self, pool):
        root = pool.get_root(64)
        assert not root.is_null()
        assert pool.load(root, 0, 64) == bytes(64)

    def test_idempotent(self, pool):
        a = pool.get_root(64)
        b = pool.get_root(64)
        assert a == b

    def test_smaller_request_returns_existing(self, pool):
        a = pool.get_root(64)
        assert pool.get_root(16) == a

    def test_grow_preserves_prefix_zero_tail(self, pool):
        a = pool.get_root(64)
        pattern = bytes(range(64))
        pool.store(a, 0, pattern)
        b = pool.get_root(128)
        assert b != a
        assert pool.load(b, 0, 64) == pattern  # oracle: byte comparison
        assert pool.load(b, 64, 64) == bytes(64)
        assert pool.root_size == 128

    def test_old_root_freed_on_grow(self, pool):
        pool.get_root(64)
        live = pool.live_bytes
        pool.get_root(256)
        assert pool.live_bytes == live - 64 + 256


class TestTranslate:
    def test_deterministic(self, pool):
        oid = pool.raw_alloc(24)
        assert pool.translate(oid) == pool.translate(oid)

    def test_write_through_address_survives_reopen(self, pool, pool_path):
        oid = pool.raw_alloc(16)
        pool.store(oid, 0, struct.pack("<Q", 42))
        addr = pool.translate(oid)
        pool.close()
        # oracle: raw file inspection at the translated offset
        with open(pool_path, "rb") as f:
            f.seek(addr)
            assert struct.unpack("<Q", f.read(8))[0] == 42
        with open_pool(pool_path, "test-layout") as re:
            assert struct.unpack("<Q", re.load(oid, 0, 8))[0] == 42

    def test_null_rejected(self, pool):
        with pytest.raises(OutOfBounds):
            pool.translate(NULL_OID)

    def test_foreign_pool_rejected(self, pool):
        oid = pool.raw_alloc(16)
        alien = ObjectId(pool.pool_uuid ^ 0x5A5A, oid.offset)
        with pytest.raises(ForeignPool):
            pool.translate(alien)

    def test_translation_counted(self, pool):
        oid = pool.raw_alloc(16)
        before = pool.stats.translations
        pool.translate(oid)
        pool.translate(oid)
        assert pool.stats.translations == before + 2


class TestAlloc:
    def test_zeroed(self, pool):
        oid = pool.raw_alloc(24, zeroed=True)
        assert pool.load(oid, 0, 24) == bytes(24)

    def test_alignment(self, pool):
        for size in (1, 7, 16, 24, 100, 1000):
            oid = pool.raw_alloc(size)
            assert oid.offset % 16 == 0

    def test_live_bytes_back_to_baseline(self, pool):
        baseline = pool.live_bytes
        oids = [pool.raw_alloc(40) for _ in range(50)]
        assert pool.live_bytes > baseline
        for oid in oids:
            pool.raw_free(oid)
        assert pool.live_bytes == baseline

    def test_free_list_reuse(self, pool):
        a = pool.raw_alloc(40)
        pool.raw_free(a)
        b = pool.raw_alloc(40)
        assert b.offset == a.offset

    def test_double_free(self, pool):
        oid = pool.raw_alloc(24)
        pool.raw_free(oid)
        with pytest.raises(DoubleFree):
            pool.raw_free(oid)

    def test_freed_payload_zeroed(self, pool):
        oid = pool.raw_alloc(32)
        pool.store(oid, 0, b"\xff" * 32)
        addr = pool.translate(oid)
        pool.raw_free(oid)
        assert bytes(pool.buf[addr : addr + 32]) == bytes(32)

    def test_out_of_space(self, tmp_path):
        p = create_pool(str(tmp_path / "small.pool"), "x", MIB, log_capacity=256 * 1024)
        with pytest.raises(OutOfSpace):
            for _ in range(10000):
                p.raw_alloc(4096)
        p.close()

    def test_accounting_completeness(self, pool):
        """Every stored byte lands in exactly one bucket."""
        oid = pool.raw_alloc(64)
        pool.store(oid, 0, b"x" * 64)
        s = pool.stats
        assert s.bytes_total == s.bytes_user + s.bytes_log + s.bytes_meta
        assert s.bytes_user == 64


class TestDelete:
    def test_delete_then_open_fails(self, pool, pool_path):
        pool.close()
        delete_pool(pool_path)
        with pytest.raises(IoError):
            open_pool(pool_path, "test-layout")

    def test_delete_then_create_fresh_uuid(self, pool, pool_path):
        old_uuid = pool.pool_uuid
        pool.close()
        delete_pool(pool_path)
        with create_pool(pool_path, "test-layout", 8 * MIB) as fresh:
            assert fresh.allocated_objects == 0
            assert fresh.pool_uuid != old_uuid

    def test_delete_missing(self, tmp_path):
        with pytest.raises(IoError):
            delete_pool(str(tmp_path / "missing"))

    def test_delete_refused_while_open(self, pool, pool_path):
        with pytest.raises(IoError):
            delete_pool(pool_path)
