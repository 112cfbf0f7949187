"""Map kernels: structure validity, shadow-model equivalence, migrations."""

import random

import pytest

from ledstore import create_pool
from ledstore.kernels import KINDS, make_kernel, make_manual_migrator
from ledstore.retention import run_migration

MIB = 1024 * 1024


def fresh_kernel(tmp_path, kind, name="k", **kw):
    pool = create_pool(str(tmp_path / f"{name}.pool"), f"{kind}-v1", 32 * MIB)
    k = make_kernel(pool, kind, **kw)
    k.create()
    return pool, k


def run_ops(pool, kernel, ops):
    for op in ops:
        with pool.tx_begin() as tx:
            if op[0] == "ins":
                kernel.insert(tx, op[1], op[2])
            else:
                kernel.remove(tx, op[1])


@pytest.mark.parametrize("kind", KINDS)
class TestBasicOps:
    def test_insert_lookup(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind)
        with pool.tx_begin() as tx:
            assert k.insert(tx, 5, 500)
        assert k.lookup(5) == 500
        assert k.lookup(6) is None
        assert k.count() == 1
        k.validate()
        pool.close()

    def test_duplicate_insert_rejected(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind)
        with pool.tx_begin() as tx:
            assert k.insert(tx, 9, 1)
        before = sorted(k.scan())
        with pool.tx_begin() as tx:
            assert not k.insert(tx, 9, 2)
        assert sorted(k.scan()) == before
        assert k.lookup(9) == 1
        pool.close()

    def test_remove_absent(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind)
        with pool.tx_begin() as tx:
            assert not k.remove(tx, 42)
        pool.close()

    def test_insert_remove_all(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind)
        keys = [7, 3, 11, 1, 9, 5, 13, 2, 8]
        for key in keys:
            with pool.tx_begin() as tx:
                assert k.insert(tx, key, key * 10)
            k.validate()
        assert sorted(k.scan()) == sorted((key, key * 10) for key in keys)
        for key in keys:
            with pool.tx_begin() as tx:
                assert k.remove(tx, key)
            k.validate()
        assert k.count() == 0
        assert list(k.scan()) == []
        pool.close()

    def test_scan_sorted_for_trees(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind)
        rng = random.Random(7)
        keys = rng.sample(range(1, 100000), 300)
        for key in keys:
            with pool.tx_begin() as tx:
                k.insert(tx, key, key)
        scanned = [key for key, _ in k.scan()]
        if kind != "hashmap":
            assert scanned == sorted(keys)
        else:
            assert sorted(scanned) == sorted(keys)
        pool.close()

    def test_fuzz_against_shadow(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind)
        rng = random.Random(0xBEEF)
        shadow = {}
        for step in range(2000):
            key = rng.randrange(1, 400)
            if key in shadow:
                with pool.tx_begin() as tx:
                    assert k.remove(tx, key)
                del shadow[key]
            else:
                value = rng.getrandbits(63)
                with pool.tx_begin() as tx:
                    assert k.insert(tx, key, value)
                shadow[key] = value
            if step % 97 == 0:
                k.validate()
        k.validate()
        assert dict(k.scan()) == shadow  # oracle: shadow map replay
        pool.close()


@pytest.mark.parametrize("kind", KINDS)
class TestPersistence:
    def test_reopen_and_continue(self, tmp_path, kind):
        from ledstore import open_pool

        path = str(tmp_path / "p.pool")
        pool = create_pool(path, f"{kind}-v1", 32 * MIB)
        k = make_kernel(pool, kind)
        k.create()
        run_ops(pool, k, [("ins", key, key) for key in (4, 8, 15, 16, 23, 42)])
        pool.close()

        pool = open_pool(path, f"{kind}-v1")
        k = make_kernel(pool, kind)
        k.attach()
        assert k.lookup(15) == 15
        with pool.tx_begin() as tx:
            k.insert(tx, 99, 99)
            k.remove(tx, 4)
        k.validate()
        assert dict(k.scan()) == {8: 8, 15: 15, 16: 16, 23: 23, 42: 42, 99: 99}
        pool.close()


V2_RECORD_SIZES = {  # layout-change migration, bytes per migrated record
    "hashmap": 40,
    "skiplist": 88,
    "ctree": 52,
    "btree": 324,
    "rbtree": 76,
}


@pytest.mark.parametrize("kind", KINDS)
class TestManualMigration:
    def test_change_preserves_content_exact_node_bytes(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind, rng=random.Random(3))
        rng = random.Random(11)
        keys = rng.sample(range(1, 10_000_000), 500)
        run_ops(pool, k, [("ins", key, key ^ 0xABCD) for key in keys])
        before = dict(k.scan())

        ms = run_migration(pool, make_manual_migrator(kind, "change"))
        assert pool.layout_version == 2
        assert ms.nodes_migrated > 0
        assert ms.bytes_per_node == V2_RECORD_SIZES[kind]
        if kind in ("hashmap", "skiplist", "rbtree"):
            assert ms.nodes_migrated == 500  # one record per key

        k2 = make_kernel(pool, kind, version=2, change="change")
        k2.attach()
        k2.validate()
        assert dict(k2.scan()) == before  # oracle: full scan comparison
        pool.close()

    def test_add_zero_fills_name(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind, rng=random.Random(3))
        run_ops(pool, k, [("ins", key, key) for key in (10, 20, 30)])
        ms = run_migration(pool, make_manual_migrator(kind, "add"))
        assert ms.nodes_migrated > 0
        k2 = make_kernel(pool, kind, version=2, change="add")
        k2.attach()
        k2.validate()
        assert dict(k2.scan()) == {10: 10, 20: 20, 30: 30}
        pool.close()

    def test_empty_structure_migrates(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind)
        ms = run_migration(pool, make_manual_migrator(kind, "change"))
        if kind in ("hashmap", "skiplist", "rbtree", "btree"):
            # structural records only (buckets/head/nil/empty node), no entries
            assert ms.nodes_migrated == (1 if kind == "btree" else 0)
        else:
            assert ms.nodes_migrated == 0
        k2 = make_kernel(pool, kind, version=2, change="change")
        k2.attach()
        assert list(k2.scan()) == []
        pool.close()

    def test_old_nodes_freed(self, tmp_path, kind):
        pool, k = fresh_kernel(tmp_path, kind, rng=random.Random(3))
        keys = list(range(1, 200))
        run_ops(pool, k, [("ins", key, key) for key in keys])
        ms = run_migration(pool, make_manual_migrator(kind, "change"))
        assert ms.objects_freed > 0
        k2 = make_kernel(pool, kind, version=2, change="change")
        k2.attach()
        for key in keys:
            with pool.tx_begin() as tx:
                assert k2.remove(tx, key)
        assert k2.count() == 0
        pool.close()


@pytest.mark.parametrize("kind", KINDS)
class TestAutoMode:
    def build_v1(self, tmp_path, kind, keys):
        pool = create_pool(str(tmp_path / "a.pool"), f"{kind}-auto", 32 * MIB)
        k = make_kernel(pool, kind, mode="auto", version=1, rng=random.Random(5))
        k.create()
        run_ops(pool, k, [("ins", key, key * 3) for key in keys])
        return pool

    def reattach_v2(self, pool, kind, change):
        k = make_kernel(pool, kind, mode="auto", version=2, change=change,
                        rng=random.Random(6))
        k.attach()
        return k

    def test_change_lazy_migration_counts(self, tmp_path, kind):
        keys = list(range(1, 101))
        pool = self.build_v1(tmp_path, kind, keys)
        k2 = self.reattach_v2(pool, kind, "change")
        before = pool.stats.snapshot()
        with pool.tx_begin() as tx:
            assert k2.remove(tx, 50)
        d = pool.stats.delta(before)
        assert d["allocations"] == 1          # only the matched record upgrades
        assert d["ext_bytes"] == 40           # 24-byte record + 16-byte link store
        k2.validate()
        pool.close()

    def test_change_first_read_materializes_key64(self, tmp_path, kind):
        pool = self.build_v1(tmp_path, kind, [7])
        k2 = self.reattach_v2(pool, kind, "change")
        before = pool.stats.snapshot()
        assert k2.lookup(7) == 21
        assert pool.stats.delta(before)["allocations"] == 1
        # second access reuses the record
        before = pool.stats.snapshot()
        assert k2.lookup(7) == 21
        assert pool.stats.delta(before)["allocations"] == 0
        pool.close()

    def test_add_never_touches_old_nodes(self, tmp_path, kind):
        keys = list(range(1, 201))
        pool = self.build_v1(tmp_path, kind, keys)
        k2 = self.reattach_v2(pool, kind, "add")
        before = pool.stats.snapshot()
        for key in keys:
            with pool.tx_begin() as tx:
                assert k2.remove(tx, key)
        d = pool.stats.delta(before)
        assert d["allocations"] == 0          # oracle: allocation counter
        assert d["ext_bytes"] == 0
        assert k2.count() == 0
        pool.close()

    def test_change_equivalence_with_manual(self, tmp_path, kind):
        rng = random.Random(17)
        keys = rng.sample(range(1, 1_000_000), 400)
        ops = [("ins", key, key ^ 99) for key in keys]
        upd = [("del" if i % 3 else "ins", key, key ^ 7)
               for i, key in enumerate(keys)]

        # manual lane
        pm, km = fresh_kernel(tmp_path, kind, name="m", rng=random.Random(1))
        run_ops(pm, km, ops)
        run_migration(pm, make_manual_migrator(kind, "change"))
        km2 = make_kernel(pm, kind, version=2, change="change", rng=random.Random(2))
        km2.attach()
        for op in upd:
            with pm.tx_begin() as tx:
                km2.remove(tx, op[1]) if op[0] == "del" else km2.insert(tx, op[1], op[2])
        manual_view = dict(km2.scan())

        # auto lane
        pa = self.build_v1(tmp_path, kind, [])
        ka = make_kernel(pa, kind, mode="auto", version=1, rng=random.Random(1))
        ka.attach()
        run_ops(pa, ka, ops)
        ka2 = self.reattach_v2(pa, kind, "change")
        for op in upd:
            with pa.tx_begin() as tx:
                ka2.remove(tx, op[1]) if op[0] == "del" else ka2.insert(tx, op[1], op[2])
        auto_view = dict(ka2.scan())
        ka2.validate()

        # shadow lane
        shadow = {}
        for op in ops:
            shadow.setdefault(op[1], op[2])
        for op in upd:
            if op[0] == "del":
                shadow.pop(op[1], None)
            elif op[1] not in shadow:
                shadow[op[1]] = op[2]

        assert manual_view == shadow
        assert auto_view == shadow
        pm.close()
        pa.close()

    def test_auto_fuzz_validates(self, tmp_path, kind):
        pool = self.build_v1(tmp_path, kind, list(range(1, 50)))
        k2 = self.reattach_v2(pool, kind, "change")
        rng = random.Random(0xFEED)
        shadow = {key: key * 3 for key in range(1, 50)}
        for _ in range(400):
            key = rng.randrange(1, 120)
            with pool.tx_begin() as tx:
                if key in shadow:
                    assert k2.remove(tx, key)
                    del shadow[key]
                else:
                    assert k2.insert(tx, key, key)
                    shadow[key] = key
        k2.validate()
        assert dict(k2.scan()) == shadow
        pool.close()


class TestBTreeCopies:
    def test_shallow_toggle_reduces_deep_copies(self, tmp_path):
        rng = random.Random(4)
        keys = rng.sample(range(1, 1_000_000), 600)

        def run(shallow):
            pool = create_pool(str(tmp_path / f"b{shallow}.pool"), "b", 32 * MIB)
            k = make_kernel(pool, "btree", mode="auto", version=2, change="change",
                            shallow_copy=shallow)
            k.create()
            run_ops(pool, k, [("ins", key, key) for key in keys])
            run_ops(pool, k, [("del", key) for key in keys[::2]])
            k.validate()
            counters = pool.stats.snapshot()
            pool.close()
            return counters

        deep = run(False)
        shallow = run(True)
        assert deep["deep_copies"] > 0
        assert shallow["deep_copies"] == 0
        assert shallow["n_allocs"] < deep["n_allocs"]  # oracle: paired runs
