import pytest

from dpagg.engine import Engine, StageKind, by_key, by_user
from dpagg.errors import ContractViolation, InvalidParameterError
from dpagg.model import Record

RECS = [Record(f"u{i % 7}", f"k{i % 5}", float(i)) for i in range(100)]


def grouped_by_user(workers):
    eng = Engine(workers)
    g = eng.shuffle_by(eng.parallelize(RECS), by_user, StageKind.SHUFFLE_BY_USER)
    return eng, Engine.collect_groups(g)


def test_rejects_bad_worker_count():
    with pytest.raises(InvalidParameterError):
        Engine(0)


def test_parallelize_keeps_everything():
    eng = Engine(3)
    parts = eng.parallelize(range(10))
    assert len(parts) == 3
    assert sorted(Engine.collect(parts)) == list(range(10))


@pytest.mark.parametrize("workers", [1, 2, 8])
def test_shuffle_groups_are_worker_invariant(workers):
    eng, groups = grouped_by_user(workers)
    _, reference = grouped_by_user(1)
    assert groups == reference
    assert [g[0] for g in groups] == [f"u{i}" for i in range(7)]
    assert eng.stats.shuffle_stages == 1
    assert eng.stats.shuffled_records == len(RECS)


def test_same_id_lands_in_one_partition():
    eng = Engine(4)
    g = eng.shuffle_by(eng.parallelize(RECS), by_key, StageKind.SHUFFLE_BY_KEY)
    ids = [ident for part in g for ident, _ in part]
    assert len(ids) == len(set(ids)) == 5


def test_only_shuffles_are_counted():
    eng = Engine(2)
    parts = eng.run_map(lambda r: [r, r], eng.parallelize(RECS))
    g = eng.shuffle_by(parts, by_key, StageKind.SHUFFLE_BY_KEY)
    eng.run_reduce(lambda k, items: [(k, len(items))], g)
    eng.map_side_join(g, {"k1"})
    assert eng.stats.shuffle_stages == 1
    assert eng.stats.shuffled_records == 200
    kinds = [s.kind for s in eng.stats.stages]
    assert kinds == [StageKind.MAP, StageKind.SHUFFLE_BY_KEY, StageKind.REDUCE,
                     StageKind.MAP_SIDE_JOIN]


def test_non_shuffle_kind_rejected():
    eng = Engine(1)
    with pytest.raises(InvalidParameterError):
        eng.shuffle_by([[]], by_key, StageKind.MAP)


def test_map_side_join_filters_and_counts_probes():
    eng = Engine(2)
    g = eng.shuffle_by(eng.parallelize(RECS), by_user, StageKind.SHUFFLE_BY_USER)
    joined = Engine.collect_groups(eng.map_side_join(g, {"k0", "k3"}))
    assert all(r.key in ("k0", "k3") for _, items in joined for r in items)
    # 7 users x 5 distinct keys, one probe each.
    assert eng.stats.lookup_probes == 35


def test_user_record_cap():
    eng = Engine(2, per_user_record_cap=10)
    with pytest.raises(ContractViolation, match="per-user cap"):
        eng.shuffle_by(eng.parallelize(RECS), by_user, StageKind.SHUFFLE_BY_USER)
    # Key shuffles are not capped.
    eng.shuffle_by(eng.parallelize(RECS), by_key, StageKind.SHUFFLE_BY_KEY)


def test_contract_violation_names_stage_and_group():
    eng = Engine(1)
    g = eng.shuffle_by(eng.parallelize(RECS), by_key, StageKind.SHUFFLE_BY_KEY)

    def bad(key, items):
        raise ContractViolation("boom")
    with pytest.raises(ContractViolation, match=r"stage 'checker', group 'k0'"):
        eng.run_reduce(bad, g, "checker")
