import math

import pytest

from dpagg.datagen import gen_landmark
from dpagg.errors import ContractViolation, InvalidParameterError
from dpagg.model import Dataset, split_budget, write_result_csv
from dpagg.pipelines import (EXPECTED_SHUFFLES, RunOptions, run_exact, run_fast, run_naive,
                             run_pipeline, run_plume)

LN3 = math.log(3)
NO_PRIVACY = RunOptions(debug_no_noise=True, select_all_keys=True)


def csv_bytes(tmp_path, outputs, name):
    path = tmp_path / name
    write_result_csv(path, outputs)
    return path.read_bytes()


@pytest.mark.parametrize("name", ["naive", "fast", "plume", "exact"])
def test_shuffle_counts(name, synth_small, count, budget64):
    rep = run_pipeline(name, synth_small, count, budget64)
    assert rep.stats.shuffle_stages == EXPECTED_SHUFFLES[name]


@pytest.mark.parametrize("mech", ["count", "sum8"])
def test_naive_equals_plume(mech, synth_small, request, tmp_path):
    m = request.getfixturevalue(mech)
    budget = split_budget(LN3, 1e-5, 4)
    for seed in range(3):
        naive = run_naive(synth_small, m, budget, seed=seed)
        plume = run_plume(synth_small, m, budget, seed=seed)
        assert csv_bytes(tmp_path, naive.outputs, "n.csv") == \
            csv_bytes(tmp_path, plume.outputs, "p.csv")


def test_same_selection_across_pipelines(count):
    d = gen_landmark(3000)
    budget = split_budget(LN3, 1e-5, 1)
    sets = {name: run_pipeline(name, d, count, budget, seed=2).selected
            for name in ("naive", "fast", "plume")}
    assert sets["naive"] == sets["fast"] == sets["plume"] == frozenset({"landmark"})


@pytest.mark.parametrize("name", ["naive", "fast", "plume"])
def test_worker_invariance(name, synth_small, sum8, tmp_path):
    budget = split_budget(LN3, 1e-5, 8)
    outs = [csv_bytes(tmp_path, run_pipeline(name, synth_small, sum8, budget, seed=4,
                                             workers=w).outputs, f"{w}.csv")
            for w in (1, 2, 8)]
    assert outs[0] == outs[1] == outs[2]


@pytest.mark.parametrize("name", ["naive", "fast", "plume"])
def test_l_bound_audit(name, synth_small, count):
    for l_bound in (1, 3, 16):
        rep = run_pipeline(name, synth_small, count, split_budget(LN3, 1e-5, l_bound),
                           options=RunOptions(select_all_keys=True))
        assert 1 <= rep.max_user_degree <= l_bound


@pytest.mark.parametrize("runner", [run_naive, run_plume])
def test_exact_recovery_without_noise(runner, synth_small, count, sum8):
    # The count oracle needs one record per (user, key).
    dedup = Dataset.of(sorted({(r.user, r.key, r.value) for r in synth_small}))
    l_bound = synth_small.max_user_degree()
    budget = split_budget(LN3, 1e-5, l_bound)
    assert runner(dedup, count, budget, options=NO_PRIVACY).outputs == \
        run_exact(dedup, count)
    # With a clamp no user can reach, the bounded sum is exact as well.
    big = type(sum8)(1e9)
    assert runner(synth_small, big, budget, options=NO_PRIVACY).outputs == \
        run_exact(synth_small, big)


def test_fast_undercounts_landmark(count):
    d = gen_landmark(20000)
    budget = split_budget(LN3, 1e-5, 1)
    naive = run_naive(d, count, budget)
    fast = run_fast(d, count, budget)
    assert naive.outputs["landmark"] == pytest.approx(20000, abs=50)
    assert fast.outputs["landmark"] == pytest.approx(10000, abs=300)
    assert set(naive.outputs) == set(fast.outputs)


def test_every_selected_key_gets_an_output(synth_small, count):
    # A dummy is inserted for every selected key, so outputs match S even
    # for keys whose data the second bounding round drops entirely.
    rep = run_plume(synth_small, count, split_budget(LN3, 1e-5, 1), options=NO_PRIVACY)
    assert set(rep.outputs) == rep.selected
    assert any(v == 0.0 for v in rep.outputs.values())


def test_lookup_modes_give_same_result(synth_small, count):
    budget = split_budget(LN3, 1e-5, 4)
    opts = RunOptions(select_all_keys=True)
    bcast = run_plume(synth_small, count, budget, options=opts)
    shared = run_plume(synth_small, count, budget,
                       options=RunOptions(select_all_keys=True, lookup_cutoff=0))
    assert bcast.lookup_mode == "broadcast"
    assert shared.lookup_mode == "shared-table"
    assert bcast.outputs == shared.outputs


def test_early_combine_does_not_change_results(synth_small, sum8):
    budget = split_budget(LN3, 1e-5, 4)
    late = RunOptions(early_combine=False)
    for runner in (run_naive, run_fast, run_plume):
        assert runner(synth_small, sum8, budget).outputs == \
            runner(synth_small, sum8, budget, options=late).outputs


def test_duplicate_records_combine_before_clamp(sum8):
    d = Dataset.of([("a", "k", 5.0), ("a", "k", 5.0), ("b", "k", 2.0)])
    budget = split_budget(LN3, 1e-5, 1)
    rep = run_plume(d, sum8, budget, options=NO_PRIVACY)
    assert rep.outputs == {"k": 10.0}
    assert run_exact(d, sum8) == {"k": 12.0}


def test_empty_selection(count):
    d = Dataset.of([("a", "k", 1.0)])
    rep = run_plume(d, count, split_budget(LN3, 1e-5, 1))
    assert rep.outputs == {} and rep.retained == 0


def test_user_cap_enforced(count):
    d = Dataset.of([("a", f"k{i}", 1.0) for i in range(20)])
    with pytest.raises(ContractViolation):
        run_plume(d, count, split_budget(LN3, 1e-5, 2),
                  options=RunOptions(per_user_record_cap=5))


def test_run_pipeline_errors(synth_small, count):
    with pytest.raises(InvalidParameterError):
        run_pipeline("bogus", synth_small, count, split_budget(LN3, 1e-5, 1))
    with pytest.raises(InvalidParameterError):
        run_pipeline("plume", synth_small, count)
    with pytest.raises(InvalidParameterError):
        run_pipeline("plume", synth_small, "count", split_budget(LN3, 1e-5, 1))
