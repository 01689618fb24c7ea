import math

import pytest

from kgloop.config import RunConfig
from kgloop.errors import DataError
from kgloop.graph import build_graph
from kgloop.loop import Dataset, IterationSnapshot, PhaseError, initial_rules, run, write_snapshots
from kgloop.rules import RuleSet, mine_seed_rules
from kgloop.synthetic import PLANTED_HEAD


def fast_config(**kw):
    base = dict(dim=16, batch_size=64, epochs=10, learning_rate=0.005, max_iterations=5, seed=1)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def data(synthetic):
    kg = build_graph(synthetic.train, synthetic.concepts)
    return Dataset(kg, kg.encode(synthetic.valid, "valid"), kg.encode(synthetic.test, "test"))


@pytest.fixture(scope="module")
def seeds(data):
    kg = data.kg
    mined = mine_seed_rules(kg)
    return RuleSet(r for r in mined if r.head_rel != kg.relation_id(PLANTED_HEAD))


def test_loop_reaches_fixpoint_with_monotone_rule_counts(data, seeds):
    result = run(fast_config(score_threshold=0.0), data=data, seeds=seeds)
    snaps = result.snapshots
    assert snaps[0].iteration == 0 and snaps[0].rules_total == len(seeds)
    totals = [s.rules_total for s in snaps]
    assert totals == sorted(totals)
    for prev, cur in zip(snaps, snaps[1:]):
        assert cur.rules_total == prev.rules_total + cur.rules_new
    last = snaps[-1]
    assert last.rules_new == 0 or last.iteration == 5
    assert len(result.loss_traces) == len(snaps) - 1
    assert result.rules.keys() >= seeds.keys()


def test_loop_learns_withheld_rule(data, seeds):
    kg = data.kg
    result = run(fast_config(score_threshold=0.0), data=data, seeds=seeds)
    heads = {r.head_rel for r in result.rules}
    assert kg.relation_id(PLANTED_HEAD) in heads


def test_single_iteration_cap(data, seeds):
    result = run(fast_config(max_iterations=1, score_threshold=0.0), data=data, seeds=seeds)
    assert [s.iteration for s in result.snapshots] == [0, 1]


def test_learning_disabled_is_one_pass(data, seeds):
    result = run(fast_config(learn=False), data=data, seeds=seeds)
    assert [s.iteration for s in result.snapshots] == [0, 1]
    assert result.rules == seeds
    assert result.snapshots[1].metrics is not None


def test_snapshot_rows(tmp_path):
    snaps = [IterationSnapshot(0, 2, 2), IterationSnapshot(1, 3, 1, {"MRR": 0.5, "Hits@1": 0.25,
                                                                       "Hits@3": 0.5, "Hits@10": 1.0,
                                                                       "MR": 3.0}, 1.5, 0.25)]
    f = tmp_path / "snapshots.tsv"
    write_snapshots(snaps, f, record_timings=False)
    rows = [line.split("\t") for line in f.read_text().splitlines()]
    assert rows[0][:3] == ["0", "2", "2"] and math.isnan(float(rows[0][3]))
    assert rows[1] == ["1", "3", "1", "0.500000", "0.250000", "0.500000", "1.000000", "3.000000",
                       "0.000", "0.000"]


def test_phase_error_names_phase(data, seeds):
    with pytest.raises(PhaseError) as info:
        run(fast_config(learning_rate=-1.0), data=data, seeds=seeds)
    assert info.value.phase == "train" and info.value.iteration == 1


def test_intake_error_is_wrapped(tmp_path):
    missing = tmp_path / "none.tsv"
    with pytest.raises(PhaseError) as info:
        run(fast_config(train=str(missing)))
    assert info.value.phase == "intake"
    assert isinstance(info.value.cause, DataError)


def test_seed_fraction_subsamples_deterministically(data):
    cfg = fast_config(seed_rule_fraction=0.5, min_sc=0.3)
    a = initial_rules(data.kg, cfg)
    b = initial_rules(data.kg, cfg)
    full = initial_rules(data.kg, fast_config(min_sc=0.3))
    assert a == b
    assert len(a) == round(0.5 * len(full))
    assert a.keys() <= full.keys()
