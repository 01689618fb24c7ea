import math

import numpy as np
import pytest

from kgloop.embedding import EmbeddingStore
from kgloop.evaluation import Evaluator, Metrics, explain, rank_of
from kgloop.paths import PathIndex, enumerate_paths
from kgloop.rules import CPRule, RuleSet
from oracles import sorted_rank


def test_rank_unique_minimum():
    assert rank_of(np.array([0.1, 0.5, 0.9]), 0) == (1, 1)


def test_rank_filter_example():
    scores = np.array([0.5, 0.3, 0.9])
    known = np.array([False, True, False])
    assert rank_of(scores, 0, known) == (2, 1)


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_rank_all_equal(n):
    raw, _ = rank_of(np.zeros(n), n - 1)
    assert raw == math.ceil((n + 1) / 2)


def test_rank_true_entity_is_never_filtered():
    known = np.array([True, True])
    assert rank_of(np.array([0.2, 0.1]), 0, known) == (2, 1)


def test_rank_matches_sorting_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 21))
        scores = rng.integers(0, 5, n).astype(float)
        true = int(rng.integers(n))
        known = rng.random(n) < 0.3
        raw, filt = rank_of(scores, true, known)
        assert raw == sorted_rank(scores.tolist(), true)
        assert filt == sorted_rank(scores.tolist(), true, set(np.flatnonzero(known).tolist()))
        assert filt <= raw


def test_metrics_from_ranks():
    _, filt = Metrics.from_ranks([1, 4], [1, 4])
    assert filt["MR"] == 2.5
    assert filt["MRR"] == 0.625
    assert filt["Hits@3"] == 0.5
    assert filt["Hits@1"] <= filt["Hits@3"] <= filt["Hits@10"]


def test_metrics_single_perfect_query():
    raw, _ = Metrics.from_ranks([1, 1], [1, 1])
    assert raw == {"MR": 1.0, "MRR": 1.0, "Hits@1": 1.0, "Hits@3": 1.0, "Hits@10": 1.0}


def test_report_format():
    raw, filt = Metrics.from_ranks([1, 4], [1, 2])
    cats = {("1-1", "head"): 1.0, ("1-1", "tail"): 0.5}
    text = Metrics(raw, filt, cats, 2).report()
    lines = text.splitlines()
    assert lines[0] == "queries: 2"
    assert "filtered.MRR: 0.75" in lines
    assert "1-1\t1.0\t0.5" in lines
    assert "N-N\t-\t-" in lines


def one_d_evaluator(kg, alpha, rel_value=0.8, index=None):
    # e sits at 0 and t at 1, so r = 0.8 gives triple energy 0.2
    values = {"p1": 1.0, "p2": 0.5, "r": rel_value}
    emb = EmbeddingStore(np.array([[0.0], [1.0]]),
                         np.array([[values[kg.relation_token(i)]] for i in range(kg.n_base_relations)]))
    return Evaluator(kg, emb, RuleSet(), index, alpha_path=alpha)


def test_score_candidate_pure_triple_energy(kg_from):
    kg = kg_from("e p1 t", "e p2 t", "e r t")
    ev = one_d_evaluator(kg, 0.0, index=enumerate_paths(kg))
    e, t = kg.entity_id("e"), kg.entity_id("t")
    assert ev.score_candidate(e, kg.relation_id("r"), t) == pytest.approx(0.2)


def test_score_candidate_worked_case(kg_from):
    kg = kg_from("e p1 t", "e p2 t", "e r t")
    e, t = kg.entity_id("e"), kg.entity_id("t")
    p1, p2, r = (kg.relation_id(x) for x in ("p1", "p2", "r"))
    index = PathIndex({(e, t): [((p1,), 0.6), ((p2,), 0.2), ((r,), 1.0)]})
    ev = one_d_evaluator(kg, 1.0, index=index)
    # 0.2 + (0.75 * |1 - 1| + 0.25 * |0.5 - 1|); the direct r edge is not evidence for r itself
    assert ev.score_candidate(e, r, t) == pytest.approx(0.325)


def test_score_vanishes_when_everything_fits(kg_from):
    kg = kg_from("e p1 t", "e r t")
    e, t = kg.entity_id("e"), kg.entity_id("t")
    ev = one_d_evaluator(kg, 1.0, rel_value=1.0, index=enumerate_paths(kg))
    assert ev.score_candidate(e, kg.relation_id("r"), t) == 0.0


def test_missing_pairs_contribute_no_path_term(kg_from):
    kg = kg_from("e p1 t", "e r t")
    e, t = kg.entity_id("e"), kg.entity_id("t")
    ev = one_d_evaluator(kg, 1.0, index=PathIndex())
    assert ev.score_candidate(e, kg.relation_id("r"), t) == pytest.approx(0.2)
    on_demand = Evaluator(kg, ev.emb, RuleSet(), PathIndex(), alpha_path=1.0, on_demand_top_k=5)
    # p1 (value 1.0) now links the pair and fits exactly, so the total stays at 0.2
    assert on_demand.lookup(e, t)
    assert on_demand.score_candidate(e, kg.relation_id("r"), t) == pytest.approx(0.2)


def test_scores_vector_agrees_with_score_candidate(synthetic_kg):
    kg = synthetic_kg
    rng = np.random.default_rng(0)
    emb = EmbeddingStore(rng.normal(size=(kg.n_entities, 4)), rng.normal(size=(kg.n_base_relations, 4)))
    ev = Evaluator(kg, emb, RuleSet(), enumerate_paths(kg), alpha_path=0.5)
    for h, r, t in kg.base_triples[:20].tolist():
        tails = ev.scores(h, r, "tail")
        heads = ev.scores(t, r, "head")
        for c in range(kg.n_entities):
            assert tails[c] == pytest.approx(ev.score_candidate(h, r, c), abs=1e-12)
            assert heads[c] == pytest.approx(ev.score_candidate(c, r, t), abs=1e-12)


def test_evaluate_filtered_not_worse_and_thread_invariant(synthetic, synthetic_kg):
    kg = synthetic_kg
    rng = np.random.default_rng(2)
    emb = EmbeddingStore(rng.normal(size=(kg.n_entities, 4)), rng.normal(size=(kg.n_base_relations, 4)))
    test = kg.encode(synthetic.test, "test")
    known = set(map(tuple, kg.base_triples.tolist())) | set(map(tuple, test.tolist()))
    ev = Evaluator(kg, emb, RuleSet(), enumerate_paths(kg), known=known)
    m1 = ev.evaluate(test)
    m4 = Evaluator(kg, emb, RuleSet(), enumerate_paths(kg), known=known).evaluate(test, threads=4)
    assert m1.raw == m4.raw and m1.filtered == m4.filtered
    assert m1.n_queries == 2 * len(test)
    assert m1.filtered["MR"] <= m1.raw["MR"]
    assert 0 <= m1.filtered["MRR"] <= 1


@pytest.fixture
def figure_kg(kg_from):
    kg = kg_from(
        "Jonathan LivesIn York", "York CityOf England",
        "Jonathan BornIn Leeds", "Leeds LocatedIn England",
        "Anne BornIn York", "Jonathan StudiedIn York", "Jonathan PersonBornInCity York",
    )
    return kg


def test_explanation_lists_composed_path_and_rule(figure_kg):
    kg = figure_kg
    rid = kg.relation_id
    j, york = kg.entity_id("Jonathan"), kg.entity_id("York")
    index = PathIndex({(j, york): [((rid("BornIn"), rid("INV::BornIn")), 0.5), ((rid("LivesIn"),), 1.0)]})
    rule = CPRule(rid("PersonBornInCity"), (rid("BornIn"), rid("INV::BornIn")), 0.8, 0.4, 2)
    rules = RuleSet([rule])
    ex = explain((j, rid("PersonBornInCity"), york), york, rules, index, score=0.42)
    assert [s.path for s in ex.paths] == [(rid("BornIn"), rid("INV::BornIn")), (rid("LivesIn"),)]
    assert ex.paths[0].rule == rule and ex.paths[1].rule is None
    text = ex.format(kg)
    assert "Jonathan -[BornIn -> INV::BornIn]-> York" in text
    assert "rule: PersonBornInCity <= BornIn & INV::BornIn" in text


def test_explanation_direct_edge_only(figure_kg):
    kg = figure_kg
    rid = kg.relation_id
    j, york = kg.entity_id("Jonathan"), kg.entity_id("York")
    index = PathIndex({(j, york): [((rid("StudiedIn"),), 1.0)]})
    ex = explain((j, rid("LivesIn"), york), york, RuleSet(), index)
    assert len(ex.paths) == 1 and ex.paths[0].rule is None


def test_explanation_without_paths_or_path_term(figure_kg):
    kg = figure_kg
    rid = kg.relation_id
    anne, england = kg.entity_id("Anne"), kg.entity_id("England")
    ex = explain((anne, rid("LivesIn"), england), england, RuleSet(), PathIndex(), alpha_path=0.0)
    text = ex.format(kg)
    assert ex.paths == []
    assert "paths: none" in text
    assert "path term unused" in text


def test_evaluator_explain_uses_prediction(figure_kg):
    kg = figure_kg
    rng = np.random.default_rng(0)
    emb = EmbeddingStore(rng.normal(size=(kg.n_entities, 3)), rng.normal(size=(kg.n_base_relations, 3)))
    ev = Evaluator(kg, emb, RuleSet(), enumerate_paths(kg))
    query = (kg.entity_id("Anne"), kg.relation_id("LivesIn"), kg.entity_id("York"))
    pred = ev.predict(query, "tail")
    ex = ev.explain(query, pred, "tail")
    assert ex.predicted == pred
    assert ex.score == pytest.approx(ev.score_candidate(query[0], query[1], pred))


def test_on_demand_shortlist_stays_ahead(synthetic_kg):
    kg = synthetic_kg
    rng = np.random.default_rng(5)
    emb = EmbeddingStore(rng.normal(size=(kg.n_entities, 4)), rng.normal(size=(kg.n_base_relations, 4)))
    k = 10
    ev = Evaluator(kg, emb, RuleSet(), PathIndex(), alpha_path=5.0, on_demand_top_k=k)
    plain = Evaluator(kg, emb, RuleSet(), PathIndex(), alpha_path=0.0)
    for h, r, _ in kg.base_triples[:10].tolist():
        triple_only = plain.scores(h, r, "tail")
        top = set(np.argsort(triple_only, kind="stable")[:k].tolist())
        combined = ev.scores(h, r, "tail")
        order = np.argsort(combined, kind="stable")
        assert set(order[:k].tolist()) == top
        # outside the shortlist the triple-energy order is unchanged
        rest = [c for c in order[k:].tolist()]
        assert rest == sorted(rest, key=lambda c: (triple_only[c], c))
        for c in top:
            assert combined[c] == pytest.approx(ev.score_candidate(h, r, c))
