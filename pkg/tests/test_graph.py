import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgloop.errors import DataError, ParseError
from kgloop.graph import INVERSE_PREFIX, KnowledgeGraph, build_graph, load_concepts, load_triples, relation_category


def test_load_triples_single_line(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("Jonathan\tBornIn\tYork\n", encoding="utf-8")
    assert load_triples(p) == [("Jonathan", "BornIn", "York")]


def test_load_triples_empty_file(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("", encoding="utf-8")
    assert load_triples(p) == []


def test_load_triples_two_fields_names_line(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("a\tr\tb\n# comment\nx\ty\n", encoding="utf-8")
    with pytest.raises(ParseError, match=":3:"):
        load_triples(p)


def test_load_triples_keeps_duplicates_and_skips_comments(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("# header\na\tr\tb\na\tr\tb\n\n", encoding="utf-8")
    assert load_triples(p) == [("a", "r", "b")] * 2


def test_load_triples_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_triples(tmp_path / "nope.tsv")


def test_load_concepts_accumulates(tmp_path):
    p = tmp_path / "c.tsv"
    p.write_text("e1\tPerson\ne1\tActor\n", encoding="utf-8")
    kg = build_graph([("e1", "r", "e2")], load_concepts(p))
    assert {kg.concept_vocab.token(c) for c in kg.concepts[kg.entity_id("e1")]} == {"Person", "Actor"}
    assert kg.entity_id("e2") not in kg.concepts


def test_augmentation_adds_inverse(kg_from):
    kg = kg_from("a r b")
    assert len(kg.triples) == 2
    a, b = kg.entity_id("a"), kg.entity_id("b")
    r = kg.relation_id("r")
    assert kg.contains(a, r, b)
    assert kg.contains(b, kg.inverse(r), a)
    assert kg.relation_token(kg.inverse(r)) == INVERSE_PREFIX + "r"


def test_no_augmentation(kg_from):
    kg = kg_from("a r b", augment=False)
    assert len(kg.triples) == 1


def test_duplicates_removed(kg_from):
    kg = kg_from("a r b", "a r b")
    assert len(kg.base_triples) == 1


def test_unknown_entity_in_test_rejected(kg_from):
    kg = kg_from("a r b")
    with pytest.raises(DataError, match="'c'"):
        kg.encode([("a", "r", "c")], "test")


def test_reserved_prefix_rejected():
    with pytest.raises(DataError):
        build_graph([("a", "INV::r", "b")])


@pytest.mark.parametrize(
    "specs, expected",
    [
        (["a r b"], "1-1"),
        (["a r b", "a r c"], "1-N"),
        (["a r b", "c r b"], "N-1"),
        (["a r b", "c r b", "a r d", "c r d"], "N-N"),
    ],
)
def test_relation_category(kg_from, specs, expected):
    kg = kg_from(*specs)
    assert relation_category(kg, kg.relation_id("r")) == expected


def test_relation_category_counts_oracle(kg_from):
    # tph = 2 triples / 1 head, hpt = 2 / 2 tails
    kg = kg_from("a r b", "a r c", "x s y")
    rows = kg.index_r[kg.relation_id("r")]
    assert len(rows) / len({h for h, _, _ in rows}) == 2.0
    assert len(rows) / len({t for _, _, t in rows}) == 1.0


def test_relation_category_rejects_empty():
    kg = KnowledgeGraph.__new__(KnowledgeGraph)
    kg.n_base_relations = 1
    kg.index_r = {}
    kg.relations = build_graph([("a", "r", "b")]).relations
    with pytest.raises(DataError):
        relation_category(kg, 0)


token = st.sampled_from([f"e{i}" for i in range(8)])
rel_token = st.sampled_from([f"r{i}" for i in range(3)])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(token, rel_token, token), min_size=1, max_size=40))
def test_index_consistency_and_inverse_closure(triples):
    kg = build_graph(triples)
    stored = set(map(tuple, kg.triples.tolist()))
    assert len(stored) == len(kg.triples)
    # every index agrees with the triple list
    assert {(h, r, t) for (h, r), ts in kg.index_hr.items() for t in ts} == stored
    assert {(h, r, t) for (t, r), hs in kg.index_tr.items() for h in hs} == stored
    assert {(h, r, t) for (h, t), rs in kg.index_ht.items() for r in rs} == stored
    assert {x for rows in kg.index_r.values() for x in rows} == stored
    for h, r, t in stored:
        assert (t, kg.inverse(r), h) in stored
        assert kg.inverse(kg.inverse(r)) == r
    for vocab in (kg.entities, kg.relations):
        assert [vocab.id(vocab.token(i)) for i in range(len(vocab))] == list(range(len(vocab)))


def test_rebuild_yields_identical_indexes(synthetic_kg):
    kg = synthetic_kg
    rebuilt = KnowledgeGraph(kg.entities, kg.relations, kg.concept_vocab, kg.n_base_relations,
                             np.array(kg.triples), kg.concepts, kg.augmented)
    assert rebuilt.index_hr == kg.index_hr
    assert rebuilt.index_tr == kg.index_tr
    assert rebuilt.index_ht == kg.index_ht
    assert rebuilt.index_r == kg.index_r


def test_triples_are_read_only(synthetic_kg):
    with pytest.raises(ValueError):
        synthetic_kg.triples[0, 0] = 1
