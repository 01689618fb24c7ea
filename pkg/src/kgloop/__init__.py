"""Closed-loop knowledge-graph inference: CP-rule learning and rule-enhanced translational embeddings."""

__version__ = "0.1.0"

from kgloop.errors import DataError, KGLoopError, NumericError, ParseError, UndefinedScoreError
from kgloop.graph import KnowledgeGraph, Vocab, build_graph, load_concepts, load_triples, relation_category
from kgloop.paths import PathIndex, enumerate_paths, load_path_index, pcra_flow, save_path_index
from kgloop.rules import CPRule, RuleSet, ground_and_score, merge, mine_seed_rules, read_rules, write_rules

__all__ = [
    "CPRule", "DataError", "KGLoopError", "KnowledgeGraph", "NumericError", "ParseError", "PathIndex",
    "RuleSet", "UndefinedScoreError", "Vocab", "build_graph", "enumerate_paths", "ground_and_score",
    "load_concepts", "load_path_index", "load_triples", "merge", "mine_seed_rules", "pcra_flow",
    "read_rules", "relation_category", "save_path_index", "write_rules",
]
