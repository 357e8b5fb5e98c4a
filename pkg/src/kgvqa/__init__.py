"""Knowledge-graph-grounded multi-hop VQA benchmark construction, bias probing and causal evaluation."""

from __future__ import annotations

__version__ = "0.1.0"

from .answerers import (
    AnswerRecord, Answerer, HashAnswerer, OracleAnswerer, PoolAnswerer, RandomAnswerer,
    RolePickerAnswerer, VisionBiasedAnswerer, default_language_pool, parse_choice,
)
from .builder import BuildConfig, Dataset, MCQInstance, OptionRole, build_dataset, validate_instance
from .causal import InterventionKind, build_intervention_pairs, causal_report, delta_cp, estimate_effect
from .cave import CaveAgent, run_cave, stability_check
from .diversity import LexicalDiversity, hdd, mattr, mtld
from .evaluation import evaluate
from .graph import EntityMeta, KnowledgeGraph, load_graph
from .paths import QueryPath, sample_query_paths

__all__ = [
    "AnswerRecord", "Answerer", "BuildConfig", "CaveAgent", "Dataset", "EntityMeta", "HashAnswerer",
    "InterventionKind", "KnowledgeGraph", "LexicalDiversity", "MCQInstance", "OptionRole", "OracleAnswerer",
    "PoolAnswerer", "QueryPath", "RandomAnswerer", "RolePickerAnswerer", "VisionBiasedAnswerer",
    "build_dataset", "build_intervention_pairs", "causal_report", "default_language_pool", "delta_cp",
    "estimate_effect", "evaluate", "hdd", "load_graph", "mattr", "mtld", "parse_choice", "run_cave", "sample_query_paths",
    "stability_check", "validate_instance",
]
