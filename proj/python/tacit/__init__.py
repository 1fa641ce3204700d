"""Continual-learning text-to-SQL agents: corpus loading, execution-based
scoring, per-database memory and the evaluation harness."""

from ._core import (
    Corpus,
    MemoryStore,
    TacitError,
    agent_labels,
    classify_error,
    deltas,
    embed,
    evidence_coverage,
    execute,
    load_bird,
    outputs_match,
    replay_episode,
    report_text,
    round1,
    run_protocol,
    score,
)

__all__ = [
    "Corpus",
    "MemoryStore",
    "TacitError",
    "agent_labels",
    "classify_error",
    "deltas",
    "embed",
    "evidence_coverage",
    "execute",
    "load_bird",
    "outputs_match",
    "replay_episode",
    "report_text",
    "round1",
    "run_protocol",
    "score",
]
