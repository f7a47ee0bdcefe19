"""Matched-action outcome dispersion and the shrunken ambiguity score."""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .state_graph import StateGraph


@dataclass(frozen=True)
class AmbiguityParams:
    kappa: float = 5.0
    u0: float = 0.5

    def __post_init__(self) -> None:
        if not self.kappa > 0:
            raise ValueError(f"kappa must be > 0, got {self.kappa}")
        if not 0.0 <= self.u0 <= 1.0:
            raise ValueError(f"u0 must lie in [0, 1], got {self.u0}")


@dataclass(frozen=True)
class AmbiguityEstimate:
    dispersion: float
    evidence: int
    confidence: float
    score: float


def normalized_entropy(p: Sequence[float] | Mapping[str, float]) -> float:
    """Shannon entropy divided by log(support size); 0 for a point mass."""
    probs = list(p.values()) if isinstance(p, Mapping) else list(p)
    if not probs:
        raise ValueError("entropy of an empty distribution is undefined")
    if any(x < 0.0 for x in probs) or abs(math.fsum(probs) - 1.0) > 1e-9:
        raise ValueError("probabilities must be non-negative and sum to 1")
    support = [x for x in probs if x > 0.0]
    k = len(support)
    if k <= 1:
        return 0.0
    h = -sum(x * math.log(x) for x in support)
    return min(1.0, max(0.0, h / math.log(k)))


def dispersion(state: str, graph: StateGraph) -> tuple[float, int]:
    """Visit-weighted normalized outcome entropy over signatures executed from ``state``.

    Returns (D, n_s); D is 0 when there is no evidence.
    """
    weighted = 0.0
    total = 0
    for sig in graph.signatures_from(state):
        counts = graph.outcome_counts(state, sig)
        n = sum(counts.values())
        if n == 0:
            continue
        weighted += n * normalized_entropy([c / n for c in counts.values()])
        total += n
    if total == 0:
        return 0.0, 0
    return weighted / total, total


def shrink(d: float, n: int, params: AmbiguityParams) -> AmbiguityEstimate:
    rho = n / (n + params.kappa)
    score = rho * d + (1.0 - rho) * params.u0
    return AmbiguityEstimate(d, n, rho, min(1.0, max(0.0, score)))


def ambiguity_score(state: str, graph: StateGraph, params: AmbiguityParams) -> AmbiguityEstimate:
    d, n = dispersion(state, graph)
    return shrink(d, n, params)


class AmbiguityTracker:
    """Per-state cache of ambiguity estimates, invalidated by graph version bumps."""

    def __init__(self, graph: StateGraph, params: AmbiguityParams | None = None):
        self.graph = graph
        self.params = params or AmbiguityParams()
        self._cache: dict[str, tuple[int, AmbiguityEstimate]] = {}
        self._lock = threading.Lock()

    def estimate(self, state: str) -> AmbiguityEstimate:
        version = self.graph.version(state)
        with self._lock:
            hit = self._cache.get(state)
        if hit is not None and hit[0] == version:
            return hit[1]
        est = ambiguity_score(state, self.graph, self.params)
        with self._lock:
            self._cache[state] = (version, est)
        return est

    def score(self, state: str) -> float:
        return self.estimate(state).score


def write_report(graph: StateGraph, params: AmbiguityParams, path: str | Path, config_echo: dict | None = None) -> int:
    """Write one CSV row per state: state_id, n_s, D, rho, u. Returns the row count."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if config_echo is not None:
            fh.write("# config: " + json.dumps(config_echo, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["state_id", "n_s", "D", "rho", "u"])
        for state in sorted(graph.nodes):
            est = ambiguity_score(state, graph, params)
            writer.writerow([state, est.evidence, repr(est.dispersion), repr(est.confidence), repr(est.score)])
            rows += 1
    return rows
