"""Shared deduplicated state graph with transition counts and discovery flags."""

from __future__ import annotations

import json
import threading
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .screen_model import parse_token

ACTION_KINDS = ("click", "type_text")


class GraphIntegrityError(Exception):
    pass


class GraphFormatError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, order=True)
class ActionSignature:
    kind: str
    target_token: str
    payload: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        parse_token(self.target_token)
        if (self.kind == "type_text") != (self.payload is not None):
            raise ValueError("payload is required for type_text and forbidden otherwise")

    @property
    def key(self) -> str:
        """Serialized form; also the lexicographic ordering key."""
        if self.payload is None:
            return f"{self.kind}@{self.target_token}"
        return f"{self.kind}@{self.target_token}#{self.payload}"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "target_token": self.target_token}
        if self.payload is not None:
            d["payload"] = self.payload
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSignature":
        return cls(d["kind"], d["target_token"], d.get("payload"))


@dataclass(frozen=True)
class TransitionRecord:
    from_state: str
    signature: ActionSignature
    to_state: str
    worker_id: str
    step_index: int
    was_new_state: bool
    was_new_edge: bool


class StateGraph:
    """G_t = (V_t, E_t) plus per-(state, signature) outcome counts.

    Every mutation happens under one lock, so discovery flags are decided
    in the same atomic step as the insertion they describe.
    """

    def __init__(self) -> None:
        self._lock = threading.RLock()
        self.nodes: set[str] = set()
        self.external_nodes: set[str] = set()
        # (s, sig) -> {s': count}
        self._outcomes: dict[tuple[str, ActionSignature], dict[str, int]] = {}
        self._visits: dict[tuple[str, ActionSignature], int] = {}
        self._signatures_from: dict[str, set[ActionSignature]] = defaultdict(set)
        self.cluster_members: dict[str, set[str]] = defaultdict(set)
        # bumped on every write touching (s, ., .); keys ambiguity caches
        self._version: dict[str, int] = defaultdict(int)

    # -- writes -------------------------------------------------------------

    def add_state(self, state: str) -> bool:
        """Insert a node; True only for the caller that actually inserted it."""
        with self._lock:
            if state in self.nodes:
                return False
            self.nodes.add(state)
            return True

    def add_member(self, state: str, observation_id: str) -> None:
        with self._lock:
            self.cluster_members[state].add(observation_id)

    def mark_external(self, state: str) -> None:
        with self._lock:
            self.external_nodes.add(state)

    def record_transition(
        self,
        from_state: str,
        sig: ActionSignature,
        to_state: str,
        worker: str = "w0",
        step_index: int = 0,
    ) -> TransitionRecord:
        with self._lock:
            if from_state not in self.nodes:
                raise GraphIntegrityError(f"unknown from_state {from_state}")
            new_state = to_state not in self.nodes
            if new_state:
                self.nodes.add(to_state)
            key = (from_state, sig)
            outcomes = self._outcomes.get(key)
            if outcomes is None:
                outcomes = self._outcomes[key] = {}
                self._signatures_from[from_state].add(sig)
            new_edge = to_state not in outcomes
            outcomes[to_state] = outcomes.get(to_state, 0) + 1
            self._visits[key] = self._visits.get(key, 0) + 1
            self._version[from_state] += 1
            return TransitionRecord(from_state, sig, to_state, worker, step_index, new_state, new_edge)

    # -- reads --------------------------------------------------------------

    def version(self, state: str) -> int:
        return self._version.get(state, 0)

    def visits(self, state: str, sig: ActionSignature) -> int:
        return self._visits.get((state, sig), 0)

    def signatures_from(self, state: str) -> list[ActionSignature]:
        with self._lock:
            return sorted(self._signatures_from.get(state, ()), key=lambda s: s.key)

    def outcome_counts(self, state: str, sig: ActionSignature) -> dict[str, int]:
        with self._lock:
            return dict(self._outcomes.get((state, sig), {}))

    def outcome_distribution(self, state: str, sig: ActionSignature) -> dict[str, float] | None:
        """Empirical P(s' | s, sig); None when the pair has never been executed."""
        with self._lock:
            counts = self._outcomes.get((state, sig))
            if not counts:
                return None
            total = self._visits[(state, sig)]
            return {dest: n / total for dest, n in counts.items()}

    def has_edge(self, from_state: str, sig: ActionSignature, to_state: str) -> bool:
        return to_state in self._outcomes.get((from_state, sig), {})

    def frontier_check(
        self, to_state: str, triple: tuple[str, ActionSignature, str]
    ) -> tuple[bool, bool]:
        with self._lock:
            s, sig, s2 = triple
            return to_state not in self.nodes, not self.has_edge(s, sig, s2)

    def edges(self) -> list[tuple[str, ActionSignature, str, int]]:
        with self._lock:
            out = [
                (s, sig, dest, n)
                for (s, sig), counts in self._outcomes.items()
                for dest, n in counts.items()
            ]
        out.sort(key=lambda e: (e[0], e[1].key, e[2]))
        return out

    def edge_count(self) -> int:
        with self._lock:
            return sum(len(c) for c in self._outcomes.values())

    def check_consistency(self) -> list[str]:
        """Return violations of the count and endpoint invariants (empty if sound)."""
        problems = []
        with self._lock:
            for key, counts in self._outcomes.items():
                s, sig = key
                if s not in self.nodes:
                    problems.append(f"edge source {s} not a node")
                for dest, n in counts.items():
                    if dest not in self.nodes:
                        problems.append(f"edge target {dest} not a node")
                    if n <= 0:
                        problems.append(f"non-positive count on {s} {sig.key} {dest}")
                if sum(counts.values()) != self._visits.get(key, 0):
                    problems.append(f"N({s}, {sig.key}) != sum of outcome counts")
        return problems

    def snapshot(self) -> dict:
        """Plain-data view used for equality checks and export."""
        with self._lock:
            return {
                "nodes": sorted(self.nodes),
                "external": sorted(self.external_nodes),
                "edges": [(s, sig.key, d, n) for s, sig, d, n in self.edges()],
                "members": {k: sorted(v) for k, v in sorted(self.cluster_members.items()) if v},
            }

    # -- persistence --------------------------------------------------------

    def export_graph(self, path: str | Path, config_echo: dict | None = None) -> None:
        with self._lock:
            edges = self.edges()
            manifest = {
                "type": "manifest",
                "format": "screensearch-graph",
                "version": 1,
                "nodes": len(self.nodes),
                "edges": len(edges),
            }
            if config_echo is not None:
                manifest["run_config"] = config_echo
            lines = [manifest]
            for node in sorted(self.nodes):
                lines.append({"type": "node", "id": node, "external": node in self.external_nodes})
            for s, sig, dest, n in edges:
                lines.append({"type": "edge", "from": s, "sig": sig.to_dict(), "to": dest, "count": n})
            for state in sorted(self.cluster_members):
                for obs in sorted(self.cluster_members[state]):
                    lines.append({"type": "member", "state": state, "obs": obs})
        with open(path, "w", encoding="utf-8") as fh:
            for rec in lines:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def import_graph(cls, path: str | Path) -> "StateGraph":
        graph = cls()
        seen_manifest = False
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise GraphFormatError(lineno, f"invalid JSON: {exc.msg}") from exc
                kind = rec.get("type") if isinstance(rec, dict) else None
                try:
                    if kind == "manifest":
                        if seen_manifest:
                            raise GraphFormatError(lineno, "duplicate manifest")
                        seen_manifest = True
                    elif not seen_manifest:
                        raise GraphFormatError(lineno, "record before manifest")
                    elif kind == "node":
                        graph.nodes.add(rec["id"])
                        if rec.get("external"):
                            graph.external_nodes.add(rec["id"])
                    elif kind == "edge":
                        count = int(rec["count"])
                        if count < 1:
                            raise GraphFormatError(lineno, "edge count must be >= 1")
                        sig = ActionSignature.from_dict(rec["sig"])
                        key = (rec["from"], sig)
                        outcomes = graph._outcomes.setdefault(key, {})
                        outcomes[rec["to"]] = outcomes.get(rec["to"], 0) + count
                        graph._visits[key] = graph._visits.get(key, 0) + count
                        graph._signatures_from[rec["from"]].add(sig)
                        graph._version[rec["from"]] += 1
                    elif kind == "member":
                        graph.cluster_members[rec["state"]].add(rec["obs"])
                    else:
                        raise GraphFormatError(lineno, f"unknown record type {kind!r}")
                except GraphFormatError:
                    raise
                except (KeyError, TypeError, ValueError) as exc:
                    raise GraphFormatError(lineno, f"bad {kind} record: {exc}") from exc
        if not seen_manifest:
            raise GraphFormatError(0, "missing manifest")
        problems = graph.check_consistency()
        if problems:
            raise GraphFormatError(0, "; ".join(problems[:5]))
        return graph
