"""Filtered sparse retrieval over structural signatures plus Jaccard verification.

Retrieval only has to get the right screen into the top-K; the bounded
Jaccard check decides whether a query merges into an existing state.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .screen_model import DEFAULT_EMBED_DIM, StructuralSignature, build_signature, cosine

DEFAULT_TAU = 0.93
DEFAULT_TOP_K = 20
# absorbs float rounding in weighted Jaccard sums (0.5*0.9 + 0.5*0.96 != 0.93 in binary)
SIMILARITY_EPS = 1e-9


class IndexIntegrityError(Exception):
    pass


class DedupConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DedupConfig:
    tau: float = DEFAULT_TAU
    lambda_ct: float = 0.5
    lambda_txt: float = 0.5
    top_k: int = DEFAULT_TOP_K
    dense_weight: float = 0.0
    embed_dim: int = DEFAULT_EMBED_DIM

    def __post_init__(self) -> None:
        if abs(self.lambda_ct + self.lambda_txt - 1.0) > 1e-9:
            raise DedupConfigError(
                f"Jaccard weights must sum to 1, got {self.lambda_ct} + {self.lambda_txt}"
            )
        if self.lambda_ct < 0 or self.lambda_txt < 0:
            raise DedupConfigError("Jaccard weights must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise DedupConfigError("tau must lie in [0, 1]")
        if self.top_k < 1:
            raise DedupConfigError("top_k must be >= 1")
        if self.dense_weight < 0:
            raise DedupConfigError("dense_weight must be non-negative")


@dataclass
class IndexedScreen:
    canonical_id: str
    signature: StructuralSignature
    rollout_group: str
    insert_seq: int = -1
    dedup_state_id: str = ""


@dataclass(frozen=True)
class RetrievalQuery:
    signature: StructuralSignature
    rollout_group_prefix: str = ""
    display_mode: str | None = None
    text_size_bin: int | None = None
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        # filters default to the query screen's own metadata
        if self.display_mode is None:
            object.__setattr__(self, "display_mode", self.signature.display_mode)
        if self.text_size_bin is None:
            object.__setattr__(self, "text_size_bin", self.signature.text_size_bin)


@dataclass(frozen=True)
class DedupDecision:
    state_id: str
    is_new: bool
    best_similarity: float
    matched_canonical_id: str | None = None


def jaccard_component(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    inter = len(a & b)
    return inter / (len(a) + len(b) - inter)


def sparse_similarity(
    q: StructuralSignature,
    c: StructuralSignature,
    lambda_ct: float = 0.5,
    lambda_txt: float = 0.5,
) -> float:
    if abs(lambda_ct + lambda_txt - 1.0) > 1e-9:
        raise DedupConfigError("Jaccard weights must sum to 1")
    return lambda_ct * jaccard_component(q.ct_tokens, c.ct_tokens) + lambda_txt * jaccard_component(
        q.txt_tokens, c.txt_tokens
    )


def is_near_duplicate(similarity: float, tau: float) -> bool:
    return similarity + SIMILARITY_EPS >= tau


@dataclass
class _Partition:
    postings: dict[str, list[int]] = field(default_factory=dict)
    empty: list[int] = field(default_factory=list)


class ScreenIndex:
    """Inverted index of structural tokens, partitioned by (display mode, text-size bin).

    Writes are serialized through one lock. Reads take the same lock, so a
    search never sees a half-updated posting list.
    """

    def __init__(self, config: DedupConfig | None = None):
        self.config = config or DedupConfig()
        self._screens: list[IndexedScreen] = []
        self._by_canonical: dict[str, IndexedScreen] = {}
        self._partitions: dict[tuple[str, int], _Partition] = {}
        self._df: dict[str, int] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._screens)

    @property
    def screens(self) -> list[IndexedScreen]:
        return list(self._screens)

    def get(self, canonical_id: str) -> IndexedScreen | None:
        return self._by_canonical.get(canonical_id)

    def vocabulary_size(self) -> int:
        return len(self._df)

    def idf(self, token: str) -> float:
        df = self._df.get(token, 0)
        if df == 0:
            return 0.0
        return math.log1p(len(self._screens) / df)

    def insert(self, screen: IndexedScreen) -> IndexedScreen:
        """Post a screen's tokens. Re-inserting an identical screen is a no-op."""
        with self._lock:
            existing = self._by_canonical.get(screen.canonical_id)
            if existing is not None:
                if existing.signature != screen.signature:
                    raise IndexIntegrityError(
                        f"canonical id {screen.canonical_id} already indexed with a different signature"
                    )
                return existing
            sig = screen.signature
            screen.insert_seq = len(self._screens)
            if not screen.dedup_state_id:
                screen.dedup_state_id = screen.canonical_id
            part = self._partitions.setdefault((sig.display_mode, sig.text_size_bin), _Partition())
            tokens = sig.tokens
            if not tokens:
                part.empty.append(screen.insert_seq)
            for token in tokens:
                part.postings.setdefault(token, []).append(screen.insert_seq)
                self._df[token] = self._df.get(token, 0) + 1
            self._screens.append(screen)
            self._by_canonical[screen.canonical_id] = screen
            return screen

    def search(self, q: RetrievalQuery) -> list[tuple[str, float]]:
        """Rank filtered screens by IDF-weighted token overlap.

        Screens with no shared token are not returned, except that an empty
        query matches empty screens (score 0).
        """
        with self._lock:
            part = self._partitions.get((q.display_mode, q.text_size_bin))
            if part is None:
                return []
            scores: dict[int, float] = {}
            qtokens = q.signature.tokens
            if qtokens:
                # fixed summation order keeps scores bit-reproducible
                for token in sorted(qtokens):
                    postings = part.postings.get(token)
                    if not postings:
                        continue
                    weight = self.idf(token)
                    for seq in postings:
                        scores[seq] = scores.get(seq, 0.0) + weight
            else:
                scores = {seq: 0.0 for seq in part.empty}
            prefix = q.rollout_group_prefix
            if self.config.dense_weight > 0.0 and q.signature.embedding is not None:
                for seq in scores:
                    emb = self._screens[seq].signature.embedding
                    if emb is not None:
                        scores[seq] += self.config.dense_weight * cosine(q.signature.embedding, emb)
            hits = [
                (score, seq)
                for seq, score in scores.items()
                if self._screens[seq].rollout_group.startswith(prefix)
            ]
            hits.sort(key=lambda h: (-h[0], h[1]))
            return [(self._screens[seq].canonical_id, score) for score, seq in hits[: q.top_k]]

    def dedup_decide(self, sig: StructuralSignature, query: RetrievalQuery) -> DedupDecision:
        """Verify the top-K candidates; merge into the best one at or above tau.

        Equal similarities keep the first returned candidate.
        """
        cfg = self.config
        with self._lock:
            best_sim = -1.0
            best: IndexedScreen | None = None
            for canonical_id, _score in self.search(query):
                cand = self._by_canonical[canonical_id]
                sim = sparse_similarity(sig, cand.signature, cfg.lambda_ct, cfg.lambda_txt)
                if sim > best_sim:
                    best_sim, best = sim, cand
            if best is not None and is_near_duplicate(best_sim, cfg.tau):
                return DedupDecision(best.dedup_state_id, False, best_sim, best.canonical_id)
            return DedupDecision(sig.canonical_id, True, max(best_sim, 0.0), None)

    def make_query(self, sig: StructuralSignature, rollout_group_prefix: str = "") -> RetrievalQuery:
        return RetrievalQuery(sig, rollout_group_prefix, top_k=self.config.top_k)

    def resolve(self, sig: StructuralSignature, rollout_group: str = "") -> tuple[DedupDecision, bool]:
        """Atomically deduplicate a screen and index it.

        Returns the decision and whether a new screen entry was indexed.
        """
        with self._lock:
            decision = self.dedup_decide(sig, self.make_query(sig, rollout_group))
            if sig.canonical_id in self._by_canonical:
                return decision, False
            self.insert(IndexedScreen(sig.canonical_id, sig, rollout_group, dedup_state_id=decision.state_id))
            return decision, True

    def stats(self) -> dict:
        with self._lock:
            return {
                "screens": len(self._screens),
                "states": len({s.dedup_state_id for s in self._screens}),
                "tokens": len(self._df),
                "partitions": len(self._partitions),
            }

    def save(self, path: str | Path, config_echo: dict | None = None) -> None:
        with self._lock, open(path, "w", encoding="utf-8") as fh:
            manifest = {
                "type": "manifest",
                "screens": len(self._screens),
                "tokens": len(self._df),
                "config": {
                    "tau": self.config.tau,
                    "lambda_ct": self.config.lambda_ct,
                    "lambda_txt": self.config.lambda_txt,
                    "top_k": self.config.top_k,
                    "dense_weight": self.config.dense_weight,
                    "embed_dim": self.config.embed_dim,
                },
            }
            if config_echo is not None:
                manifest["run_config"] = config_echo
            fh.write(json.dumps(manifest, sort_keys=True) + "\n")
            for s in self._screens:
                fh.write(
                    json.dumps(
                        {
                            "type": "screen",
                            "canonical_id": s.canonical_id,
                            "rollout_group": s.rollout_group,
                            "insert_seq": s.insert_seq,
                            "dedup_state_id": s.dedup_state_id,
                            "ct_tokens": sorted(s.signature.ct_tokens),
                            "txt_tokens": sorted(s.signature.txt_tokens),
                            "display_mode": s.signature.display_mode,
                            "text_size_bin": s.signature.text_size_bin,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str | Path) -> "ScreenIndex":
        with open(path, encoding="utf-8") as fh:
            lines = [(n, line) for n, line in enumerate(fh, 1) if line.strip()]
        if not lines:
            raise ValueError(f"{path}: empty index snapshot")
        header = json.loads(lines[0][1])
        if header.get("type") != "manifest":
            raise ValueError(f"{path}:1: expected manifest line")
        c = header["config"]
        index = cls(
            DedupConfig(
                tau=c["tau"],
                lambda_ct=c["lambda_ct"],
                lambda_txt=c["lambda_txt"],
                top_k=c["top_k"],
                dense_weight=c.get("dense_weight", 0.0),
                embed_dim=c.get("embed_dim", DEFAULT_EMBED_DIM),
            )
        )
        for lineno, line in lines[1:]:
            try:
                rec = json.loads(line)
                sig = build_signature(
                    rec["ct_tokens"],
                    rec["txt_tokens"],
                    rec["display_mode"],
                    rec["text_size_bin"],
                    index.config.embed_dim,
                )
                if sig.canonical_id != rec["canonical_id"]:
                    raise IndexIntegrityError("canonical id does not match tokens")
                index.insert(IndexedScreen(sig.canonical_id, sig, rec["rollout_group"], dedup_state_id=rec["dedup_state_id"]))
            except (KeyError, TypeError, ValueError, IndexIntegrityError) as exc:
                raise ValueError(f"{path}:{lineno}: bad screen record: {exc}") from exc
        return index
