"""Structural screen signatures: grid-cell tokens, canonical IDs and a hashed embedding.

Every UI element is reduced to its 30x30 grid cell (taken from the bbox
center) and paired with its control label and its normalized text. The
resulting token sets are what retrieval, deduplication and the explorer
operate on.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

GRID = 30
DEFAULT_EMBED_DIM = 256
CANONICAL_ID_HEX = 32
DISPLAY_MODES = ("light", "dark")


@dataclass(frozen=True)
class UiElement:
    bbox: tuple[float, float, float, float]
    control_label: str
    text: str = ""
    executable: bool = False

    def __post_init__(self) -> None:
        left, top, right, bottom = self.bbox
        if not all(math.isfinite(v) for v in self.bbox):
            raise ValueError(f"non-finite bbox {self.bbox}")
        if left > right or top > bottom:
            raise ValueError(f"bbox not well-ordered: {self.bbox}")
        if not self.control_label:
            raise ValueError("control_label must be non-empty")


@dataclass(frozen=True)
class ScreenObservation:
    elements: tuple[UiElement, ...]
    screen_width: int
    screen_height: int
    text_size_bin: int = 100
    display_mode: str = "light"
    rollout_group: str = ""

    def __post_init__(self) -> None:
        if self.screen_width <= 0 or self.screen_height <= 0:
            raise ValueError("screen dimensions must be positive")
        if self.display_mode not in DISPLAY_MODES:
            raise ValueError(f"unknown display_mode {self.display_mode!r}")
        object.__setattr__(self, "elements", tuple(self.elements))

    def to_dict(self) -> dict:
        return {
            "elements": [
                {
                    "bbox": list(e.bbox),
                    "control_label": e.control_label,
                    "text": e.text,
                    "executable": e.executable,
                }
                for e in self.elements
            ],
            "screen_width": self.screen_width,
            "screen_height": self.screen_height,
            "text_size_bin": self.text_size_bin,
            "display_mode": self.display_mode,
            "rollout_group": self.rollout_group,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScreenObservation":
        elements = tuple(
            UiElement(
                bbox=tuple(float(v) for v in e["bbox"]),
                control_label=e["control_label"],
                text=e.get("text", ""),
                executable=bool(e.get("executable", False)),
            )
            for e in data["elements"]
        )
        return cls(
            elements=elements,
            screen_width=int(data["screen_width"]),
            screen_height=int(data["screen_height"]),
            text_size_bin=int(data.get("text_size_bin", 100)),
            display_mode=data.get("display_mode", "light"),
            rollout_group=data.get("rollout_group", ""),
        )


@dataclass(frozen=True)
class StructuralSignature:
    ct_tokens: frozenset[str]
    txt_tokens: frozenset[str]
    mode_tag: str
    text_size_tag: str
    canonical_id: str = ""
    embedding: np.ndarray = field(default=None, compare=False, repr=False)

    @property
    def display_mode(self) -> str:
        return self.mode_tag.split(":", 1)[1]

    @property
    def text_size_bin(self) -> int:
        return int(self.text_size_tag.split(":", 1)[1])

    @property
    def tokens(self) -> frozenset[str]:
        return self.ct_tokens | self.txt_tokens


def normalize_text(text: str) -> str:
    return " ".join(text.split()).lower()


def quantize_cell(
    bbox: tuple[float, float, float, float], screen_width: int, screen_height: int
) -> tuple[int, int]:
    """Map a bbox to its (row, col) cell on the 30x30 grid via the box center.

    Centers outside the screen are clamped into the border cells.
    """
    if screen_width <= 0 or screen_height <= 0:
        raise ValueError("screen dimensions must be positive")
    if not all(math.isfinite(v) for v in bbox):
        raise ValueError(f"non-finite bbox {bbox}")
    left, top, right, bottom = bbox
    cx = (left + right) / 2.0
    cy = (top + bottom) / 2.0
    # multiply before dividing so exact grid boundaries stay exact
    row = math.floor(cy * GRID / screen_height)
    col = math.floor(cx * GRID / screen_width)
    return min(max(row, 0), GRID - 1), min(max(col, 0), GRID - 1)


def cell_prefix(row: int, col: int) -> str:
    return f"r{row}_c{col}"


def ct_token(row: int, col: int, control_label: str) -> str:
    return f"{cell_prefix(row, col)}|T:{control_label}"


def txt_token(row: int, col: int, text: str) -> str:
    return f"{cell_prefix(row, col)}|X:{text}"


def parse_token(token: str) -> tuple[int, int, str, str]:
    """Split ``r<row>_c<col>|<T|X>:<value>`` into its parts."""
    cell, _, rest = token.partition("|")
    kind, sep, value = rest.partition(":")
    if not cell.startswith("r") or "_c" not in cell or not sep or kind not in ("T", "X"):
        raise ValueError(f"malformed structural token {token!r}")
    row_s, col_s = cell[1:].split("_c", 1)
    row, col = int(row_s), int(col_s)
    if not (0 <= row < GRID and 0 <= col < GRID):
        raise ValueError(f"cell out of range in {token!r}")
    return row, col, kind, value


def element_tokens(element: UiElement, screen_width: int, screen_height: int) -> tuple[str, str | None]:
    row, col = quantize_cell(element.bbox, screen_width, screen_height)
    text = normalize_text(element.text)
    return (
        ct_token(row, col, element.control_label),
        txt_token(row, col, text) if text else None,
    )


def canonical_serialization(
    tokens: Iterable[str], mode_tag: str, text_size_tag: str
) -> str:
    ordered = sorted(set(tokens), key=lambda t: t.encode("utf-8"))
    return "\n".join([*ordered, mode_tag, text_size_tag])


def canonical_state_id(sig: StructuralSignature) -> str:
    payload = canonical_serialization(sig.tokens, sig.mode_tag, sig.text_size_tag)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:CANONICAL_ID_HEX]


def token_bucket(token: str, dim: int) -> tuple[int, float]:
    """Stable (bucket, sign) for a token; independent of PYTHONHASHSEED."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    return (value >> 1) % dim, (1.0 if value & 1 else -1.0)


def embed(sig: StructuralSignature, dim: int = DEFAULT_EMBED_DIM) -> np.ndarray:
    """Signed feature-hash embedding of the structural tokens, L2-normalized."""
    if dim < 8:
        raise ValueError("embedding dim must be >= 8")
    vec = np.zeros(dim, dtype=np.float64)
    for token in sorted(sig.tokens):
        bucket, sign = token_bucket(token, dim)
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0.0:
        vec /= norm
    return vec


def build_signature(
    ct_tokens: Iterable[str],
    txt_tokens: Iterable[str],
    display_mode: str = "light",
    text_size_bin: int = 100,
    dim: int = DEFAULT_EMBED_DIM,
) -> StructuralSignature:
    """Assemble a signature (ID and embedding included) from raw token sets."""
    bare = StructuralSignature(
        ct_tokens=frozenset(ct_tokens),
        txt_tokens=frozenset(txt_tokens),
        mode_tag=f"mode:{display_mode}",
        text_size_tag=f"text_size:{text_size_bin}",
    )
    return StructuralSignature(
        ct_tokens=bare.ct_tokens,
        txt_tokens=bare.txt_tokens,
        mode_tag=bare.mode_tag,
        text_size_tag=bare.text_size_tag,
        canonical_id=canonical_state_id(bare),
        embedding=embed(bare, dim),
    )


def extract_signature(obs: ScreenObservation, dim: int = DEFAULT_EMBED_DIM) -> StructuralSignature:
    ct: set[str] = set()
    txt: set[str] = set()
    for element in obs.elements:
        c, x = element_tokens(element, obs.screen_width, obs.screen_height)
        ct.add(c)
        if x is not None:
            txt.add(x)
    return build_signature(ct, txt, obs.display_mode, obs.text_size_bin, dim)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def read_observations(path: str | Path) -> Iterator[ScreenObservation]:
    """Yield observations from a JSON-lines file (blank lines skipped)."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield ScreenObservation.from_dict(json.loads(line))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad observation: {exc}") from exc


def write_observations(path: str | Path, observations: Iterable[ScreenObservation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obs in observations:
            fh.write(json.dumps(obs.to_dict(), sort_keys=True) + "\n")
