"""Named RNG substreams derived from a single root seed.

Derivation hashes the full name path, so adding a worker or episode never
shifts the streams of existing ones.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(root: int, *names: object) -> int:
    path = "/".join([str(int(root)), *(str(n) for n in names)])
    return int.from_bytes(hashlib.sha256(path.encode("utf-8")).digest()[:8], "big")


def substream(root: int, *names: object) -> random.Random:
    return random.Random(derive_seed(root, *names))
