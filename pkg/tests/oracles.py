"""Independent reference implementations used by the oracle tests.

These are deliberately naive: full scans, no posting lists, no caches.
"""

from __future__ import annotations

import math
import random
from collections import Counter

from screensearch.screen_model import build_signature


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def sparse_sim(q, c) -> float:
    return 0.5 * jaccard(q.ct_tokens, c.ct_tokens) + 0.5 * jaccard(q.txt_tokens, c.txt_tokens)


def brute_search(screens, q_sig, prefix, mode, size, top_k):
    """Exhaustive scan. ``screens`` is [(canonical_id, signature, group)] in insert order."""
    n = len(screens)
    df = Counter(t for _, sig, _ in screens for t in sig.tokens)
    qtokens = q_sig.tokens
    hits = []
    for seq, (cid, sig, group) in enumerate(screens):
        if sig.display_mode != mode or sig.text_size_bin != size or not group.startswith(prefix):
            continue
        shared = qtokens & sig.tokens
        if qtokens:
            if not shared:
                continue
            score = 0.0
            for t in sorted(shared):
                score += math.log1p(n / df[t])
        else:
            if sig.tokens:
                continue
            score = 0.0
        hits.append((-score, seq, cid))
    hits.sort()
    return [(cid, -neg) for neg, _, cid in hits[:top_k]]


def brute_dedup(screens, state_of, q_sig, candidates, tau):
    """Best verified candidate among ``candidates`` (ids in returned order), first wins ties."""
    sig_of = {cid: sig for cid, sig, _ in screens}
    best, best_sim = None, -1.0
    for cid in candidates:
        s = sparse_sim(q_sig, sig_of[cid])
        if s > best_sim:
            best, best_sim = cid, s
    if best is not None and best_sim + 1e-9 >= tau:
        return state_of[best], False, best_sim
    return q_sig.canonical_id, True, max(best_sim, 0.0)


def random_corpus(rng: random.Random, n: int, vocab: int = 60):
    """Screens built from a small vocabulary, with planted near-duplicates."""
    modes = ("light", "dark")
    sizes = (100, 125)
    groups = ("app/a", "app/b", "other")
    out = []
    for i in range(n):
        if out and rng.random() < 0.3:
            _, base, group = out[rng.randrange(len(out))]
            ct, txt = set(base.ct_tokens), set(base.txt_tokens)
            for _ in range(rng.randint(0, 2)):
                if ct and rng.random() < 0.5:
                    ct.discard(rng.choice(sorted(ct)))
                ct.add(f"r{rng.randrange(30)}_c{rng.randrange(30)}|T:w{rng.randrange(vocab)}")
            mode, size = base.display_mode, base.text_size_bin
        else:
            k = rng.randint(0, 14)
            ct = {f"r{rng.randrange(6)}_c{rng.randrange(6)}|T:w{rng.randrange(vocab)}" for _ in range(k)}
            txt = {f"r{rng.randrange(6)}_c{rng.randrange(6)}|X:w{rng.randrange(vocab)}" for _ in range(rng.randint(0, k))}
            mode, size, group = rng.choice(modes), rng.choice(sizes), rng.choice(groups)
        sig = build_signature(ct, txt, mode, size, 16)
        out.append((sig.canonical_id, sig, group))
    # canonical ids must be unique per signature; drop exact repeats
    seen, unique = set(), []
    for item in out:
        if item[0] not in seen:
            seen.add(item[0])
            unique.append(item)
    return unique


def puct_argmax(names, q, n, priors, c):
    """Brute-force argmax of Q + U with (higher prior, smaller key) tie-breaks."""
    total = sum(n.values())
    scored = []
    for name, p in zip(names, priors):
        value = q.get(name, 0.0) + c * p * math.sqrt(total) / (1 + n.get(name, 0))
        scored.append((value, p, name))
    best_value = max(v for v, _, _ in scored)
    tied = [(p, name) for v, p, name in scored if v == best_value]
    top_prior = max(p for p, _ in tied)
    return min(name for p, name in tied if p == top_prior)
