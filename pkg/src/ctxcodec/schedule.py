"""Multi-step decode schedule: token counts per reveal step."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class DecodeSchedule:
    steps: tuple[int, ...]
    total: int

    def __post_init__(self):
        if sum(self.steps) != self.total:
            raise ValueError("schedule does not cover the grid")
        if any(k < 1 for k in self.steps):
            raise ValueError("every step must reveal at least one token")


def sinusoidal_schedule(n: int, t: int) -> DecodeSchedule:
    """Cosine-decay reveal counts k_1..k_t summing to n, few early / many late.

    The masked fraction after step i follows cos(pi*i / (2t)), so step i
    reveals n * (cos(pi*(i-1)/(2t)) - cos(pi*i/(2t))) tokens before rounding.
    Steps 1..t-1 round half-to-even, the final step absorbs the residue, and
    any step below 1 borrows from the current largest step.
    """
    if t < 1:
        raise ValueError("need at least one step")
    if n < t:
        raise ValueError(f"cannot reveal {n} tokens in {t} steps")
    edges = [math.cos(math.pi * i / (2 * t)) for i in range(t + 1)]
    raw = [n * (edges[i] - edges[i + 1]) for i in range(t)]
    ks = [round(v) for v in raw[:-1]]
    ks.append(n - sum(ks))
    while min(ks) < 1:
        lo = min(range(t), key=lambda i: ks[i])
        hi = max(range(t), key=lambda i: ks[i])
        need = 1 - ks[lo]
        give = min(need, ks[hi] - 1)
        ks[hi] -= give
        ks[lo] += give
    return DecodeSchedule(tuple(ks), n)
