"""Mergeable relative-error quantile sketch for signed values.

Values are bucketed on a logarithmic grid so that every reported quantile
is within a relative error ``alpha`` of an exact order statistic. Values
with magnitude below ``min_value`` collapse to zero.
"""

from __future__ import annotations

import math

import numpy as np


class QuantileSketch:
    def __init__(self, alpha: float = 1e-3, min_value: float = 1e-9):
        self.alpha = alpha
        self.gamma = (1 + alpha) / (1 - alpha)
        self._log_gamma = math.log(self.gamma)
        self.min_value = min_value
        self.pos: dict[int, int] = {}
        self.neg: dict[int, int] = {}
        self.zero = 0
        self.count = 0

    def _index(self, mag: np.ndarray) -> np.ndarray:
        return np.ceil(np.log(mag) / self._log_gamma).astype(np.int64)

    def _value(self, idx: int) -> float:
        return 2.0 * self.gamma**idx / (self.gamma + 1.0)

    def add(self, values) -> None:
        v = np.asarray(values, dtype=float).ravel()
        small = np.abs(v) < self.min_value
        self.zero += int(small.sum())
        for store, part in ((self.pos, v[~small & (v > 0)]), (self.neg, -v[~small & (v < 0)])):
            if part.size:
                idx, cnt = np.unique(self._index(part), return_counts=True)
                for i, c in zip(idx.tolist(), cnt.tolist()):
                    store[i] = store.get(i, 0) + c
        self.count += v.size

    def merge(self, other: "QuantileSketch") -> None:
        if other.gamma != self.gamma:
            raise ValueError("cannot merge sketches with different accuracy")
        for mine, theirs in ((self.pos, other.pos), (self.neg, other.neg)):
            for i, c in theirs.items():
                mine[i] = mine.get(i, 0) + c
        self.zero += other.zero
        self.count += other.count

    def items(self) -> list[tuple[float, int]]:
        """Representative values with counts in ascending order."""
        out = [(-self._value(i), self.neg[i]) for i in sorted(self.neg, reverse=True)]
        if self.zero:
            out.append((0.0, self.zero))
        out.extend((self._value(i), self.pos[i]) for i in sorted(self.pos))
        return out

    def quantile(self, q: float) -> float:
        if self.count == 0:
            raise ValueError("empty sketch")
        rank = max(int(math.ceil(q * self.count)), 1)
        seen = 0
        for value, c in self.items():
            seen += c
            if seen >= rank:
                return value
        return self.items()[-1][0]
