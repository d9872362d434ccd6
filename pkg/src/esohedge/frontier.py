"""Mean-variance frontier: root mean squared hedging error against endowment."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .lattice import MVSolution


def rmshe_at(sol: MVSolution, x):
    """sqrt(f0 (x - g0)^2 + h0) from the root node of the solved tree."""
    x = np.asarray(x, dtype=float)
    out = np.sqrt(sol.f0 * (x - sol.g0) ** 2 + sol.h0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SpecialPoint:
    label: str
    x: float
    rmshe: float


@dataclass(frozen=True)
class FrontierCurve:
    x: np.ndarray
    rmshe: np.ndarray
    apex: SpecialPoint
    special: tuple[SpecialPoint, ...] = field(default=())


def frontier(sol: MVSolution, x_min: float, x_max: float, n_samples: int,
             special: Optional[dict[str, tuple[float, float]]] = None) -> FrontierCurve:
    """Sample the frontier on a uniform grid.

    ``special`` maps a label (``"rn"``, ``"sr"``) to an ``(x0, rmshe)`` pair
    measured by simulating that strategy; those points need not lie on the
    curve.
    """
    if not x_min < x_max:
        raise ValueError("need x_min < x_max")
    if n_samples < 2:
        raise ValueError("need at least two samples")
    xs = np.linspace(x_min, x_max, n_samples)
    apex = SpecialPoint("star", sol.g0, math.sqrt(sol.h0))
    points = [apex]
    for label, (x, r) in (special or {}).items():
        points.append(SpecialPoint(label, float(x), float(r)))
    return FrontierCurve(xs, rmshe_at(sol, xs), apex, tuple(points))


def write_csv(curve: FrontierCurve, path) -> None:
    """Curve rows ``x, rmshe``, a blank line, then ``label, x, rmshe`` rows."""
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "rmshe"])
        for x, r in zip(curve.x, curve.rmshe):
            w.writerow([f"{x:.10g}", f"{r:.10g}"])
        w.writerow([])
        w.writerow(["label", "x", "rmshe"])
        for p in curve.special:
            w.writerow([p.label, f"{p.x:.10g}", f"{p.rmshe:.10g}"])
