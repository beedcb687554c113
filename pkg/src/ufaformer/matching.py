"""Minimal-cost one-to-one assignment.

The solver is the compiled ``_lsa`` extension when it is importable and the
pure-Python ``_lsa_py`` otherwise. Set ``UFAFORMER_PURE_PYTHON=1`` to force
the fallback.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _lsa_py

try:
    if os.environ.get("UFAFORMER_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _lsa as _compiled
except ImportError:
    _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    total_cost: float = 0.0

    @property
    def pred_indices(self) -> list[int]:
        return [p for p, _ in self.pairs]

    @property
    def gt_indices(self) -> list[int]:
        return [g for _, g in self.pairs]


def _solver(backend: str | None):
    backend = backend or BACKEND
    if backend == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled assignment backend is not built")
        return _compiled.solve
    if backend == "python":
        return _lsa_py.solve
    raise ValueError(f"unknown backend {backend!r}")


def linear_sum_assignment(cost, backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of a minimal assignment covering ``min(m, n)`` pairs."""
    cost = np.ascontiguousarray(np.asarray(cost, dtype=np.float64))
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    if cost.size == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    solve = _solver(backend)
    if cost.shape[0] <= cost.shape[1]:
        cols = np.asarray(solve(cost))
        return np.arange(cost.shape[0]), cols
    rows_for_cols = np.asarray(solve(np.ascontiguousarray(cost.T)))
    order = np.argsort(rows_for_cols)
    return rows_for_cols[order], order


def hungarian_match(cost, backend: str | None = None) -> MatchResult:
    if hasattr(cost, "detach"):
        cost = cost.detach().cpu().double().numpy()
    cost = np.asarray(cost, dtype=np.float64)
    rows, cols = linear_sum_assignment(cost, backend)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols)]
    total = math.fsum(cost[r, c] for r, c in pairs)
    return MatchResult(pairs, total)
