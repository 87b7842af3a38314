"""Threshold grid search and risk-coverage sweeps."""

from __future__ import annotations

import csv

import numpy as np

from .data import Dataset
from .gating import ScoreTable, SelectiveMetrics, Thresholds, evaluate_table
from .model import MultiExitModel

ALPHA_GRID = (0.75, 0.8, 0.85, 0.9, 0.95)
BETA_GRID = (0.55, 0.6, 0.65, 0.7, 0.75)


def _rank_key(m: SelectiveMetrics):
    # lower risk, then higher coverage, then higher speedup, then lower alpha
    return (m.risk, -m.coverage, -m.speedup, m.alpha)


def select_best(grid: list[SelectiveMetrics]) -> SelectiveMetrics:
    return min(grid, key=_rank_key)


def grid_search(
    model: MultiExitModel | None,
    val: Dataset | None,
    alphas=ALPHA_GRID,
    betas=BETA_GRID,
    table: ScoreTable | None = None,
    min_coverage: float = 0.0,
):
    """Evaluate every (alpha, beta) cell; return the best thresholds and the full grid.

    Cells are listed alpha-major. Cells whose coverage falls below
    ``min_coverage`` are skipped when picking the winner (unless none
    qualify), so a user coverage requirement can be imposed.
    """
    if not len(alphas) or not len(betas):
        raise ValueError("threshold grids must be non-empty")
    for v in (*alphas, *betas):
        if not 0 < v < 1:
            raise ValueError(f"grid value {v} outside (0, 1)")
    if table is None:
        if val is None or len(val) == 0:
            raise ValueError("empty validation set")
        table = ScoreTable.from_model(model, val)
    grid = [evaluate_table(table, Thresholds(a, b))[0] for a in alphas for b in betas]
    eligible = [m for m in grid if m.coverage >= min_coverage] or grid
    best = select_best(eligible)
    return Thresholds(best.alpha, best.beta), grid


def risk_coverage_curve(
    model: MultiExitModel | None, ds: Dataset | None, alpha: float, betas, table=None
) -> list[SelectiveMetrics]:
    """Metrics along an ascending beta sweep at fixed alpha."""
    betas = list(betas)
    if any(b2 < b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("beta sweep must be sorted ascending")
    table = table or ScoreTable.from_model(model, ds)
    return [evaluate_table(table, Thresholds(alpha, b))[0] for b in betas]


def write_curve_csv(curve: list[SelectiveMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["beta", "coverage", "risk"])
        for m in curve:
            w.writerow([repr(m.beta), repr(m.coverage), repr(m.risk)])


def default_beta_sweep(points: int = 21) -> np.ndarray:
    return np.round(np.linspace(0.0, 1.0, points), 10)
