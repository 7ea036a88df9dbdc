"""Predictor standardization and first-principal-component composites."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .panel import PanelDataset, PanelError

__all__ = [
    "CompositeResult",
    "CompositeSpec",
    "StandardizationStats",
    "ZeroVarianceError",
    "add_composite_outcome",
    "pca_first_component",
    "standardize_predictors",
]


class ZeroVarianceError(ValueError):
    """A predictor row is constant across units."""


@dataclass(frozen=True)
class StandardizationStats:
    """Per-predictor mean and population standard deviation across treated + donors."""

    mean: np.ndarray
    std: np.ndarray
    labels: tuple[str, ...] = ()


def standardize_predictors(X1, X0, labels: Sequence[str] = ()):
    """Z-score each predictor row across the J + 1 units.

    Uses the population (1/N) standard deviation. A constant row raises
    :class:`ZeroVarianceError` naming the predictor.

    Returns
    -------
    X1s, X0s, stats
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X0 = np.asarray(X0, dtype=np.float64)
    if X0.ndim != 2 or X1.shape != (X0.shape[0],):
        raise ValueError(f"shape mismatch: X1 {X1.shape}, X0 {X0.shape}")
    if X0.shape[0] < 1 or X0.shape[1] < 2:
        raise ValueError("need at least one predictor and two donors")
    full = np.column_stack([X1, X0])
    mean = full.mean(axis=1)
    std = full.std(axis=1)
    # relative test so rounding noise on a constant row is still caught
    scale = np.maximum(np.abs(mean), np.abs(full).max(axis=1))
    flat = std <= 1e-12 * np.maximum(scale, 1e-300)
    if flat.any():
        i = int(np.argmax(flat))
        name = labels[i] if i < len(labels) else f"#{i}"
        raise ZeroVarianceError(f"predictor {name} has zero variance across units")
    Z = (full - mean[:, None]) / std[:, None]
    return Z[:, 0].copy(), Z[:, 1:].copy(), StandardizationStats(mean, std, tuple(labels))


@dataclass(frozen=True)
class CompositeSpec:
    """Indicators pooled into one composite outcome.

    ``anchor`` names the indicator whose loading is made positive; it
    defaults to the first indicator.
    """

    indicators: tuple[str, ...]
    periods: tuple[int, int]
    anchor: str | None = None
    name: str = "composite"

    def __post_init__(self) -> None:
        object.__setattr__(self, "indicators", tuple(self.indicators))
        if len(self.indicators) < 2:
            raise ValueError("a composite needs at least 2 indicators")
        if len(set(self.indicators)) != len(self.indicators):
            raise ValueError("duplicate indicators")
        if self.anchor is None:
            object.__setattr__(self, "anchor", self.indicators[0])
        if self.anchor not in self.indicators:
            raise ValueError(f"anchor {self.anchor!r} is not one of the indicators")


@dataclass(frozen=True)
class CompositeResult:
    scores: dict[tuple[str, int], float]
    loadings: np.ndarray
    eigenvalue: float
    explained: float
    correlation: np.ndarray


def _indicator_matrix(data: PanelDataset, spec: CompositeSpec) -> tuple[list[tuple[str, int]], np.ndarray]:
    cells = []
    rows = []
    for unit in data.units:
        for period in data.periods_between(*spec.periods):
            values = [data.series_value(unit, name, period) for name in spec.indicators]
            if any(v is None for v in values):
                missing = [n for n, v in zip(spec.indicators, values) if v is None]
                raise PanelError(f"indicators {missing} missing for {unit!r} at {period}")
            cells.append((unit, period))
            rows.append(values)
    return cells, np.asarray(rows, dtype=np.float64).reshape(len(rows), len(spec.indicators))


def pca_first_component(data: PanelDataset, spec: CompositeSpec) -> CompositeResult:
    """Scores on the leading principal component of the pooled indicator panel.

    Indicators are z-scored over all (unit, period) observations in the
    range, so the loadings are the leading eigenvector of their correlation
    matrix. The sign is fixed by a positive loading on ``spec.anchor``.
    """
    cells, M = _indicator_matrix(data, spec)
    if M.shape[0] < 2:
        raise PanelError(f"insufficient data: {M.shape[0]} complete indicator observations")
    std = M.std(axis=0)
    if (std == 0).any():
        flat = [n for n, s in zip(spec.indicators, std) if s == 0]
        raise ZeroVarianceError(f"indicators {flat} are constant")
    Z = (M - M.mean(axis=0)) / std
    C = (Z.T @ Z) / Z.shape[0]
    eigvals, eigvecs = np.linalg.eigh(C)
    v = eigvecs[:, -1]
    if v[spec.indicators.index(spec.anchor)] < 0:
        v = -v
    scores = Z @ v
    return CompositeResult(
        scores={cell: float(s) for cell, s in zip(cells, scores)},
        loadings=v,
        eigenvalue=float(eigvals[-1]),
        explained=float(eigvals[-1] / eigvals.sum()),
        correlation=C,
    )


def add_composite_outcome(data: PanelDataset, spec: CompositeSpec) -> PanelDataset:
    """Store the composite scores as outcome ``spec.name``."""
    return data.with_outcome(spec.name, pca_first_component(data, spec).scores)
