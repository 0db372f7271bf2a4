"""Empirical probability measures on the real line.

Measures are weighted atom lists in canonical (sorted) form. All
transport distances are exact: on the line the optimal coupling is the
monotone (quantile) coupling, so W_q reduces to an integral of quantile
differences which is piecewise constant between cumulative-weight
breakpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted atoms on the line, sorted ascending, weights summing to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        wts = np.asarray(self.weights, dtype=float)
        if pts.ndim != 1 or wts.ndim != 1:
            raise ValueError("points and weights must be one-dimensional")
        if pts.size == 0:
            raise ValueError("measure needs at least one atom")
        if pts.size != wts.size:
            raise ValueError(f"length mismatch: {pts.size} points, {wts.size} weights")
        if np.any(wts < 0):
            raise ValueError("negative weight")
        total = wts.sum()
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"weights sum to {total}, not 1")
        pts.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @property
    def n_atoms(self) -> int:
        return self.points.size

    def shifted(self, c: float) -> "EmpiricalMeasure":
        """Translate every atom by c."""
        return EmpiricalMeasure(self.points + c, self.weights)

    def with_point(self, index: int, x: float) -> "EmpiricalMeasure":
        """Copy with one atom moved to x (re-canonicalized)."""
        pts = self.points.copy()
        pts[index] = x
        return make_empirical(pts, self.weights)


def make_empirical(samples, weights=None) -> EmpiricalMeasure:
    """Build a canonical empirical measure from samples.

    Default weights are uniform 1/n. Atoms are stably sorted so duplicate
    locations keep their weights.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 1:
        pts = pts.reshape(-1)
    if pts.size == 0:
        raise ValueError("empty samples")
    if weights is None:
        wts = np.full(pts.size, 1.0 / pts.size)
    else:
        wts = np.asarray(weights, dtype=float).reshape(-1)
        if wts.size != pts.size:
            raise ValueError(
                f"length mismatch: {pts.size} samples, {wts.size} weights"
            )
        if np.any(wts < 0):
            raise ValueError("negative weight")
        total = wts.sum()
        if total <= 0:
            raise ValueError("weights sum to zero")
        wts = wts / total
    order = np.argsort(pts, kind="stable")
    return EmpiricalMeasure(pts[order], wts[order])


def wq_distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure, q: int) -> float:
    """Exact W_q distance between two empirical measures, q in {1, 2}.

    Uses the quantile coupling: merge the cumulative-weight breakpoints of
    both measures; on each merged segment both quantile functions are
    constant, so the integral of |F_mu^{-1} - F_nu^{-1}|^q is a finite sum.
    """
    if q not in (1, 2):
        raise ValueError(f"q must be 1 or 2, got {q}")
    cum_mu = np.cumsum(mu.weights)
    cum_nu = np.cumsum(nu.weights)
    # Union of breakpoints in (0, 1]; segments between consecutive values.
    edges = np.union1d(cum_mu, cum_nu)
    edges = np.clip(edges, 0.0, 1.0)
    if edges[-1] < 1.0:
        edges = np.append(edges, 1.0)
    seg_hi = edges
    seg_lo = np.concatenate(([0.0], edges[:-1]))
    lengths = seg_hi - seg_lo
    mids = 0.5 * (seg_lo + seg_hi)
    # Right-continuous generalized inverse: atom index = first cum >= s.
    iq_mu = mu.points[np.searchsorted(cum_mu, mids, side="left").clip(max=mu.n_atoms - 1)]
    iq_nu = nu.points[np.searchsorted(cum_nu, mids, side="left").clip(max=nu.n_atoms - 1)]
    diff = np.abs(iq_mu - iq_nu)
    if q == 1:
        return float(np.sum(lengths * diff))
    return float(np.sqrt(np.sum(lengths * diff**2)))


def moments(mu: EmpiricalMeasure) -> tuple[float, float]:
    """Weighted mean and raw second moment."""
    mean = float(np.dot(mu.weights, mu.points))
    second = float(np.dot(mu.weights, mu.points**2))
    return mean, second


def quantile_atoms(x_grid, density, n: int) -> EmpiricalMeasure:
    """Compress a grid density to n uniform-weight atoms at mid-quantiles.

    Atom k sits at the (k + 1/2)/n quantile of the (normalized) density's
    CDF, found by linear interpolation of the cumulative trapezoid mass.
    """
    if n < 1:
        raise ValueError("need at least one atom")
    x = np.asarray(x_grid, dtype=float)
    f = np.clip(np.asarray(density, dtype=float), 0.0, None)
    dx = x[1] - x[0]
    cdf = np.concatenate(([0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * dx)))
    if cdf[-1] <= 0:
        raise ValueError("density with nonpositive mass")
    cdf = cdf / cdf[-1]
    levels = (np.arange(n) + 0.5) / n
    pts = np.interp(levels, cdf, x)
    return make_empirical(pts)


def w1_between_densities(x_grid: np.ndarray, f1: np.ndarray, f2: np.ndarray) -> float:
    """W1 distance between two grid densities via the CDF difference integral.

    Both densities must be sampled on the same uniform grid; they are
    normalized before comparison. Used by the solver's uniqueness probe.
    """
    dx = x_grid[1] - x_grid[0]
    c1 = np.cumsum(f1) * dx
    c2 = np.cumsum(f2) * dx
    if c1[-1] <= 0 or c2[-1] <= 0:
        raise ValueError("density with nonpositive mass")
    c1 = c1 / c1[-1]
    c2 = c2 / c2[-1]
    return float(np.sum(np.abs(c1 - c2)) * dx)
