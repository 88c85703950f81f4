"""Markovian projection of a control onto the stopped state.

Given a simulated ensemble, :func:`estimate_projection` estimates the
conditional expectation of the applied control given the current stopped
position, one time slice at a time, on a fixed spatial binning of the
domain: within each bin the estimate is the plain average of the control
values of the alive particles found there.  The result is a
:class:`DriftField`, a piecewise description of the feedback drift

    abar(t, x) = E[a_t | X_t = x, tau > t]   (zero outside the domain),

which can be evaluated anywhere via multilinear interpolation of the bin
values and turned back into a Markovian control with
:func:`as_markovian_control`.

Bin averages never leave the convex hull of the control values, so the
projected field inherits the control's bound; the estimator re-clips after
averaging to keep that exact under floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controls import MarkovianControl
from .dynamics import ParticleEnsemble, TimeGrid
from .geometry import DomainGeometry, domain_from_dict

__all__ = [
    "DriftField",
    "estimate_projection",
    "evaluate_drift",
    "as_markovian_control",
    "default_bins",
]


def default_bins(domain: DomainGeometry) -> tuple[int, ...]:
    """Default per-axis bin counts: 50 for an interval, 32x16 for a disc."""
    if domain.kind == "interval":
        return (50,)
    if domain.dim == 2:
        return (32, 16)
    return (16,) * domain.dim


@dataclass
class DriftField:
    """Piecewise-constant-in-time, binned-in-space drift field.

    Attributes
    ----------
    values : ndarray, shape (n_steps, n_bins, dim)
        Estimated drift per time slice and flat bin index (C order over
        the per-axis bins).
    counts : ndarray, shape (n_steps, n_bins)
        Alive samples behind each estimate; zero marks a bin filled from
        its nearest populated neighbour (or an entirely dead slice).
    bound : float
        Sup-norm bound inherited from the projected control.
    """

    domain: DomainGeometry
    grid: TimeGrid
    bins: tuple[int, ...]
    lows: np.ndarray
    widths: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    bound: float

    @property
    def n_bins(self) -> int:
        return int(np.prod(self.bins))

    def bin_centers(self) -> np.ndarray:
        """Centers of all bins, shape (n_bins, dim), C order."""
        axes = [
            self.lows[j] + (np.arange(m) + 0.5) * self.widths[j]
            for j, m in enumerate(self.bins)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def bin_index(self, x: np.ndarray) -> np.ndarray:
        """Flat bin index of each row of x, shape (n,)."""
        idx = np.empty((x.shape[0], len(self.bins)), dtype=np.int64)
        for j, m in enumerate(self.bins):
            raw = np.floor((x[:, j] - self.lows[j]) / self.widths[j]).astype(np.int64)
            idx[:, j] = np.clip(raw, 0, m - 1)
        return np.ravel_multi_index(tuple(idx.T), self.bins)

    def evaluate(self, t: float, x) -> np.ndarray:
        """Drift at time t and positions x (zero outside the domain).

        The time slice is the nearest one; space is interpolated
        multilinearly between bin centers, clamped at the outermost
        centers.
        """
        T = self.grid.horizon
        t = float(t)
        if t < -1e-9 * max(1.0, T) or t > T * (1.0 + 1e-9):
            raise ValueError(f"time {t} outside the field's horizon [0, {T}]")
        k = min(int(np.clip(round(t / self.grid.dt), 0, self.grid.n_steps - 1)),
                self.grid.n_steps - 1)
        pts = np.asarray(x, dtype=np.float64)
        single = pts.ndim == 1
        if single:
            pts = pts[None, :]
        if pts.shape[1] != self.domain.dim:
            raise ValueError(
                f"points have dimension {pts.shape[1]}, field has dimension {self.domain.dim}"
            )
        d = pts.shape[1]
        i0 = np.empty((pts.shape[0], d), dtype=np.int64)
        frac = np.empty((pts.shape[0], d))
        for j, m in enumerate(self.bins):
            g = (pts[:, j] - self.lows[j]) / self.widths[j] - 0.5
            if m == 1:
                i0[:, j] = 0
                frac[:, j] = 0.0
            else:
                base = np.clip(np.floor(g), 0, m - 2).astype(np.int64)
                i0[:, j] = base
                frac[:, j] = np.clip(g - base, 0.0, 1.0)
        vals = self.values[k]
        out = np.zeros((pts.shape[0], d))
        for corner in range(1 << d):
            weight = np.ones(pts.shape[0])
            idx = i0.copy()
            for j in range(d):
                if corner >> j & 1:
                    idx[:, j] += 1
                    weight = weight * frac[:, j]
                else:
                    weight = weight * (1.0 - frac[:, j])
            flat = np.ravel_multi_index(tuple(idx.T), self.bins)
            out += weight[:, None] * vals[flat]
        inside = self.domain.signed_distance(pts) < 0
        out[~inside] = 0.0
        return out[0] if single else out

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "horizon": self.grid.horizon,
            "dt": self.grid.dt,
            "bins": list(self.bins),
            "lows": self.lows.tolist(),
            "widths": self.widths.tolist(),
            "bound": self.bound,
            "values": self.values.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "DriftField":
        domain = domain_from_dict(spec["domain"])
        grid = TimeGrid(spec["horizon"], spec["dt"])
        bins = tuple(int(m) for m in spec["bins"])
        values = np.asarray(spec["values"], dtype=np.float64)
        counts = np.asarray(spec["counts"], dtype=np.int64)
        return cls(
            domain=domain,
            grid=grid,
            bins=bins,
            lows=np.asarray(spec["lows"], dtype=np.float64),
            widths=np.asarray(spec["widths"], dtype=np.float64),
            values=values,
            counts=counts,
            bound=float(spec["bound"]),
        )


def estimate_projection(ensemble: ParticleEnsemble, bins=None) -> DriftField:
    """Estimate the conditional drift field of an ensemble's control.

    Parameters
    ----------
    ensemble : ParticleEnsemble
        Simulation output carrying paths, controls, and alive flags.
    bins : int or sequence of int, optional
        Bins per axis over the domain's bounding box; defaults per domain
        kind (50 for intervals, 32x16 for discs).

    Returns
    -------
    DriftField
        Bin averages of the control given the stopped position, per time
        slice.  Empty bins inside slices that still have survivors borrow
        the value of the nearest populated bin; entirely dead slices are
        zero.
    """
    domain = ensemble.domain
    d = ensemble.dim
    if bins is None:
        bins = default_bins(domain)
    elif np.isscalar(bins):
        bins = (int(bins),) * d
    else:
        bins = tuple(int(m) for m in bins)
    if len(bins) != d or any(m < 1 for m in bins):
        raise ValueError(f"bins {bins} must give a positive count per axis (dim {d})")

    lo, hi = domain.bounding_box()
    widths = (hi - lo) / np.asarray(bins, dtype=np.float64)
    K = ensemble.grid.n_steps
    n_bins = int(np.prod(bins))
    bound = float(ensemble.control_bound)

    field = DriftField(
        domain=domain,
        grid=ensemble.grid,
        bins=bins,
        lows=lo.astype(np.float64),
        widths=widths,
        values=np.zeros((K, n_bins, d)),
        counts=np.zeros((K, n_bins), dtype=np.int64),
        bound=bound,
    )
    centers = field.bin_centers()

    for k in range(K):
        mask = ensemble.alive[:, k]
        if not mask.any():
            continue
        pos = ensemble.paths[mask, k]
        ctl = ensemble.controls[mask, k]
        flat = field.bin_index(pos)
        counts = np.bincount(flat, minlength=n_bins)
        vals = np.empty((n_bins, d))
        for j in range(d):
            vals[:, j] = np.bincount(flat, weights=ctl[:, j], minlength=n_bins)
        filled = counts > 0
        vals[filled] /= counts[filled, None]
        vals[~filled] = 0.0
        # averaging keeps values in the control's convex hull; re-clip to
        # erase ulp-level excursions past the declared bound
        norms = np.sqrt((vals * vals).sum(axis=1))
        over = norms > bound
        if over.any():
            vals[over] *= (bound / norms[over])[:, None]
        if not filled.all():
            empty_idx = np.flatnonzero(~filled)
            full_idx = np.flatnonzero(filled)
            d2 = ((centers[empty_idx, None, :] - centers[None, full_idx, :]) ** 2).sum(
                axis=2
            )
            vals[empty_idx] = vals[full_idx[np.argmin(d2, axis=1)]]
        field.values[k] = vals
        field.counts[k] = counts
    return field


def evaluate_drift(field: DriftField, t: float, x) -> np.ndarray:
    """Evaluate a drift field; see :meth:`DriftField.evaluate`."""
    return field.evaluate(t, x)


def as_markovian_control(field: DriftField) -> MarkovianControl:
    """Wrap a drift field as a feedback control with the field's bound."""
    return MarkovianControl(field.evaluate, bound=field.bound)
