"""Conditional costs and conditional laws of killed ensembles.

All statistics here condition on survival: the running cost at time t
averages f(X_t, a_t) over the particles still alive at t, the terminal
cost averages g(X_T) over the survivors at the horizon, and
:func:`conditional_marginal` returns the positions of the survivors at a
given time.  When no particle survives, the conditional cost is infinite
by convention and :class:`DeadEnsembleError` signals the empty
conditioning event.

Cost uncertainty comes from a Poisson bootstrap over particles: every
resample reweights whole trajectories, so the running and terminal parts
stay correlated and the reported standard error applies to their sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .dynamics import ParticleEnsemble

__all__ = [
    "CostSpec",
    "CostReport",
    "CostComparison",
    "SurvivalCurve",
    "ConditionalMarginal",
    "DeadEnsembleError",
    "quadratic_cost",
    "check_growth",
    "check_control_convexity",
    "survival_curve",
    "conditional_marginal",
    "wasserstein1",
    "compute_cost",
    "compare_costs",
]

LOW_SURVIVORS_WARN = 100
_BLOCK = 64


class DeadEnsembleError(RuntimeError):
    """Raised when a statistic conditions on an event with no survivors."""


@dataclass(frozen=True)
class CostSpec:
    """Running and terminal cost with a declared quadratic growth budget.

    ``running(x, a)`` and ``terminal(x)`` are vectorized over rows.  The
    pair must satisfy |f| + |g| <= growth_constant * (1 + |x|^2 + |a|^2),
    which :func:`check_growth` spot-checks.
    """

    running: object
    terminal: object
    growth_constant: float = 2.0
    spec: dict | None = None


def quadratic_cost(f_tilde=None, terminal=None, growth_constant: float = 2.0) -> CostSpec:
    """The default cost: f(x, a) = |a|^2 / 2 + f_tilde(x), g = terminal.

    Both optional pieces default to zero.
    """

    def running(x, a):
        base = 0.5 * (a * a).sum(axis=1)
        if f_tilde is not None:
            base = base + f_tilde(x)
        return base

    def term(x):
        if terminal is None:
            return np.zeros(x.shape[0])
        return terminal(x)

    return CostSpec(running=running, terminal=term, growth_constant=growth_constant)


def check_growth(
    cost: CostSpec,
    domain,
    control_bound: float,
    n_samples: int = 512,
    seed: int = 0,
) -> float:
    """Spot-check the quadratic growth budget on random (x, a) pairs.

    Raises ValueError when |f| + |g| exceeds the declared budget; returns
    the largest observed ratio otherwise.
    """
    rng = np.random.default_rng(seed)
    x = domain.sample_closure(rng, n_samples)
    amax = control_bound if np.isfinite(control_bound) and control_bound > 0 else 10.0
    a = rng.normal(size=(n_samples, domain.dim))
    a *= (amax * rng.uniform(size=(n_samples, 1)) ** (1.0 / domain.dim)) / np.linalg.norm(
        a, axis=1, keepdims=True
    )
    lhs = np.abs(np.asarray(cost.running(x, a), dtype=np.float64)) + np.abs(
        np.asarray(cost.terminal(x), dtype=np.float64)
    )
    rhs = cost.growth_constant * (1.0 + (x * x).sum(axis=1) + (a * a).sum(axis=1))
    ratio = lhs / rhs
    worst = float(ratio.max())
    if worst > 1.0 + 1e-9:
        i = int(ratio.argmax())
        raise ValueError(
            "cost violates its quadratic growth budget: |f|+|g|="
            f"{lhs[i]:.6g} > {rhs[i]:.6g} at x={x[i].tolist()}, a={a[i].tolist()} "
            f"(growth_constant={cost.growth_constant})"
        )
    return worst


def check_control_convexity(
    cost: CostSpec,
    domain,
    control_bound: float,
    n_samples: int = 256,
    seed: int = 0,
) -> None:
    """Spot-check midpoint convexity of the running cost in the control."""
    rng = np.random.default_rng(seed)
    x = domain.sample_closure(rng, n_samples)
    amax = control_bound if np.isfinite(control_bound) and control_bound > 0 else 10.0
    a1 = rng.uniform(-amax, amax, size=(n_samples, domain.dim))
    a2 = rng.uniform(-amax, amax, size=(n_samples, domain.dim))
    mid = np.asarray(cost.running(x, 0.5 * (a1 + a2)), dtype=np.float64)
    avg = 0.5 * (
        np.asarray(cost.running(x, a1), dtype=np.float64)
        + np.asarray(cost.running(x, a2), dtype=np.float64)
    )
    slack = 1e-9 * (1.0 + np.abs(avg))
    if np.any(mid > avg + slack):
        i = int(np.argmax(mid - avg))
        raise ValueError(
            "running cost is not convex in the control: midpoint value "
            f"{mid[i]:.6g} exceeds the average {avg[i]:.6g} at x={x[i].tolist()}"
        )


@dataclass(frozen=True)
class SurvivalCurve:
    """Survival fraction per grid node with its binomial standard error."""

    times: np.ndarray
    fraction: np.ndarray
    stderr: np.ndarray

    def __iter__(self):
        for row in zip(self.times, self.fraction, self.stderr):
            yield tuple(float(v) for v in row)

    def __len__(self):
        return self.times.shape[0]


def survival_curve(ensemble: ParticleEnsemble) -> SurvivalCurve:
    """Fraction of particles alive at every grid node."""
    n = ensemble.n_particles
    frac = ensemble.alive.mean(axis=0)
    stderr = np.sqrt(frac * (1.0 - frac) / n)
    return SurvivalCurve(times=ensemble.grid.times, fraction=frac, stderr=stderr)


@dataclass(frozen=True)
class ConditionalMarginal:
    """Positions of the survivors at one grid time."""

    time: float
    samples: np.ndarray
    n_total: int

    @property
    def n_alive(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def conditional_marginal(ensemble: ParticleEnsemble, t: float) -> ConditionalMarginal:
    """Conditional law of the state given survival, at the node nearest t.

    Raises
    ------
    DeadEnsembleError
        When no particle is alive at that node (the conditional law does
        not exist; the associated cost is infinite by convention).
    """
    k = ensemble.grid.nearest_index(t)
    mask = ensemble.alive[:, k]
    if not mask.any():
        raise DeadEnsembleError(
            f"no survivors at t={ensemble.grid.times[k]:.6g}; "
            "conditional marginal undefined (survival probability zero)"
        )
    return ConditionalMarginal(
        time=float(ensemble.grid.times[k]),
        samples=ensemble.paths[mask, k].copy(),
        n_total=ensemble.n_particles,
    )


def _as_samples(m) -> np.ndarray:
    arr = m.samples if isinstance(m, ConditionalMarginal) else np.asarray(m, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        raise ValueError("cannot compute a transport distance of an empty sample set")
    return arr


def wasserstein1(a, b, n_projections: int = 64, seed: int = 0) -> float:
    """First Wasserstein distance between two empirical samples.

    One-dimensional samples use the exact order-statistics formula; in
    higher dimension the sliced variant averages the 1-d distance over
    ``n_projections`` fixed random directions (a metric on empirical
    laws, used consistently on both sides of every comparison).
    """
    sa, sb = _as_samples(a), _as_samples(b)
    if sa.shape[1] != sb.shape[1]:
        raise ValueError("sample sets have different dimensions")
    if sa.shape[1] == 1:
        return float(wasserstein_distance(sa[:, 0], sb[:, 0]))
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_projections, sa.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for u in dirs:
        total += wasserstein_distance(sa @ u, sb @ u)
    return float(total / n_projections)


@dataclass(frozen=True)
class CostReport:
    """Conditional cost estimate with bootstrap uncertainty."""

    running: float
    terminal: float
    total: float
    stderr_total: float | None
    stderr_running: float | None
    stderr_terminal: float | None
    survival_at_horizon: float
    min_alive: int
    infinite: bool
    n_boot: int
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def num(v):
            if v is None:
                return None
            v = float(v)
            return v if math.isfinite(v) else None

        return {
            "running": num(self.running),
            "terminal": num(self.terminal),
            "total": num(self.total),
            "stderr_total": num(self.stderr_total),
            "stderr_running": num(self.stderr_running),
            "stderr_terminal": num(self.stderr_terminal),
            "survival_at_horizon": float(self.survival_at_horizon),
            "min_alive": int(self.min_alive),
            "infinite": bool(self.infinite),
            "n_boot": int(self.n_boot),
            "warnings": list(self.warnings),
        }


def compute_cost(
    ensemble: ParticleEnsemble,
    cost: CostSpec,
    *,
    n_boot: int = 200,
    seed: int = 0,
) -> CostReport:
    """Conditional cost of an ensemble under a cost specification.

    The running part integrates the survivor average of f(X_t, a_t) over
    the grid (left endpoints, weight dt); the terminal part averages
    g(X_T) over the horizon's survivors.  If any needed conditioning
    event is empty the cost is infinite by convention.

    A Poisson bootstrap over particles (``n_boot`` resamples) provides
    standard errors; set ``n_boot=0`` to skip it.
    """
    grid = ensemble.grid
    N, K = ensemble.n_particles, grid.n_steps
    dt = grid.dt
    alive = ensemble.alive
    counts = alive.sum(axis=0)
    warnings: list[str] = []
    min_alive = int(counts.min())
    if 0 < min_alive < LOW_SURVIVORS_WARN:
        warnings.append(
            f"fewer than {LOW_SURVIVORS_WARN} survivors on some slices "
            f"(minimum {min_alive}); conditional averages are noisy"
        )
    survival_T = float(counts[K] / N)

    if min_alive == 0:
        first_dead = int(np.argmax(counts == 0))
        warnings.append(
            f"no survivors from t={grid.times[first_dead]:.6g}; "
            "conditional cost infinite by convention"
        )
        return CostReport(
            running=math.inf,
            terminal=math.inf,
            total=math.inf,
            stderr_total=None,
            stderr_running=None,
            stderr_terminal=None,
            survival_at_horizon=survival_T,
            min_alive=0,
            infinite=True,
            n_boot=0,
            warnings=tuple(warnings),
        )

    do_boot = n_boot > 0
    if do_boot:
        rng = np.random.default_rng(seed)
        # Poisson(1) weights resample whole trajectories; applying one
        # weight matrix to every slice keeps all parts correlated.
        W = rng.poisson(1.0, size=(n_boot, N)).astype(np.float32)
        run_boot = np.zeros(n_boot)
        bad = np.zeros(n_boot, dtype=bool)

    running = 0.0
    f_block = np.empty((N, _BLOCK), dtype=np.float32) if do_boot else None
    a_block = np.empty((N, _BLOCK), dtype=np.float32) if do_boot else None
    width = 0
    for k in range(K):
        fv = np.asarray(
            cost.running(ensemble.paths[:, k], ensemble.controls[:, k]),
            dtype=np.float64,
        )
        mask = alive[:, k]
        running += dt * float(fv[mask].mean())
        if do_boot:
            f_block[:, width] = np.where(mask, fv, 0.0)
            a_block[:, width] = mask
            width += 1
            if width == _BLOCK or k == K - 1:
                num = W @ f_block[:, :width]
                den = W @ a_block[:, :width]
                zero = den == 0
                if zero.any():
                    bad |= zero.any(axis=1)
                    den = np.where(zero, 1.0, den)
                run_boot += dt * (num / den).sum(axis=1)
                width = 0

    gv = np.asarray(cost.terminal(ensemble.paths[:, K]), dtype=np.float64)
    mask_T = alive[:, K]
    terminal = float(gv[mask_T].mean())
    total = running + terminal

    stderr_total = stderr_running = stderr_terminal = None
    if do_boot:
        gw = np.where(mask_T, gv, 0.0).astype(np.float32)
        aT = mask_T.astype(np.float32)
        den_T = W @ aT
        zero = den_T == 0
        bad |= zero
        term_boot = (W @ gw) / np.where(zero, 1.0, den_T)
        ok = ~bad
        n_ok = int(ok.sum())
        if n_ok < n_boot:
            warnings.append(
                f"{n_boot - n_ok} of {n_boot} bootstrap resamples lost all "
                "survivors on some slice and were dropped"
            )
        if n_ok >= 2:
            stderr_running = float(run_boot[ok].std(ddof=1))
            stderr_terminal = float(term_boot[ok].std(ddof=1))
            stderr_total = float((run_boot[ok] + term_boot[ok]).std(ddof=1))
        else:
            warnings.append("too few valid bootstrap resamples for a standard error")

    return CostReport(
        running=running,
        terminal=terminal,
        total=total,
        stderr_total=stderr_total,
        stderr_running=stderr_running,
        stderr_terminal=stderr_terminal,
        survival_at_horizon=survival_T,
        min_alive=min_alive,
        infinite=False,
        n_boot=n_boot if do_boot else 0,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class CostComparison:
    """Outcome of comparing two conditional costs at a sigma level."""

    verdict: str  # "first_lower" | "second_lower" | "indistinguishable"
    delta: float | None  # second.total - first.total when both finite
    stderr: float | None
    n_sigma: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "delta": None if self.delta is None or not math.isfinite(self.delta) else float(self.delta),
            "stderr": None if self.stderr is None else float(self.stderr),
            "n_sigma": float(self.n_sigma),
        }


def compare_costs(first: CostReport, second: CostReport, n_sigma: float = 2.0) -> CostComparison:
    """Compare two cost reports, accounting for their bootstrap noise.

    Infinite costs compare as larger than any finite cost; two infinite
    costs are indistinguishable.
    """
    if first.infinite or second.infinite:
        if first.infinite and second.infinite:
            return CostComparison("indistinguishable", None, None, n_sigma)
        if second.infinite:
            return CostComparison("first_lower", None, None, n_sigma)
        return CostComparison("second_lower", None, None, n_sigma)
    delta = second.total - first.total
    parts = [s for s in (first.stderr_total, second.stderr_total) if s is not None]
    stderr = math.sqrt(sum(s * s for s in parts)) if parts else 0.0
    if abs(delta) <= n_sigma * stderr:
        verdict = "indistinguishable"
    elif delta < 0:
        verdict = "second_lower"
    else:
        verdict = "first_lower"
    return CostComparison(verdict, delta, stderr, n_sigma)
