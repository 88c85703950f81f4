"""Euler simulation of controlled diffusions killed at the domain boundary.

The state follows dX_t = a_t dt + sigma dW_t from a deterministic start
inside an open bounded domain and is stopped at its first exit time tau.
:func:`simulate_ensemble` integrates N independent particles on a uniform
grid, recording the stopped path, the applied control, the alive indicator
at every node, and the (interpolated) exit time of each particle.

Exits are detected two ways: a node landing outside the domain, and, when
the bridge correction is enabled, a Brownian-bridge test for excursions
that cross the boundary between two inside nodes.  The correction removes
most of the systematic survival bias of the plain node test.

Determinism contract: results are bit-for-bit reproducible functions of
(control, domain, grid, x0, sigma, bridge flag, seed) alone.  Chunk size,
thread count, and kernel backend never change the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels, noise
from .controls import Control
from .geometry import DomainGeometry
from .noise import layout_for

__all__ = [
    "TimeGrid",
    "ChunkView",
    "ParticleEnsemble",
    "ControlBoundError",
    "simulate_ensemble",
    "resimulate_with_common_noise",
]

# Relative slack applied to the declared control bound before flagging a
# violation, absorbing the ulp-level excess of truncated values.
BOUND_SLACK = 1e-9

DEFAULT_CHUNK = 8192


class ControlBoundError(RuntimeError):
    """A control produced a value exceeding its declared bound."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_k = k*dt covering [0, horizon].

    Attributes
    ----------
    horizon : float
        Final time T.
    dt : float
        Step size; the horizon must be an integer multiple of it.
    """

    horizon: float
    dt: float
    n_steps: int = field(init=False)

    def __post_init__(self):
        horizon = float(self.horizon)
        dt = float(self.dt)
        if not (np.isfinite(dt) and dt > 0):
            raise ValueError(f"dt must be positive and finite, got {dt}")
        if not (np.isfinite(horizon) and horizon > 0):
            raise ValueError(f"horizon must be positive and finite, got {horizon}")
        n = int(round(horizon / dt))
        if n < 1 or abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
            raise ValueError(
                f"horizon {horizon} is not an integer multiple of dt {dt}"
            )
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "n_steps", n)

    @property
    def times(self) -> np.ndarray:
        """Grid nodes (n_steps + 1,), computed as k*dt."""
        return np.arange(self.n_steps + 1) * self.dt

    def nearest_index(self, t: float) -> int:
        """Index of the grid node nearest to t, clipped to the grid."""
        return int(np.clip(round(float(t) / self.dt), 0, self.n_steps))


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


class ChunkView:
    """Read-only view of one chunk's state, handed to controls.

    Only information available at the current time is exposed: positions
    and alive flags now, the stopped trajectory so far, the driving
    Brownian path so far (when requested), the running maximum of |X|
    (when requested), and the time-zero uniforms ``f0``.
    """

    def __init__(self, grid, dim, f0, paths, wiener, running_max, alive):
        self.grid = grid
        self.dim = dim
        self.f0 = _readonly(f0)
        self._paths = paths
        self._wiener = wiener
        self._running_max = running_max
        self._alive = alive
        self._k = 0

    @property
    def n(self) -> int:
        return self._paths.shape[0]

    @property
    def k(self) -> int:
        """Current step index."""
        return self._k

    @property
    def t(self) -> float:
        """Current time t_k."""
        return self._k * self.grid.dt

    @property
    def x(self) -> np.ndarray:
        """Current stopped positions, shape (n, dim)."""
        return _readonly(self._paths[:, self._k])

    @property
    def alive(self) -> np.ndarray:
        """Alive flags at the current node, shape (n,)."""
        return _readonly(self._alive)

    @property
    def past_positions(self) -> np.ndarray:
        """Stopped trajectory on nodes 0..k, shape (n, k+1, dim)."""
        return _readonly(self._paths[:, : self._k + 1])

    @property
    def wiener(self) -> np.ndarray:
        """Driving Brownian path on nodes 0..k, shape (n, k+1, dim)."""
        if self._wiener is None:
            raise RuntimeError(
                "control did not declare needs_wiener; Brownian path not tracked"
            )
        return _readonly(self._wiener[:, : self._k + 1])

    @property
    def running_max(self) -> np.ndarray:
        """Running maximum of |X| up to the current node, shape (n,)."""
        if self._running_max is None:
            raise RuntimeError(
                "control did not declare needs_running_max; running max not tracked"
            )
        return _readonly(self._running_max)


@dataclass
class ParticleEnsemble:
    """Output of one simulation: stopped paths and everything recorded.

    Attributes
    ----------
    paths : ndarray, shape (n, n_steps + 1, dim)
        Stopped trajectories; constant from the exit node onward.
    controls : ndarray, shape (n, n_steps, dim)
        Control applied on [t_k, t_{k+1}) by particles alive at t_k,
        zero for dead particles.
    alive : ndarray of bool, shape (n, n_steps + 1)
        Survival indicator per node; ``alive[i, k]`` means particle i has
        not exited by t_k.
    exit_times : ndarray, shape (n,)
        Interpolated exit time per particle, ``inf`` for survivors.
    """

    domain: DomainGeometry
    grid: TimeGrid
    x0: np.ndarray
    sigma: float
    seed: int
    bridge_correction: bool
    control_bound: float
    paths: np.ndarray
    controls: np.ndarray
    alive: np.ndarray
    exit_times: np.ndarray

    @property
    def n_particles(self) -> int:
        return self.paths.shape[0]

    @property
    def dim(self) -> int:
        return self.paths.shape[2]

    @property
    def noise_seeds(self) -> np.ndarray:
        """Per-particle noise stream ids: counter-block offset of each
        particle inside the keyed counter-based generator. Together with
        ``seed`` this pins every random number a particle consumed."""
        layout = layout_for(self.grid.n_steps, self.dim)
        return np.arange(self.n_particles, dtype=np.uint64) * np.uint64(
            layout.counter_blocks
        )

    def summary(self) -> dict:
        """Small JSON-ready description of the run."""
        alive_T = int(self.alive[:, -1].sum())
        exited = np.isfinite(self.exit_times)
        return {
            "n_particles": int(self.n_particles),
            "dim": int(self.dim),
            "horizon": self.grid.horizon,
            "dt": self.grid.dt,
            "sigma": self.sigma,
            "seed": int(self.seed),
            "bridge_correction": bool(self.bridge_correction),
            "control_bound": float(self.control_bound),
            "domain": self.domain.to_dict(),
            "x0": [float(v) for v in self.x0],
            "n_alive_at_horizon": alive_T,
            "survival_at_horizon": alive_T / self.n_particles,
            "mean_exit_time_exited": (
                float(self.exit_times[exited].mean()) if exited.any() else None
            ),
        }

    def dump_paths(self, stream) -> None:
        """Write the full trajectory table as CSV (particle, k, t, x.., alive)."""
        coords = ",".join(f"x{j}" for j in range(self.dim))
        stream.write(f"particle,k,t,{coords},alive\n")
        times = self.grid.times
        for i in range(self.n_particles):
            for k in range(self.grid.n_steps + 1):
                xs = ",".join("%.17g" % v for v in self.paths[i, k])
                stream.write(
                    f"{i},{k},{'%.17g' % times[k]},{xs},{int(self.alive[i, k])}\n"
                )


def simulate_ensemble(
    control: Control,
    domain: DomainGeometry,
    grid: TimeGrid,
    x0,
    n_particles: int,
    seed: int,
    *,
    sigma: float = 1.0,
    bridge_correction: bool = True,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> ParticleEnsemble:
    """Simulate N killed controlled diffusions.

    Parameters
    ----------
    control : Control
        Control process with a finite declared bound.
    domain : DomainGeometry
        Open bounded domain whose first exit kills the state.
    grid : TimeGrid
        Uniform integration grid.
    x0 : array_like
        Deterministic start, strictly inside the domain.
    n_particles : int
        Ensemble size.
    seed : int
        Base seed of the counter-based noise; together with the arguments
        above it determines the output bit for bit.
    sigma : float
        Scalar diffusion coefficient.
    bridge_correction : bool
        Apply the Brownian-bridge exit test between inside nodes.
    threads : int
        Worker threads; chunks write disjoint slices, so the result does
        not depend on this.
    chunk_size : int
        Particles simulated per kernel invocation; result-invariant.

    Returns
    -------
    ParticleEnsemble
    """
    if not isinstance(control, Control):
        raise TypeError("control must be a Control instance")
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    if x0.shape != (domain.dim,):
        raise ValueError(
            f"x0 has shape {x0.shape}, expected ({domain.dim},) for this domain"
        )
    sd0 = float(domain.signed_distance(x0))
    if not sd0 < 0:
        raise ValueError(f"x0 {x0.tolist()} is not strictly inside the domain")
    bound = float(control.bound)
    if not (np.isfinite(bound) and bound >= 0):
        raise ValueError(
            f"control bound must be finite and non-negative to simulate, got {bound}; "
            "truncate unbounded controls first"
        )
    n_particles = int(n_particles)
    if n_particles < 1:
        raise ValueError("n_particles must be at least 1")
    sigma = float(sigma)
    if not (np.isfinite(sigma) and sigma > 0):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    threads = max(1, int(threads))
    chunk_size = max(1, int(chunk_size))

    K, d = grid.n_steps, domain.dim
    layout = noise.layout_for(K, d)
    kind, pa, pb, center, radius = domain._kernel_params()
    times = grid.times
    dt = grid.dt
    sig_sqdt = sigma * math.sqrt(dt)
    sig2_dt = sigma * sigma * dt
    bound2 = (bound * (1.0 + BOUND_SLACK)) ** 2
    bridge = bool(bridge_correction)

    paths = np.empty((n_particles, K + 1, d))
    ctl_values = np.empty((n_particles, K, d))
    alive_nodes = np.empty((n_particles, K + 1), dtype=bool)
    exit_times = np.full(n_particles, np.inf)

    def run_chunk(i0: int, i1: int) -> None:
        n = i1 - i0
        raw = noise.raw_words(seed, i0, n, layout)
        f0 = noise.uniforms_from_words(raw[:, layout.f0_slice])
        z = noise.gaussians_from_words(raw[:, layout.gauss_slice]).reshape(n, K, d)
        ub = noise.uniforms_from_words(raw[:, layout.bridge_slice])
        del raw

        cpaths = paths[i0:i1]
        cctl = ctl_values[i0:i1]
        calive = alive_nodes[i0:i1]
        cexit = exit_times[i0:i1]

        x = np.tile(x0, (n, 1))
        sd = np.full(n, sd0)
        alive = np.ones(n, dtype=bool)
        cpaths[:, 0] = x
        calive[:, 0] = True

        wiener = None
        if control.needs_wiener:
            wiener = np.empty((n, K + 1, d))
            wiener[:, 0] = 0.0
            np.cumsum(math.sqrt(dt) * z, axis=1, out=wiener[:, 1:])
        running_max = None
        if control.needs_running_max:
            running_max = np.full(n, float(np.sqrt((x0 * x0).sum())))

        ctx = ChunkView(grid, d, f0, cpaths, wiener, running_max, alive)
        for k in range(K):
            ctx._k = k
            drift = np.ascontiguousarray(
                np.broadcast_to(
                    np.asarray(control.drift(ctx, k), dtype=np.float64), (n, d)
                )
            )
            viol = kernels.advance_step(
                x,
                sd,
                alive,
                cexit,
                drift,
                z[:, k],
                ub[:, k],
                kind,
                pa,
                pb,
                center,
                radius,
                dt,
                sig_sqdt,
                sig2_dt,
                times[k],
                bridge,
                bound2,
                cpaths[:, k + 1],
                cctl[:, k],
            )
            if viol >= 0:
                norm = float(np.sqrt((drift[viol] * drift[viol]).sum()))
                raise ControlBoundError(
                    f"control value of norm {norm:.6g} exceeds declared bound "
                    f"{bound:.6g} (particle {i0 + viol}, step {k})"
                )
            calive[:, k + 1] = alive
            if running_max is not None and alive.any():
                xa = cpaths[:, k + 1]
                norms = np.sqrt((xa * xa).sum(axis=1))
                np.maximum(running_max, norms, out=running_max, where=alive)

    spans = [
        (i0, min(i0 + chunk_size, n_particles))
        for i0 in range(0, n_particles, chunk_size)
    ]
    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            # iterate to propagate worker exceptions
            for _ in pool.map(lambda sp: run_chunk(*sp), spans):
                pass
    else:
        for sp in spans:
            run_chunk(*sp)

    return ParticleEnsemble(
        domain=domain,
        grid=grid,
        x0=x0,
        sigma=sigma,
        seed=seed,
        bridge_correction=bridge,
        control_bound=bound,
        paths=paths,
        controls=ctl_values,
        alive=alive_nodes,
        exit_times=exit_times,
    )


def resimulate_with_common_noise(
    ensemble: ParticleEnsemble,
    control: Control,
    *,
    threads: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
) -> ParticleEnsemble:
    """Rerun an ensemble's exact noise under a different control.

    The returned ensemble is driven by the same Brownian increments,
    bridge uniforms, and time-zero words as the original (same seed and
    particle indexing), so differences between the two runs are due to the
    controls alone.
    """
    return simulate_ensemble(
        control,
        ensemble.domain,
        ensemble.grid,
        ensemble.x0,
        ensemble.n_particles,
        ensemble.seed,
        sigma=ensemble.sigma,
        bridge_correction=ensemble.bridge_correction,
        threads=threads,
        chunk_size=chunk_size,
    )
