"""Control processes driving the killed diffusion.

A control assigns each particle a drift value at every step.  Controls are
vectorized: ``drift(ctx, k)`` receives a read-only :class:`ChunkView` of a
chunk of particles at step ``k`` and returns an array broadcastable to
``(n, dim)``.  Because progressively measurable controls may look at the
past but never the future, the view exposes only the trajectory up to the
current step, the driving noise up to the current step, and the
time-zero randomization words.

Every control declares a finite sup-norm ``bound``; the simulator enforces
it.  Unbounded rules (``bound == inf``) can only be simulated after
:func:`truncate_control`.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Control",
    "MarkovianControl",
    "DeterministicControl",
    "CoinFlipControl",
    "RunningMaxControl",
    "PathFunctionalControl",
    "TruncatedControl",
    "truncate_control",
    "zero_control",
]


class Control:
    """Base class for control processes.

    Attributes
    ----------
    bound : float
        Sup-norm bound on the control values; must be finite to simulate.
    needs_wiener : bool
        Whether the simulator should materialize the driving Brownian path.
    needs_running_max : bool
        Whether the simulator should track the running maximum of the
        stopped state's norm.
    """

    bound: float = np.inf
    needs_wiener: bool = False
    needs_running_max: bool = False

    def drift(self, ctx, k: int):
        """Control value for each particle at step k.

        Parameters
        ----------
        ctx : ChunkView
            Read-only view of the chunk state at time ``t_k``.
        k : int
            Step index.

        Returns
        -------
        array_like
            Broadcastable to ``(ctx.n, ctx.dim)``.  Values for dead
            particles are ignored.
        """
        raise NotImplementedError


def _checked_bound(bound: float) -> float:
    bound = float(bound)
    if math.isnan(bound) or bound < 0:
        raise ValueError(f"control bound must be non-negative, got {bound}")
    return bound


class MarkovianControl(Control):
    """Feedback control a_t = phi(t, X_t) of the current state only."""

    def __init__(self, phi, bound: float):
        self.phi = phi
        self.bound = _checked_bound(bound)

    def drift(self, ctx, k):
        return self.phi(ctx.t, ctx.x)


class DeterministicControl(Control):
    """Open-loop control a_t = a(t), the same for every particle."""

    def __init__(self, value, bound: float):
        self.value = value
        self.bound = _checked_bound(bound)

    def drift(self, ctx, k):
        return np.asarray(self.value(ctx.t), dtype=np.float64)


class CoinFlipControl(Control):
    """Constant drift +-scale along the first axis, sign fixed at time zero.

    Each particle flips one fair coin before the dynamics start (using its
    first time-zero randomization word) and keeps the resulting drift for
    the whole horizon.  The law of the control at any time is symmetric,
    while each realization is maximally one-sided, which makes this the
    canonical example separating open-loop from feedback behaviour.
    """

    def __init__(self, scale: float = 1.0):
        scale = float(scale)
        if scale <= 0 or not np.isfinite(scale):
            raise ValueError("coin flip scale must be positive and finite")
        self.scale = scale
        self.bound = scale

    def drift(self, ctx, k):
        sign = np.where(ctx.f0[:, 0] < 0.5, -1.0, 1.0)
        out = np.zeros((ctx.n, ctx.dim))
        out[:, 0] = self.scale * sign
        return out


class RunningMaxControl(Control):
    """Path-dependent feedback of the running maximum of |X|.

    ``feedback(t, x, m)`` receives the current positions ``x`` of shape
    ``(n, dim)`` and the running maxima ``m`` of shape ``(n,)`` of the
    stopped state's Euclidean norm up to the current time, and returns the
    drift, broadcastable to ``(n, dim)``.
    """

    needs_running_max = True

    def __init__(self, feedback, bound: float):
        self.feedback = feedback
        self.bound = _checked_bound(bound)

    def drift(self, ctx, k):
        return self.feedback(ctx.t, ctx.x, ctx.running_max)


class PathFunctionalControl(Control):
    """Arbitrary progressively measurable rule ``rule(ctx, k)``.

    The rule may read ``ctx.past_positions``, ``ctx.wiener`` (when
    ``needs_wiener`` is set) and ``ctx.f0``; it must be a pure function of
    those inputs so that results do not depend on chunking.
    """

    def __init__(self, rule, bound: float, needs_wiener: bool = False):
        self.rule = rule
        self.bound = _checked_bound(bound)
        self.needs_wiener = bool(needs_wiener)

    def drift(self, ctx, k):
        return self.rule(ctx, k)


class TruncatedControl(Control):
    """A control with its values radially truncated to a given norm.

    Values of norm at most ``radius`` pass through unchanged (bitwise);
    larger values are rescaled onto the sphere of that radius.
    """

    def __init__(self, inner: Control, radius: float):
        radius = float(radius)
        if radius <= 0 or not np.isfinite(radius):
            raise ValueError("truncation radius must be positive and finite")
        self.inner = inner
        self.radius = radius
        self.bound = min(inner.bound, radius)

    @property
    def needs_wiener(self):
        return self.inner.needs_wiener

    @property
    def needs_running_max(self):
        return self.inner.needs_running_max

    def drift(self, ctx, k):
        a = np.asarray(self.inner.drift(ctx, k), dtype=np.float64)
        a = np.broadcast_to(a, (ctx.n, ctx.dim))
        norm = np.sqrt((a * a).sum(axis=1))
        over = norm > self.radius
        if not over.any():
            return a
        scale = np.where(over, self.radius / np.where(over, norm, 1.0), 1.0)
        return a * scale[:, None]


def truncate_control(control: Control, radius: float) -> Control:
    """Truncate a control's values to the closed ball of a given radius."""
    return TruncatedControl(control, radius)


def zero_control() -> DeterministicControl:
    """The uncontrolled case: identically zero drift."""
    return DeterministicControl(lambda t: 0.0, bound=0.0)
