"""Control variants: bounds, truncation, time-zero randomness."""

import numpy as np
import pytest

from condexit import (
    CoinFlipControl,
    DeterministicControl,
    DomainGeometry,
    MarkovianControl,
    RunningMaxControl,
    TimeGrid,
    TruncatedControl,
    simulate_ensemble,
    truncate_control,
    zero_control,
)


class _FakeCtx:
    """Minimal stand-in for the simulator's chunk view."""

    def __init__(self, x, t=0.0, f0=None, running_max=None):
        self.x = np.asarray(x, dtype=np.float64)
        self.t = t
        self.f0 = f0
        self.running_max = running_max
        self.n = self.x.shape[0]
        self.dim = self.x.shape[1]


class TestTruncation:
    def test_radial_projection_example(self):
        base = DeterministicControl(lambda t: np.array([3.0, 4.0]), bound=5.0)
        trunc = truncate_control(base, 1.0)
        ctx = _FakeCtx(np.zeros((1, 2)))
        a = trunc.drift(ctx, 0)
        assert np.allclose(a, [[0.6, 0.8]])

    def test_identity_below_radius_is_bitwise(self):
        vals = np.array([[0.3, -0.4]])
        base = DeterministicControl(lambda t: vals[0], bound=0.5)
        trunc = truncate_control(base, 2.0)
        ctx = _FakeCtx(np.zeros((1, 2)))
        out = np.asarray(trunc.drift(ctx, 0), dtype=np.float64)
        base_out = np.broadcast_to(vals, out.shape)
        assert np.array_equal(out, base_out)

    def test_bound_becomes_min(self):
        base = CoinFlipControl(scale=5.0)
        assert truncate_control(base, 2.0).bound == 2.0
        assert truncate_control(base, 7.0).bound == 5.0

    def test_radius_must_be_positive(self):
        with pytest.raises(ValueError):
            truncate_control(zero_control(), 0.0)
        with pytest.raises(ValueError):
            truncate_control(zero_control(), -1.0)

    def test_norm_never_exceeds_radius(self):
        rng = np.random.default_rng(3)
        raw = rng.normal(scale=3.0, size=(200, 2))
        base = MarkovianControl(lambda t, x: raw[: x.shape[0]], bound=20.0)
        trunc = TruncatedControl(base, 1.5)
        ctx = _FakeCtx(np.zeros((200, 2)))
        out = np.asarray(trunc.drift(ctx, 0))
        norms = np.sqrt((out**2).sum(axis=1))
        assert norms.max() <= 1.5 * (1 + 1e-12)
        # Direction is preserved where the original is nonzero.
        big = np.sqrt((raw**2).sum(axis=1)) > 1.5
        cos = (out[big] * raw[big]).sum(axis=1) / (
            norms[big] * np.sqrt((raw[big] ** 2).sum(axis=1))
        )
        assert np.allclose(cos, 1.0)

    def test_nested_truncation_composes(self):
        base = DeterministicControl(lambda t: np.array([10.0]), bound=10.0)
        t1 = truncate_control(truncate_control(base, 6.0), 2.0)
        ctx = _FakeCtx(np.zeros((1, 1)))
        assert np.allclose(t1.drift(ctx, 0), [[2.0]])
        assert t1.bound == 2.0


class TestCoinFlip:
    def test_signs_from_time_zero_words(self, unit_interval):
        grid = TimeGrid(horizon=0.05, dt=0.01)
        ens = simulate_ensemble(
            CoinFlipControl(scale=2.0),
            unit_interval,
            grid,
            x0=np.zeros(1),
            n_particles=1000,
            seed=5,
        )
        first = ens.controls[:, 0, 0]
        assert set(np.unique(first)) == {-2.0, 2.0}
        # The sign is constant in time while the particle lives.
        for i in range(100):
            alive_steps = ens.alive[i, :-1]
            vals = ens.controls[i, alive_steps, 0]
            assert np.all(vals == vals[0])
        # Roughly balanced (binomial 4-sigma at N=1000).
        frac_up = (first > 0).mean()
        assert abs(frac_up - 0.5) < 4 * 0.5 / np.sqrt(1000)

    def test_scale_must_be_positive(self):
        with pytest.raises(ValueError):
            CoinFlipControl(scale=0.0)

    def test_bound_equals_scale(self):
        assert CoinFlipControl(scale=3.5).bound == 3.5


class TestRunningMax:
    def test_feedback_sees_running_max(self, unit_interval):
        seen = []

        def h(t, x, m):
            seen.append(m.copy())
            return -0.5 * np.sign(x) * np.minimum(1.0, m)[:, None]

        grid = TimeGrid(horizon=0.1, dt=0.01)
        simulate_ensemble(
            RunningMaxControl(h, bound=0.5),
            unit_interval,
            grid,
            x0=np.zeros(1),
            n_particles=64,
            seed=6,
        )
        assert seen
        m = np.concatenate(seen)
        assert np.all(m >= 0.0)
        # Running max is non-decreasing per particle over the steps.
        per_step = np.stack(seen)
        assert np.all(np.diff(per_step, axis=0) >= -1e-15)


class TestZeroControl:
    def test_zero_everywhere(self):
        z = zero_control()
        ctx = _FakeCtx(np.zeros((5, 3)))
        assert np.all(np.asarray(z.drift(ctx, 0)) == 0.0)
        assert z.bound == 0.0


class TestMarkovian:
    def test_receives_time_and_state(self):
        calls = []

        def phi(t, x):
            calls.append((t, x.shape))
            return np.zeros_like(x)

        ctl = MarkovianControl(phi, bound=1.0)
        ctx = _FakeCtx(np.zeros((4, 2)), t=0.25)
        ctl.drift(ctx, 3)
        assert calls == [(0.25, (4, 2))]

    def test_bound_validation(self):
        with pytest.raises(ValueError):
            MarkovianControl(lambda t, x: x, bound=-1.0)
