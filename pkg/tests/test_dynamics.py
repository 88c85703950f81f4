"""Killed-diffusion simulation: determinism, stopping, survival laws."""

import gc
import math

import numpy as np
import pytest

from condexit import (
    CoinFlipControl,
    DeterministicControl,
    DomainGeometry,
    MarkovianControl,
    PathFunctionalControl,
    TimeGrid,
    resimulate_with_common_noise,
    simulate_ensemble,
    truncate_control,
    zero_control,
)

# Survival probability of standard Brownian motion started at 0 in (-1,1):
# P[tau > t] = (4/pi) sum_{n>=0} (-1)^n/(2n+1) exp(-(2n+1)^2 pi^2 t / 8).
SURVIVAL_AT_1 = 0.3707774297995239


def survival_series(t: float, terms: int = 60) -> float:
    acc = 0.0
    for n in range(terms):
        acc += (-1.0) ** n / (2 * n + 1) * math.exp(-((2 * n + 1) ** 2) * math.pi**2 * t / 8.0)
    return 4.0 / math.pi * acc


def test_series_oracle_value_is_frozen_correctly():
    assert abs(survival_series(1.0) - SURVIVAL_AT_1) < 1e-15


class TestTimeGrid:
    def test_basic(self):
        grid = TimeGrid(horizon=1.0, dt=0.25)
        assert grid.n_steps == 4
        assert np.allclose(grid.times, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_non_integral_ratio_rejected(self):
        with pytest.raises(ValueError):
            TimeGrid(horizon=1.0, dt=0.3)

    def test_positive_required(self):
        with pytest.raises(ValueError):
            TimeGrid(horizon=0.0, dt=0.1)
        with pytest.raises(ValueError):
            TimeGrid(horizon=1.0, dt=-0.1)

    def test_tiny_step_survives_float_ratio(self):
        grid = TimeGrid(horizon=0.2, dt=1e-5)
        assert grid.n_steps == 20000

    def test_nearest_index(self):
        grid = TimeGrid(horizon=1.0, dt=0.25)
        assert grid.nearest_index(0.0) == 0
        assert grid.nearest_index(0.26) == 1
        assert grid.nearest_index(1.0) == 4


class TestValidation:
    def test_x0_outside_rejected(self, unit_interval, small_grid):
        with pytest.raises(ValueError, match="x0"):
            simulate_ensemble(
                zero_control(), unit_interval, small_grid, np.array([1.5]), 10, 0
            )

    def test_x0_on_boundary_rejected(self, unit_interval, small_grid):
        with pytest.raises(ValueError, match="x0"):
            simulate_ensemble(
                zero_control(), unit_interval, small_grid, np.array([1.0]), 10, 0
            )

    def test_x0_dimension_mismatch(self, unit_ball_2d, small_grid):
        with pytest.raises(ValueError):
            simulate_ensemble(
                zero_control(), unit_ball_2d, small_grid, np.array([0.0]), 10, 0
            )

    def test_unbounded_control_rejected(self, unit_interval, small_grid):
        wild = PathFunctionalControl(lambda ctx, k: ctx.x, bound=math.inf)
        with pytest.raises(ValueError, match="bound"):
            simulate_ensemble(wild, unit_interval, small_grid, np.zeros(1), 10, 0)

    def test_n_particles_positive(self, unit_interval, small_grid):
        with pytest.raises(ValueError):
            simulate_ensemble(zero_control(), unit_interval, small_grid, np.zeros(1), 0, 0)

    def test_sigma_positive(self, unit_interval, small_grid):
        with pytest.raises(ValueError):
            simulate_ensemble(
                zero_control(), unit_interval, small_grid, np.zeros(1), 10, 0, sigma=0.0
            )


class TestDeterminism:
    def _run(self, **overrides):
        kw = dict(
            control=CoinFlipControl(scale=1.0),
            domain=DomainGeometry.interval(-1.0, 1.0),
            grid=TimeGrid(horizon=0.5, dt=0.005),
            x0=np.zeros(1),
            n_particles=1500,
            seed=77,
        )
        kw.update(overrides)
        return simulate_ensemble(**kw)

    @staticmethod
    def _identical(a, b):
        return (
            np.array_equal(a.paths, b.paths)
            and np.array_equal(a.controls, b.controls)
            and np.array_equal(a.alive, b.alive)
            and np.array_equal(a.exit_times, b.exit_times)
        )

    def test_repeat_run_identical(self):
        assert self._identical(self._run(), self._run())

    def test_chunk_size_irrelevant(self):
        a = self._run(chunk_size=1500)
        b = self._run(chunk_size=64)
        c = self._run(chunk_size=997)
        assert self._identical(a, b)
        assert self._identical(a, c)

    def test_thread_count_irrelevant(self):
        a = self._run(threads=1)
        b = self._run(threads=4, chunk_size=200)
        assert self._identical(a, b)

    def test_seed_matters(self):
        a = self._run(seed=77)
        b = self._run(seed=78)
        assert not np.array_equal(a.paths, b.paths)

    def test_noise_seeds_are_disjoint_offsets(self):
        ens = self._run(n_particles=10)
        ids = ens.noise_seeds
        assert ids.shape == (10,)
        assert ids[0] == 0
        diffs = np.diff(ids.astype(np.int64))
        assert np.all(diffs == diffs[0])
        assert diffs[0] > 0


class TestStoppedPathInvariants:
    def test_paths_constant_after_exit(self, zero_ensemble):
        ens = zero_ensemble
        dead = ~ens.alive[:, -1]
        assert dead.any()
        for i in np.flatnonzero(dead):
            k = int(np.argmin(ens.alive[i]))
            tail = ens.paths[i, k:]
            assert np.array_equal(tail, np.broadcast_to(tail[0], tail.shape))

    def test_alive_iff_contains(self, zero_ensemble):
        ens = zero_ensemble
        flat = ens.paths.reshape(-1, ens.dim)
        inside = ens.domain.contains(flat).reshape(ens.alive.shape)
        assert np.array_equal(ens.alive, inside)

    def test_alive_iff_exit_time_in_future(self, zero_ensemble):
        ens = zero_ensemble
        times = ens.grid.times
        expected = ens.exit_times[:, None] > times[None, :]
        assert np.array_equal(ens.alive, expected)

    def test_controls_zero_after_exit(self, coin_ensemble):
        ens = coin_ensemble
        dead_at_step = ~ens.alive[:, :-1]
        assert np.all(ens.controls[dead_at_step] == 0.0)

    def test_controls_respect_bound(self, coin_ensemble):
        norms = np.abs(coin_ensemble.controls[..., 0])
        assert norms.max() <= coin_ensemble.control_bound

    def test_exit_times_inside_their_step(self, zero_ensemble):
        ens = zero_ensemble
        dt = ens.grid.dt
        exited = np.isfinite(ens.exit_times)
        ks = np.argmin(ens.alive[exited], axis=1)  # first dead node
        tau = ens.exit_times[exited]
        assert np.all(tau <= ks * dt + 1e-12)
        assert np.all(tau >= (ks - 1) * dt - 1e-12)

    def test_single_particle_contract(self, unit_interval):
        ens = simulate_ensemble(
            DeterministicControl(lambda t: np.array([3.0]), bound=3.0),
            unit_interval,
            TimeGrid(horizon=1.0, dt=0.01),
            x0=np.array([0.5]),
            n_particles=1,
            seed=9,
        )
        assert not ens.alive[0, -1]
        k = int(np.argmin(ens.alive[0]))
        assert np.all(ens.paths[0, k:] == ens.paths[0, k])


class TestSurvival:
    def test_monotone_from_one(self, zero_ensemble):
        frac = zero_ensemble.alive.mean(axis=0)
        assert frac[0] == 1.0
        assert np.all(np.diff(frac) <= 0.0)

    def test_matches_series_oracle(self, zero_ensemble):
        # N=4000, dt=0.01: binomial sigma 0.0076 plus a small residual
        # discretization bias; 0.035 is a 4-sigma band with bias headroom.
        p_hat = zero_ensemble.alive[:, -1].mean()
        assert abs(p_hat - SURVIVAL_AT_1) < 0.035

    def test_series_matches_at_intermediate_times(self, zero_ensemble):
        ens = zero_ensemble
        for t in (0.25, 0.5, 0.75):
            k = ens.grid.nearest_index(t)
            p_hat = ens.alive[:, k].mean()
            assert abs(p_hat - survival_series(t)) < 0.04

    def test_sigma_scaling_equivalence(self):
        # sigma=2 on (-1,1) has the law of 2x(sigma=1 on (-1/2,1/2)): the
        # exit times agree in distribution, so survival curves match.
        grid = TimeGrid(horizon=0.25, dt=0.001)
        big = simulate_ensemble(
            zero_control(),
            DomainGeometry.interval(-1.0, 1.0),
            grid,
            np.zeros(1),
            10000,
            seed=31,
            sigma=2.0,
        )
        small = simulate_ensemble(
            zero_control(),
            DomainGeometry.interval(-0.5, 0.5),
            grid,
            np.zeros(1),
            10000,
            seed=32,
            sigma=1.0,
        )
        gap = np.abs(big.alive.mean(axis=0) - small.alive.mean(axis=0)).max()
        assert gap < 0.025

    def test_bridge_correction_reduces_bias(self):
        # Node-only exit testing overestimates survival by O(sqrt(dt));
        # the crossing correction must not widen the gap to the exact law.
        dom = DomainGeometry.interval(-1.0, 1.0)
        grid = TimeGrid(horizon=1.0, dt=0.01)
        with_bridge = simulate_ensemble(
            zero_control(), dom, grid, np.zeros(1), 100000, seed=41, bridge_correction=True
        )
        err_on = abs(with_bridge.alive[:, -1].mean() - SURVIVAL_AT_1)
        del with_bridge
        gc.collect()
        without = simulate_ensemble(
            zero_control(), dom, grid, np.zeros(1), 100000, seed=41, bridge_correction=False
        )
        err_off = abs(without.alive[:, -1].mean() - SURVIVAL_AT_1)
        assert err_on <= err_off

    def test_strong_outward_push_empties_ball(self):
        # Deterministic drift (10, 0) in the unit disc: the state reaches
        # the boundary in about a tenth of a time unit, so survival at the
        # horizon collapses.
        dom = DomainGeometry.ball([0.0, 0.0], 1.0)
        push = DeterministicControl(lambda t: np.array([10.0, 0.0]), bound=10.0)
        coarse = simulate_ensemble(
            push, dom, TimeGrid(horizon=1.0, dt=0.001), np.zeros(2), 2000, seed=51
        )
        assert coarse.alive[:, -1].mean() < 0.01
        # Independent fine-grid run confirms the direction is not a step
        # size artifact: by t=0.2 the fine simulation is just as dead.
        fine = simulate_ensemble(
            push, dom, TimeGrid(horizon=0.2, dt=1e-5), np.zeros(2), 200, seed=52
        )
        assert fine.alive[:, -1].mean() < 0.01
        k_02 = coarse.grid.nearest_index(0.2)
        assert coarse.alive[:, k_02].mean() < 0.01


class TestCommonNoise:
    def test_same_control_bitwise_identical(self, coin_ensemble):
        again = resimulate_with_common_noise(coin_ensemble, CoinFlipControl(scale=1.0))
        assert np.array_equal(again.paths, coin_ensemble.paths)
        assert np.array_equal(again.alive, coin_ensemble.alive)
        assert np.array_equal(again.exit_times, coin_ensemble.exit_times)

    def test_truncation_past_bound_is_identity(self, coin_ensemble):
        loose = truncate_control(CoinFlipControl(scale=1.0), 2.0)
        again = resimulate_with_common_noise(coin_ensemble, loose)
        assert np.array_equal(again.paths, coin_ensemble.paths)
        assert np.array_equal(again.controls, coin_ensemble.controls)

    def test_coupled_distance_decreases_with_truncation_level(self, unit_interval):
        base = CoinFlipControl(scale=5.0)
        grid = TimeGrid(horizon=0.25, dt=0.0025)
        ref = simulate_ensemble(base, unit_interval, grid, np.zeros(1), 500, seed=61)
        sups = []
        for n in (1, 2, 3, 4, 5):
            coupled = resimulate_with_common_noise(ref, truncate_control(base, float(n)))
            diff = np.abs(coupled.paths - ref.paths).max(axis=(1, 2))
            sups.append(float(np.mean(diff**2)))
        assert all(b <= a + 1e-12 for a, b in zip(sups, sups[1:]))
        assert sups[-1] == 0.0

    def test_different_controls_share_noise(self, unit_interval):
        grid = TimeGrid(horizon=0.1, dt=0.01)
        a = simulate_ensemble(zero_control(), unit_interval, grid, np.zeros(1), 100, seed=71)
        b = resimulate_with_common_noise(a, DeterministicControl(lambda t: np.array([0.5]), 0.5))
        # Increment differences equal the constant drift exactly while both
        # particles live: the Brownian increments cancel.
        both_alive = a.alive[:, :-1] & b.alive[:, :-1] & a.alive[:, 1:] & b.alive[:, 1:]
        da = np.diff(a.paths[:, :, 0], axis=1)
        db = np.diff(b.paths[:, :, 0], axis=1)
        gap = (db - da)[both_alive]
        assert np.allclose(gap, 0.5 * grid.dt)


class TestEnsembleSummary:
    def test_summary_keys(self, zero_ensemble):
        s = zero_ensemble.summary()
        for key in (
            "n_particles",
            "dim",
            "horizon",
            "dt",
            "sigma",
            "seed",
            "bridge_correction",
            "control_bound",
            "domain",
            "x0",
            "n_alive_at_horizon",
            "survival_at_horizon",
        ):
            assert key in s
        assert s["n_particles"] == 4000
        assert s["survival_at_horizon"] == pytest.approx(
            zero_ensemble.alive[:, -1].mean()
        )

    def test_dump_paths_schema(self, unit_interval):
        import io

        ens = simulate_ensemble(
            zero_control(), unit_interval, TimeGrid(horizon=0.02, dt=0.01),
            np.zeros(1), 3, seed=81,
        )
        buf = io.StringIO()
        ens.dump_paths(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0].split(",") == ["particle", "k", "t", "x0", "alive"]
        assert len(lines) == 1 + 3 * 3  # header + N * (K+1)
