"""Backend equivalence: compiled and numpy kernels produce identical bits."""

import numpy as np
import pytest

from condexit import (
    CoinFlipControl,
    DomainGeometry,
    MarkovianControl,
    TimeGrid,
    available_backends,
    get_backend,
    set_backend,
    simulate_ensemble,
    zero_control,
)

needs_both = pytest.mark.skipif(
    "numba" not in available_backends(), reason="compiled backend unavailable"
)


@pytest.fixture(autouse=True)
def restore_backend():
    yield
    set_backend(None)


def _ensembles_equal(a, b) -> bool:
    return (
        np.array_equal(a.paths, b.paths)
        and np.array_equal(a.controls, b.controls)
        and np.array_equal(a.alive, b.alive)
        and np.array_equal(a.exit_times, b.exit_times)
    )


def _simulate_on(backend, **kw):
    set_backend(backend)
    try:
        return simulate_ensemble(**kw)
    finally:
        set_backend(None)


def test_backend_listing_contains_numpy():
    assert "numpy" in available_backends()


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        set_backend("fortran")


def test_set_backend_roundtrip():
    set_backend("numpy")
    assert get_backend() == "numpy"
    set_backend(None)
    assert get_backend() in available_backends()


@needs_both
@pytest.mark.parametrize("bridge", [True, False])
def test_bitwise_parity_interval(bridge):
    kw = dict(
        control=CoinFlipControl(scale=1.0),
        domain=DomainGeometry.interval(-1.0, 1.0),
        grid=TimeGrid(horizon=0.5, dt=0.005),
        x0=np.zeros(1),
        n_particles=3000,
        seed=11,
        bridge_correction=bridge,
    )
    a = _simulate_on("numba", **kw)
    b = _simulate_on("numpy", **kw)
    assert _ensembles_equal(a, b)


@needs_both
def test_bitwise_parity_ball():
    kw = dict(
        control=MarkovianControl(lambda t, x: -0.8 * x, bound=0.8 * 1.5),
        domain=DomainGeometry.ball([0.0, 0.0], 1.5),
        grid=TimeGrid(horizon=0.5, dt=0.005),
        x0=np.array([0.2, -0.1]),
        n_particles=2000,
        seed=12,
    )
    a = _simulate_on("numba", **kw)
    b = _simulate_on("numpy", **kw)
    assert _ensembles_equal(a, b)


@pytest.mark.parametrize("backend", sorted(available_backends()))
class TestKernelSemantics:
    """Contracts that hold on every backend."""

    def test_dead_rows_frozen(self, backend, unit_interval):
        ens = _simulate_on(
            backend,
            control=zero_control(),
            domain=unit_interval,
            grid=TimeGrid(horizon=1.0, dt=0.01),
            x0=np.zeros(1),
            n_particles=500,
            seed=21,
        )
        dead_somewhere = ~ens.alive[:, -1]
        for i in np.flatnonzero(dead_somewhere)[:50]:
            k = int(np.argmin(ens.alive[i]))
            tail = ens.paths[i, k:]
            assert np.array_equal(tail, np.broadcast_to(tail[0], tail.shape))
            assert np.all(ens.controls[i, k:] == 0.0)

    def test_bridge_kill_lands_on_boundary(self, backend, unit_interval):
        ens = _simulate_on(
            backend,
            control=zero_control(),
            domain=unit_interval,
            grid=TimeGrid(horizon=1.0, dt=0.01),
            x0=np.zeros(1),
            n_particles=2000,
            seed=22,
            bridge_correction=True,
        )
        sd_frozen = []
        for i in range(ens.n_particles):
            if ens.alive[i, -1]:
                continue
            k = int(np.argmin(ens.alive[i]))
            sd_frozen.append(float(unit_interval.signed_distance(ens.paths[i, k])))
        sd_frozen = np.array(sd_frozen)
        assert sd_frozen.size > 100
        # Dead particles sit on or outside the boundary, never inside.
        assert np.all(sd_frozen >= -1e-12)

    def test_bound_violation_raises(self, backend, unit_interval):
        from condexit import ControlBoundError

        lying = MarkovianControl(lambda t, x: np.full_like(x, 2.0), bound=1.0)
        with pytest.raises(ControlBoundError):
            _simulate_on(
                backend,
                control=lying,
                domain=unit_interval,
                grid=TimeGrid(horizon=0.1, dt=0.01),
                x0=np.zeros(1),
                n_particles=10,
                seed=23,
            )

    def test_env_var_selects_backend(self, backend, monkeypatch):
        monkeypatch.setenv("CONDEXIT_BACKEND", backend)
        set_backend(None)
        assert get_backend() == backend

    def test_env_var_rejects_unknown(self, backend, monkeypatch):
        monkeypatch.setenv("CONDEXIT_BACKEND", "gpu")
        set_backend(None)
        with pytest.raises(ValueError):
            get_backend()
