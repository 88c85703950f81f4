"""Run configuration: parsing, validation, canonical form, and hashing.

A configuration arrives as JSON (text or an already-decoded dict).  Parsing
fills in documented defaults, validates every field with an error message
naming the offending key, and produces a :class:`RunConfig` whose
``canonical`` dict is the fully-explicit form of the input.  The canonical
form round-trips (parsing it again yields the same canonical dict) and its
sorted-key JSON encoding is what :func:`config_hash` digests, so the hash
is independent of key order in the source.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .controls import (
    CoinFlipControl,
    Control,
    DeterministicControl,
    MarkovianControl,
    PathFunctionalControl,
    RunningMaxControl,
    zero_control,
)
from .costing import CostSpec, check_growth, quadratic_cost
from .dynamics import TimeGrid
from .geometry import DomainGeometry
from .projection import default_bins

__all__ = [
    "ConfigError",
    "Tolerances",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "config_hash",
    "with_overrides",
]


class ConfigError(ValueError):
    """A configuration failed validation; the message names the key."""


@dataclass(frozen=True)
class Tolerances:
    """Experiment pass thresholds.

    ``w1`` is a floor for the transport-distance tolerance (the calibrated
    same-law tolerance is always honoured as a lower bound), ``survival``
    bounds the sup gap between survival curves, and ``cost_sigma`` is the
    sigma level for cost comparisons.
    """

    w1: float | None = None
    survival: float = 0.01
    cost_sigma: float = 3.0


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one simulation or experiment."""

    domain: DomainGeometry
    grid: TimeGrid
    x0: np.ndarray
    n_particles: int
    seed: int
    sigma: float
    bridge_correction: bool
    threads: int
    control: Control
    cost: CostSpec
    checkpoints: tuple[float, ...]
    bins: tuple[int, ...] | None
    tolerances: Tolerances
    truncation_levels: tuple[float, ...]
    canonical: dict


_TOP_KEYS = {
    "domain",
    "horizon",
    "dt",
    "x0",
    "n_particles",
    "seed",
    "sigma",
    "bridge_correction",
    "threads",
    "control",
    "cost",
    "checkpoints",
    "bins",
    "tolerances",
    "truncation_levels",
}


def _fail(key: str, msg: str):
    raise ConfigError(f"config key '{key}': {msg}")


def _number(raw, key, *, positive=False, nonnegative=False) -> float:
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        _fail(key, f"expected a number, got {raw!r}")
    v = float(raw)
    if not math.isfinite(v):
        _fail(key, "must be finite")
    if positive and v <= 0:
        _fail(key, f"must be positive, got {v}")
    if nonnegative and v < 0:
        _fail(key, f"must be non-negative, got {v}")
    return v


def _integer(raw, key, *, minimum=None, maximum=None) -> int:
    if isinstance(raw, bool) or not isinstance(raw, int):
        _fail(key, f"expected an integer, got {raw!r}")
    if minimum is not None and raw < minimum:
        _fail(key, f"must be at least {minimum}, got {raw}")
    if maximum is not None and raw > maximum:
        _fail(key, f"must be at most {maximum}, got {raw}")
    return int(raw)


def _vector(raw, key, dim) -> list[float]:
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        values = [float(raw)] * dim
    elif isinstance(raw, (list, tuple)):
        values = [_number(v, key) for v in raw]
    else:
        _fail(key, f"expected a number or a list of numbers, got {raw!r}")
    if len(values) != dim:
        _fail(key, f"expected {dim} component(s), got {len(values)}")
    return values


def _parse_domain(raw) -> DomainGeometry:
    if not isinstance(raw, dict):
        _fail("domain", "expected an object with a 'kind'")
    kind = raw.get("kind")
    if kind == "interval":
        extra = set(raw) - {"kind", "a", "b"}
        if extra:
            _fail("domain", f"unknown interval field(s) {sorted(extra)}")
        a = _number(raw.get("a"), "domain.a")
        b = _number(raw.get("b"), "domain.b")
        if not a < b:
            _fail("domain", f"interval requires a < b, got a={a}, b={b}")
        return DomainGeometry.interval(a, b)
    if kind == "ball":
        extra = set(raw) - {"kind", "center", "radius"}
        if extra:
            _fail("domain", f"unknown ball field(s) {sorted(extra)}")
        center = raw.get("center")
        if not isinstance(center, (list, tuple)) or not center:
            _fail("domain.center", "expected a non-empty list of numbers")
        center = [_number(c, "domain.center") for c in center]
        radius = _number(raw.get("radius"), "domain.radius", positive=True)
        return DomainGeometry.ball(center, radius)
    _fail("domain.kind", f"expected 'interval' or 'ball', got {kind!r}")


def _sup_norm_over_closure(domain: DomainGeometry) -> float:
    if domain.kind == "interval":
        return max(abs(domain.a), abs(domain.b))
    return float(np.sqrt((domain.center**2).sum())) + domain.radius


def _parse_control(raw, domain: DomainGeometry) -> tuple[Control, dict]:
    if not isinstance(raw, dict):
        _fail("control", "expected an object with a 'type'")
    ctype = raw.get("type")
    d = domain.dim

    def only(allowed: set):
        extra = set(raw) - allowed - {"type"}
        if extra:
            _fail("control", f"unknown field(s) {sorted(extra)} for type '{ctype}'")

    if ctype == "zero":
        only(set())
        return zero_control(), {"type": "zero"}
    if ctype == "deterministic":
        only({"value"})
        values = _vector(raw.get("value", 0.0), "control.value", d)
        vec = np.asarray(values)
        ctl = DeterministicControl(lambda t: vec, bound=float(np.linalg.norm(vec)))
        return ctl, {"type": "deterministic", "value": values}
    if ctype == "markovian":
        only({"profile", "gain"})
        profile = raw.get("profile", "linear_pull")
        if profile != "linear_pull":
            _fail("control.profile", f"unknown profile {profile!r} (known: 'linear_pull')")
        gain = _number(raw.get("gain", 1.0), "control.gain", positive=True)
        bound = gain * _sup_norm_over_closure(domain)
        ctl = MarkovianControl(lambda t, x: -gain * x, bound=bound)
        return ctl, {"type": "markovian", "profile": "linear_pull", "gain": gain}
    if ctype == "coin_flip":
        only({"scale"})
        scale = _number(raw.get("scale", 1.0), "control.scale", positive=True)
        return CoinFlipControl(scale), {"type": "coin_flip", "scale": scale}
    if ctype == "running_max_feedback":
        only({"scale"})
        scale = _number(raw.get("scale", 1.0), "control.scale", positive=True)

        def feedback(t, x, m):
            return -scale * np.sign(x) * np.minimum(1.0, m)[:, None]

        ctl = RunningMaxControl(feedback, bound=scale * math.sqrt(d))
        return ctl, {"type": "running_max_feedback", "scale": scale}
    if ctype == "wiener_proportional":
        only({"scale"})
        scale = _number(raw.get("scale", 1.0), "control.scale", positive=True)

        def rule(ctx, k):
            return scale * ctx.wiener[:, -1]

        ctl = PathFunctionalControl(rule, bound=math.inf, needs_wiener=True)
        return ctl, {"type": "wiener_proportional", "scale": scale}
    _fail(
        "control.type",
        f"unknown type {ctype!r} (known: zero, deterministic, markovian, "
        "coin_flip, running_max_feedback, wiener_proportional)",
    )


_COST_TERMS = ("zero", "quadratic")


def _parse_cost(raw, domain, control_bound) -> tuple[CostSpec, dict]:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        _fail("cost", "expected an object")
    extra = set(raw) - {"f_tilde", "terminal", "growth_constant"}
    if extra:
        _fail("cost", f"unknown field(s) {sorted(extra)}")
    f_name = raw.get("f_tilde", "zero")
    g_name = raw.get("terminal", "zero")
    if f_name not in _COST_TERMS:
        _fail("cost.f_tilde", f"expected one of {_COST_TERMS}, got {f_name!r}")
    if g_name not in _COST_TERMS:
        _fail("cost.terminal", f"expected one of {_COST_TERMS}, got {g_name!r}")
    growth = _number(raw.get("growth_constant", 2.0), "cost.growth_constant", positive=True)

    def sq(x):
        return (x * x).sum(axis=1)

    cost = quadratic_cost(
        f_tilde=sq if f_name == "quadratic" else None,
        terminal=sq if g_name == "quadratic" else None,
        growth_constant=growth,
    )
    canonical = {"f_tilde": f_name, "terminal": g_name, "growth_constant": growth}
    cost = CostSpec(
        running=cost.running,
        terminal=cost.terminal,
        growth_constant=growth,
        spec=canonical,
    )
    try:
        check_growth(cost, domain, control_bound)
    except ValueError as exc:
        _fail("cost", str(exc))
    return cost, canonical


def _parse_tolerances(raw) -> tuple[Tolerances, dict]:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        _fail("tolerances", "expected an object")
    extra = set(raw) - {"w1", "survival", "cost_sigma"}
    if extra:
        _fail("tolerances", f"unknown field(s) {sorted(extra)}")
    w1 = raw.get("w1")
    if w1 is not None:
        w1 = _number(w1, "tolerances.w1", positive=True)
    survival = _number(raw.get("survival", 0.01), "tolerances.survival", positive=True)
    cost_sigma = _number(raw.get("cost_sigma", 3.0), "tolerances.cost_sigma", positive=True)
    tol = Tolerances(w1=w1, survival=survival, cost_sigma=cost_sigma)
    return tol, {"w1": w1, "survival": survival, "cost_sigma": cost_sigma}


def parse_config(source) -> RunConfig:
    """Parse and validate a configuration.

    Parameters
    ----------
    source : dict or str
        Decoded JSON object, or JSON text.

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigError
        On any invalid or unknown field; the message names the key.
    """
    if isinstance(source, (str, bytes)):
        try:
            raw = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    elif isinstance(source, dict):
        raw = source
    else:
        raise ConfigError(f"config must be a JSON object or text, got {type(source).__name__}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object at the top level")

    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
    if "domain" not in raw:
        raise ConfigError("config key 'domain': required")
    if "horizon" not in raw:
        raise ConfigError("config key 'horizon': required")

    domain = _parse_domain(raw["domain"])
    horizon = _number(raw["horizon"], "horizon", positive=True)
    dt = _number(raw.get("dt", 1e-3), "dt", positive=True)
    try:
        grid = TimeGrid(horizon, dt)
    except ValueError as exc:
        raise ConfigError(f"config key 'dt': {exc}") from exc

    x0_list = _vector(raw.get("x0", _default_x0(domain)), "x0", domain.dim)
    x0 = np.asarray(x0_list)
    if not domain.signed_distance(x0) < 0:
        _fail("x0", f"{x0_list} is not strictly inside the domain")

    n_particles = _integer(raw.get("n_particles", 100_000), "n_particles", minimum=1)
    seed = _integer(raw.get("seed", 0), "seed", minimum=0, maximum=2**63 - 1)
    sigma = _number(raw.get("sigma", 1.0), "sigma", positive=True)
    bridge = raw.get("bridge_correction", True)
    if not isinstance(bridge, bool):
        _fail("bridge_correction", f"expected true or false, got {bridge!r}")
    threads = _integer(raw.get("threads", 1), "threads", minimum=1)

    control, control_spec = _parse_control(raw.get("control", {"type": "zero"}), domain)
    cost, cost_spec = _parse_cost(raw.get("cost"), domain, control.bound)

    cps_raw = raw.get("checkpoints", [horizon / 4, horizon / 2, horizon])
    if not isinstance(cps_raw, (list, tuple)) or not cps_raw:
        _fail("checkpoints", "expected a non-empty list of times")
    checkpoints = []
    for c in cps_raw:
        t = _number(c, "checkpoints", nonnegative=True)
        if t > horizon * (1 + 1e-9):
            _fail("checkpoints", f"time {t} exceeds the horizon {horizon}")
        checkpoints.append(t)

    bins_raw = raw.get("bins")
    if bins_raw is None:
        bins = None
        bins_canonical = None
    else:
        if isinstance(bins_raw, int) and not isinstance(bins_raw, bool):
            bins_raw = [bins_raw] * domain.dim
        if not isinstance(bins_raw, (list, tuple)):
            _fail("bins", f"expected an integer or a list of integers, got {bins_raw!r}")
        bins = tuple(_integer(m, "bins", minimum=1) for m in bins_raw)
        if len(bins) != domain.dim:
            _fail("bins", f"expected {domain.dim} count(s), got {len(bins)}")
        bins_canonical = list(bins)

    tolerances, tol_spec = _parse_tolerances(raw.get("tolerances"))

    levels_raw = raw.get("truncation_levels", [1.0, 2.0, 3.0, 4.0, 5.0])
    if not isinstance(levels_raw, (list, tuple)) or not levels_raw:
        _fail("truncation_levels", "expected a non-empty list of radii")
    levels = tuple(
        _number(v, "truncation_levels", nonnegative=True) for v in levels_raw
    )

    canonical = {
        "domain": domain.to_dict(),
        "horizon": horizon,
        "dt": dt,
        "x0": x0_list,
        "n_particles": n_particles,
        "seed": seed,
        "sigma": sigma,
        "bridge_correction": bridge,
        "threads": threads,
        "control": control_spec,
        "cost": cost_spec,
        "checkpoints": checkpoints,
        "bins": bins_canonical,
        "tolerances": tol_spec,
        "truncation_levels": list(levels),
    }

    return RunConfig(
        domain=domain,
        grid=grid,
        x0=x0,
        n_particles=n_particles,
        seed=seed,
        sigma=sigma,
        bridge_correction=bridge,
        threads=threads,
        control=control,
        cost=cost,
        checkpoints=tuple(checkpoints),
        bins=bins,
        tolerances=tolerances,
        truncation_levels=levels,
        canonical=canonical,
    )


def _default_x0(domain: DomainGeometry) -> list[float]:
    if domain.kind == "interval":
        return [(domain.a + domain.b) / 2.0]
    return [float(c) for c in domain.center]


def serialize_config(config: RunConfig) -> str:
    """Canonical JSON text of a configuration (stable key order)."""
    return json.dumps(config.canonical, indent=2, sort_keys=True) + "\n"


def config_hash(config) -> str:
    """Hex digest identifying a configuration's canonical content."""
    canonical = config.canonical if isinstance(config, RunConfig) else config
    text = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def with_overrides(config: RunConfig, *, seed=None, threads=None, bridge_correction=None) -> RunConfig:
    """New configuration with selected fields replaced, revalidated."""
    canonical = dict(config.canonical)
    if seed is not None:
        canonical["seed"] = int(seed)
    if threads is not None:
        canonical["threads"] = int(threads)
    if bridge_correction is not None:
        canonical["bridge_correction"] = bool(bridge_correction)
    return parse_config(canonical)
