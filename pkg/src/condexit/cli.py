"""Command line interface.

Subcommands::

    condexit simulate   --config cfg.json --out dir [--dump-paths]
    condexit project    --config cfg.json --out dir
    condexit cost       --config cfg.json --out dir
    condexit experiment {mimicking|value|truncation} --config cfg.json --out dir

Common flags: ``--seed`` and ``--threads`` override the configured values,
``--no-bridge-correction`` disables the boundary-bridge exit test.

Exit codes: 0 on success (and passing experiment criteria), 2 when an
experiment ran but its criteria failed, 1 on any error (bad usage, bad
config, IO).

Every run writes a ``manifest.json`` listing the configuration hash, the
seeds actually used, the package version, a timestamp, and a sha256
inventory of every other file written.  Outputs are deterministic given
the config; set the ``CONDEXIT_TIMESTAMP`` environment variable to also
pin the manifest timestamp, making reruns byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from ._version import __version__
from .config import ConfigError, RunConfig, config_hash, parse_config, with_overrides
from .costing import compute_cost, survival_curve
from .dynamics import ControlBoundError, simulate_ensemble
from .experiments import (
    ExperimentReport,
    derive_seeds,
    run_mimicking,
    run_truncation,
    run_value_comparison,
)
from .projection import estimate_projection

__all__ = ["main", "emit_outputs", "RunManifest"]

TIMESTAMP_ENV = "CONDEXIT_TIMESTAMP"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


@dataclass
class RunManifest:
    """Inventory of one CLI run, written last as manifest.json."""

    command: str
    config_hash: str
    seeds: dict
    version: str
    created: str
    outputs: list

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seeds": {k: int(v) for k, v in self.seeds.items()},
            "version": self.version,
            "created": self.created,
            "outputs": self.outputs,
        }


def _timestamp(override=None) -> str:
    if override is not None:
        return str(override)
    env = os.environ.get(TIMESTAMP_ENV)
    if env:
        return env
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _csv_bytes(header: list[str], rows) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return ("\n".join(lines) + "\n").encode()


def _survival_csv(curves: dict) -> bytes:
    labels = sorted(curves)
    header = ["time"]
    for label in labels:
        header += [f"{label}_fraction", f"{label}_stderr"]
    first = curves[labels[0]]
    rows = []
    for i in range(len(first)):
        row = [first.times[i]]
        for label in labels:
            row += [curves[label].fraction[i], curves[label].stderr[i]]
        rows.append(row)
    return _csv_bytes(header, rows)


def _report_files(report: ExperimentReport) -> dict[str, bytes]:
    files = {"report.json": _json_bytes(report.to_dict())}
    if report.survival:
        files["survival.csv"] = _survival_csv(report.survival)
    if report.w1_rows:
        files["w1.csv"] = _csv_bytes(
            ["time", "w1", "self_p95", "tolerance", "n_main", "n_mimic", "passed"],
            (
                [r["time"], r["w1"], r["self_p95"], r["tolerance"], r["n_main"], r["n_mimic"], r["passed"]]
                for r in report.w1_rows
            ),
        )
    if report.truncation_rows:
        files["truncation.csv"] = _csv_bytes(
            ["level", "cost", "stderr", "gap", "stderr_gap"],
            (
                [r["level"], r["cost"], r["stderr"], r["gap"], r["stderr_gap"]]
                for r in report.truncation_rows
            ),
        )
    if report.marginals:
        times = sorted({t for by_t in report.marginals.values() for t in by_t})
        for t in times:
            rows = []
            dim = None
            for label in sorted(report.marginals):
                samples = report.marginals[label].get(t)
                if samples is None:
                    continue
                dim = samples.shape[1]
                for row in samples:
                    rows.append([label] + list(row))
            header = ["label"] + [f"x{j}" for j in range(dim or 1)]
            files[f"marginals_t{t:g}.csv"] = _csv_bytes(header, rows)
    return files


def emit_outputs(
    report: ExperimentReport,
    out_dir,
    *,
    command: str = "experiment",
    timestamp=None,
    extra_files: dict | None = None,
) -> RunManifest:
    """Write a report's files plus a manifest to a directory.

    ``extra_files`` maps additional file names to bytes.  The manifest
    (written last) lists the name, size, and sha256 of every other file,
    so a complete run is verifiable after the fact.
    """
    files = _report_files(report)
    if extra_files:
        files.update(extra_files)
    return _write_files(
        files, out_dir, command, report.config_hash, report.seeds, timestamp
    )


def _write_files(files: dict[str, bytes], out_dir, command, cfg_hash, seeds, timestamp=None) -> RunManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inventory = []
    for name in sorted(files):
        data = files[name]
        (out / name).write_bytes(data)
        inventory.append(
            {"name": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()}
        )
    # The manifest cannot hash itself, so it appears name-only, like a
    # wheel's RECORD entry for RECORD.
    inventory.append({"name": "manifest.json"})
    manifest = RunManifest(
        command=command,
        config_hash=cfg_hash,
        seeds=seeds,
        version=__version__,
        created=_timestamp(timestamp),
        outputs=inventory,
    )
    (out / "manifest.json").write_bytes(_json_bytes(manifest.to_dict()))
    return manifest


def _simulate_from_config(config: RunConfig, seed: int):
    return simulate_ensemble(
        config.control,
        config.domain,
        config.grid,
        config.x0,
        config.n_particles,
        seed,
        sigma=config.sigma,
        bridge_correction=config.bridge_correction,
        threads=config.threads,
    )


def _cmd_simulate(config: RunConfig, out_dir, dump_paths: bool) -> int:
    ens = _simulate_from_config(config, config.seed)
    curve = survival_curve(ens)
    files = {
        "summary.json": _json_bytes(
            {"summary": ens.summary(), "config_hash": config_hash(config)}
        ),
        "survival.csv": _survival_csv({"main": curve}),
    }
    if dump_paths:
        import io

        buf = io.StringIO()
        ens.dump_paths(buf)
        files["paths.csv"] = buf.getvalue().encode()
    _write_files(
        files, out_dir, "simulate", config_hash(config), {"main": config.seed}
    )
    return 0


def _cmd_project(config: RunConfig, out_dir) -> int:
    ens = _simulate_from_config(config, config.seed)
    field = estimate_projection(ens, config.bins)
    files = {
        "summary.json": _json_bytes(
            {"summary": ens.summary(), "config_hash": config_hash(config)}
        ),
        "driftfield.json": _json_bytes(field.to_dict()),
    }
    _write_files(files, out_dir, "project", config_hash(config), {"main": config.seed})
    return 0


def _cmd_cost(config: RunConfig, out_dir) -> int:
    seeds = derive_seeds(config.seed)
    ens = _simulate_from_config(config, config.seed)
    report = compute_cost(ens, config.cost, seed=seeds["bootstrap"])
    curve = survival_curve(ens)
    files = {
        "cost.json": _json_bytes(
            {"cost": report.to_dict(), "config_hash": config_hash(config)}
        ),
        "survival.csv": _survival_csv({"main": curve}),
    }
    _write_files(
        files,
        out_dir,
        "cost",
        config_hash(config),
        {"main": config.seed, "bootstrap": seeds["bootstrap"]},
    )
    return 0


_EXPERIMENTS = {
    "mimicking": run_mimicking,
    "value": run_value_comparison,
    "truncation": run_truncation,
}


def _cmd_experiment(kind: str, config: RunConfig, out_dir) -> int:
    report = _EXPERIMENTS[kind](config)
    emit_outputs(report, out_dir, command=f"experiment {kind}")
    for row in report.criteria:
        status = "pass" if row.passed else "FAIL"
        print(f"[{status}] {row.name}: value={row.value} tolerance={row.tolerance}")
    print(f"experiment {kind}: {'PASSED' if report.passed else 'FAILED'}")
    return 0 if report.passed else 2


def _build_parser() -> _Parser:
    parser = _Parser(prog="condexit", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument(
            "--threads", type=int, default=None, help="override the configured thread count"
        )
        p.add_argument(
            "--no-bridge-correction",
            action="store_true",
            help="disable the boundary-bridge exit test",
        )

    p_sim = sub.add_parser("simulate", help="simulate one ensemble")
    common(p_sim)
    p_sim.add_argument(
        "--dump-paths", action="store_true", help="also write the full trajectory table"
    )
    p_proj = sub.add_parser("project", help="simulate and estimate the drift projection")
    common(p_proj)
    p_cost = sub.add_parser("cost", help="simulate and compute the conditional cost")
    common(p_cost)
    p_exp = sub.add_parser("experiment", help="run an experiment pipeline")
    p_exp.add_argument("kind", choices=sorted(_EXPERIMENTS), help="experiment to run")
    common(p_exp)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc
        config = parse_config(text)
        if args.seed is not None or args.threads is not None or args.no_bridge_correction:
            config = with_overrides(
                config,
                seed=args.seed,
                threads=args.threads,
                bridge_correction=False if args.no_bridge_correction else None,
            )
        if args.command == "simulate":
            return _cmd_simulate(config, args.out, args.dump_paths)
        if args.command == "project":
            return _cmd_project(config, args.out)
        if args.command == "cost":
            return _cmd_cost(config, args.out)
        return _cmd_experiment(args.kind, config, args.out)
    except (CliError, ConfigError, ControlBoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
