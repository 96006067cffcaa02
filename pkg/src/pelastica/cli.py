"""Command-line front end: ``pelastica run`` and ``pelastica export-plots``.

Options can come from a ``key=value`` config file (``--config``) and from
flags; flags win. Config keys are the flag names without the leading dashes.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .energy import EnergyParams
from .flow import (
    FlowConfig,
    FlowError,
    best_fit_circle,
    critical_radius,
    dissipation_report,
    fenchel_checks,
    holder_pairs_check,
    parse_ledger,
    run_flow,
    write_trajectory,
)
from .geometry import ClosedCurve, CurveError, read_curve

logger = logging.getLogger("pelastica")

PRESETS = ("circle", "critical-circle", "ellipse", "wiggly-circle")
LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class RunSpecError(ValueError):
    """Invalid command-line or config-file input."""


@dataclass(frozen=True)
class PresetOptions:
    radius: float = 1.0
    a: float = 1.2
    b: float = 0.8
    amp: float = 0.02
    freq: int = 5


@dataclass(frozen=True)
class RunSpec:
    scenario: str
    config: FlowConfig
    output_dir: Path
    seed: int = 0
    curve_file: Path | None = None
    preset: PresetOptions = field(default_factory=PresetOptions)


def _float(text):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise RunSpecError(f"malformed number: {text!r}") from None
    if not math.isfinite(value):
        raise RunSpecError(f"number must be finite: {text!r}")
    return value


def _int(text):
    try:
        return int(text)
    except (TypeError, ValueError):
        raise RunSpecError(f"malformed integer: {text!r}") from None


def _switch(text):
    if text not in ("on", "off"):
        raise RunSpecError(f"reanchor must be 'on' or 'off', got {text!r}")
    return text


KEYS = {
    "scenario": str,
    "curve-file": str,
    "output": str,
    "seed": _int,
    "p": _float,
    "lambda": _float,
    "h": _float,
    "T": _float,
    "N": _int,
    "grad-tol": _float,
    "mu": _float,
    "W": _float,
    "max-inner-iters": _int,
    "eps0": _float,
    "reanchor": _switch,
    "radius": _float,
    "a": _float,
    "b": _float,
    "amp": _float,
    "freq": _int,
}
DEFAULTS = {"p": 3.0, "lambda": 1.0, "h": 1e-3, "T": 0.5, "N": 256, "reanchor": "on", "seed": 0,
            "output": "pelastica-out"}


def parse_config_text(text, source="config"):
    """``key=value`` lines (``#`` comments allowed) into converted values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise RunSpecError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-") if key.replace("_", "-") in KEYS else key
        if key not in KEYS:
            raise RunSpecError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = KEYS[key](value)
    return values


def _build_spec(values):
    merged = {**DEFAULTS, **values}
    scenario = merged.get("scenario")
    curve_file = merged.get("curve-file")
    if scenario is None and curve_file is None:
        raise RunSpecError("missing scenario: give --scenario or --curve-file")
    if scenario is None:
        scenario = "file"
    if scenario != "file" and scenario not in PRESETS:
        raise RunSpecError(f"unknown scenario {scenario!r}; choose from {', '.join(PRESETS)}")
    if scenario == "file" and curve_file is None:
        raise RunSpecError("scenario 'file' needs --curve-file")
    try:
        params = EnergyParams(p=merged["p"], lam=merged["lambda"])
        config = FlowConfig(
            params=params,
            h=merged["h"],
            T=merged["T"],
            N=merged["N"],
            mu=merged.get("mu"),
            W=merged.get("W", FlowConfig.W),
            grad_tol=merged.get("grad-tol"),
            max_inner_iters=merged.get("max-inner-iters", FlowConfig.max_inner_iters),
            reanchor=merged["reanchor"] == "on",
            eps0=merged.get("eps0", FlowConfig.eps0),
        )
    except ValueError as exc:
        raise RunSpecError(str(exc)) from None
    preset = PresetOptions(**{k: merged[k] for k in ("radius", "a", "b", "amp", "freq") if k in merged})
    if not (preset.radius > 0 and preset.a > 0 and preset.b > 0 and preset.amp >= 0 and preset.freq >= 2):
        raise RunSpecError("preset needs radius, a, b > 0, amp >= 0 and freq >= 2")
    return RunSpec(
        scenario=scenario,
        config=config,
        output_dir=Path(merged["output"]),
        seed=merged["seed"],
        curve_file=Path(curve_file) if curve_file is not None else None,
        preset=preset,
    )


def _run_parser(parser):
    parser.add_argument("--config", help="key=value file; flags override its values")
    for key in KEYS:
        kwargs = {"dest": key, "default": None}
        if key == "reanchor":
            kwargs["choices"] = ("on", "off")
        parser.add_argument(f"--{key}", **kwargs)
    return parser


def build_parser():
    parser = argparse.ArgumentParser(prog="pelastica", description="Minimising-movement p-elastic flow of closed curves.")
    sub = parser.add_subparsers(dest="command", required=True)
    _run_parser(sub.add_parser("run", help="run a scenario and write a trajectory directory"))
    plots = sub.add_parser("export-plots", help="write plot-ready CSV files for a trajectory")
    plots.add_argument("trajectory", help="trajectory directory written by 'run'")
    return parser


def parse_run_spec(argv):
    """Parse ``run`` options (without the subcommand) into a :class:`RunSpec`."""
    parser = _run_parser(argparse.ArgumentParser(prog="pelastica run"))
    ns = parser.parse_args(argv)
    return _spec_from_namespace(ns)


def _spec_from_namespace(ns):
    values = {}
    if ns.config is not None:
        try:
            text = Path(ns.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise RunSpecError(f"cannot read config file: {exc}") from None
        values.update(parse_config_text(text, source=ns.config))
    for key in KEYS:
        flag = getattr(ns, key)
        if flag is not None:
            values[key] = KEYS[key](flag)
    return _build_spec(values)


def format_run_spec(spec):
    """Config-file text that parses back to ``spec``."""
    cfg = spec.config
    items = [("scenario", spec.scenario)]
    if spec.curve_file is not None:
        items.append(("curve-file", str(spec.curve_file)))
    items += [
        ("output", str(spec.output_dir)),
        ("seed", str(spec.seed)),
        ("p", repr(cfg.params.p)),
        ("lambda", repr(cfg.params.lam)),
        ("h", repr(cfg.h)),
        ("T", repr(cfg.T)),
        ("N", str(cfg.N)),
    ]
    if cfg.grad_tol is not None:
        items.append(("grad-tol", repr(cfg.grad_tol)))
    if cfg.mu is not None:
        items.append(("mu", repr(cfg.mu)))
    items += [
        ("W", repr(cfg.W)),
        ("max-inner-iters", str(cfg.max_inner_iters)),
        ("eps0", repr(cfg.eps0)),
        ("reanchor", "on" if cfg.reanchor else "off"),
    ]
    items += [(f.name, repr(getattr(spec.preset, f.name))) for f in fields(spec.preset)]
    return "".join(f"{k}={v}\n" for k, v in items)


def _polar_curve(radius_fn, n_nodes):
    theta = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    r = radius_fn(theta)
    return ClosedCurve(np.column_stack([r * np.cos(theta), r * np.sin(theta)]), 2.0 * np.pi)


def preset_curve(spec):
    """Initial curve for a preset scenario (before arc-length resampling)."""
    n_nodes = spec.config.N
    opts = spec.preset
    theta = 2.0 * np.pi * np.arange(n_nodes) / n_nodes
    if spec.scenario == "circle":
        return _polar_curve(lambda t: np.full_like(t, opts.radius), n_nodes)
    if spec.scenario == "critical-circle":
        # the N-gon energy has its critical radius slightly above the continuum one
        r = critical_radius(spec.config.params, n_nodes)
        return _polar_curve(lambda t: np.full_like(t, r), n_nodes)
    if spec.scenario == "ellipse":
        return ClosedCurve(np.column_stack([opts.a * np.cos(theta), opts.b * np.sin(theta)]), 2.0 * np.pi)
    if spec.scenario == "wiggly-circle":
        rng = np.random.default_rng(spec.seed)
        modes = np.arange(2, opts.freq + 1)
        coeff = rng.standard_normal(len(modes)) / modes
        phase = rng.uniform(0.0, 2.0 * np.pi, len(modes))
        profile = np.cos(np.outer(theta, modes) + phase) @ coeff
        profile *= opts.amp / np.max(np.abs(profile))
        return _polar_curve(lambda t: opts.radius + profile, n_nodes)
    raise RunSpecError(f"unknown scenario {spec.scenario!r}")


def initial_curve(spec):
    if spec.scenario == "file":
        return read_curve(spec.curve_file)
    return preset_curve(spec)


def check_invariants(trajectory):
    """Named pass/fail outcomes of every invariant asserted on a run."""
    params = trajectory.config.params
    tol = 10.0 * trajectory.grad_tol
    steps = trajectory.ledger[1:]
    checks = {}
    checks["energy_monotone"] = all(
        r.energy <= prev.energy + tol + max(prev.reanchor_drift, 0.0)
        for prev, r in zip(trajectory.ledger, steps)
    )
    checks["dissipation_inequality"] = all(r.dissipation <= r.energy_before - r.energy + tol for r in steps)
    checks["admissibility"] = all(r.margin_mu > 0.0 and r.margin_W > 0.0 for r in steps)
    margins = [
        trajectory.anchors[s.anchor].graph(s.coords).regularity_margin() for s in trajectory.step_snapshots()
    ]
    checks["regularity_margin"] = min(margins) >= 0.5 - 1e-6
    fen = [fenchel_checks(c, params) for c in trajectory.step_curves()]
    checks["fenchel_total_curvature"] = all(f[0] >= 0.0 for f in fen)
    checks["length_lower_bound"] = all(f[1] >= 0.0 for f in fen)
    if steps:
        checks["dissipation_summary"] = dissipation_report(trajectory).ok
        worst, _, _ = holder_pairs_check(trajectory)
        checks["holder_interpolant"] = worst <= 1.0
    return checks


def write_summary(path, spec, trajectory, checks):
    ledger = trajectory.ledger
    lines = [
        f"scenario={spec.scenario}",
        f"termination={trajectory.reason}",
        f"steps={len(ledger) - 1}",
        f"final_time={ledger[-1].t!r}",
        f"initial_energy={ledger[0].energy!r}",
        f"final_energy={ledger[-1].energy!r}",
        f"anchors={len(trajectory.anchors)}",
    ]
    final = trajectory.final_curve()
    if final.dim == 2:
        _, radius = best_fit_circle(final)
        r_star = critical_radius(spec.config.params)
        lines += [
            f"best_fit_radius={radius!r}",
            f"critical_radius={r_star!r}",
            f"radius_relative_error={abs(radius - r_star) / r_star!r}",
        ]
    lines += [f"check_{name}={'pass' if ok else 'fail'}" for name, ok in checks.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_failure(output_dir, invariant, detail):
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    detail = " ".join(str(detail).split())
    (out / "failure.txt").write_text(f"invariant={invariant}\ndetail={detail}\n", encoding="utf-8")


def run_scenario(spec):
    """Run ``spec``, write all artifacts and return the exit status."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "failure.txt"
    if stale.exists():
        stale.unlink()
    try:
        curve = initial_curve(spec)
    except (CurveError, OSError) as exc:
        logger.error("cannot load initial curve: %s", exc)
        write_failure(out, "curve_file_parse", exc)
        return 2
    try:
        trajectory = run_flow(curve, spec.config)
    except (FlowError, CurveError) as exc:
        logger.error("%s", exc)
        write_failure(out, "initial_decomposition", exc)
        return 3
    write_trajectory(trajectory, out)
    checks = check_invariants(trajectory)
    write_summary(out / "summary.txt", spec, trajectory, checks)
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        write_failure(out, failed[0], f"violated invariants: {', '.join(failed)}")
        logger.error("invariants violated: %s", ", ".join(failed))
        return 1
    logger.info("run finished: %s", trajectory.reason)
    return 0


def export_plots(directory):
    """Write ``energy_vs_t.csv``, ``dissipation_vs_t.csv`` and ``curve_frames.csv``."""
    root = Path(directory)
    ledger_path = root / "ledger.csv"
    if not ledger_path.is_file():
        raise FileNotFoundError(f"missing ledger: {ledger_path}")
    rows = parse_ledger(ledger_path.read_text(encoding="ascii"))
    energy_lines = ["t,energy,p_energy,length"]
    diss_lines = ["t,dissipation,cumulative_dissipation,displacement_l2"]
    cumulative = 0.0
    for row in rows:
        cumulative += row["dissipation"]
        energy_lines.append(f"{row['t']!r},{row['energy']!r},{row['p_energy']!r},{row['length']!r}")
        diss_lines.append(f"{row['t']!r},{row['dissipation']!r},{cumulative!r},{row['displacement_l2']!r}")
    frames = None
    for row in rows:
        path = root / f"curve_{row['step']}.txt"
        if not path.is_file():
            continue
        curve = read_curve(path)
        if frames is None:
            frames = ["step,node," + ",".join(f"x{k}" for k in range(curve.dim))]
        for i, node in enumerate(curve.nodes):
            frames.append(f"{row['step']},{i}," + ",".join(repr(float(v)) for v in node))
    outputs = {
        "energy_vs_t.csv": energy_lines,
        "dissipation_vs_t.csv": diss_lines,
        "curve_frames.csv": frames or ["step,node"],
    }
    for name, lines in outputs.items():
        (root / name).write_text("\n".join(lines) + "\n", encoding="ascii")
    return [root / name for name in outputs]


def configure_logging():
    level_name = os.environ.get("PELASTICA_LOG", "quiet").strip().lower()
    level = LOG_LEVELS.get(level_name)
    if level is None:
        raise RunSpecError(f"PELASTICA_LOG must be one of {', '.join(LOG_LEVELS)}, got {level_name!r}")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configure_logging()
        if args.command == "export-plots":
            for path in export_plots(args.trajectory):
                print(path)
            return 0
        spec = _spec_from_namespace(args)
    except (RunSpecError, FileNotFoundError, ValueError) as exc:
        print(f"pelastica: error: {exc}", file=sys.stderr)
        return 2
    return run_scenario(spec)


if __name__ == "__main__":
    sys.exit(main())
