"""Command-line front end: config loading, run orchestration and CSV/SVG output.

Usage::

    onco simulate|optimize|compare|gradcheck [--config FILE] [--out DIR]
         [--control zero|exp-decay|FILE] [--nx N] [--seed S]

Exit codes: 0 success, 2 config error, 3 solver instability,
4 convergence failure, 5 gradient check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, SolverError, UsageError, ValidationError
from .forward import (
    ControlProfile,
    Trajectory,
    cost,
    initial_drug,
    initial_tumor,
    solve_forward,
)
from .grid import Grid, Kernel, build_grid, build_kernel
from .model import ModelParams
from .optimize import OptimizeReport, gradient_check, initial_guess, optimize

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CONVERGENCE = 4
EXIT_GRADCHECK = 5

GRADCHECK_TOL = 5e-2
# default state.csv decimation: every 10th level, coarser if that exceeds this many rows of t
MAX_STATE_LEVELS = 200

_PARAM_KEYS = {f.name for f in dataclasses.fields(ModelParams)}


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    n_x: int = 200
    cfl: float = 0.025
    control: str | None = None  # None: the command's own default
    output_dir: str | None = None
    stride: int | None = None  # None: automatic state.csv decimation
    seed: int = 0
    p0_norm: str = "peak"
    max_iter: int = 50
    rel_tol: float = 5e-5
    n_probes: int = 5
    fd_eps: float = 1e-4
    svg: bool = False


_INT_KEYS = {"n_x", "stride", "seed", "max_iter", "n_probes"}
_FLOAT_KEYS = {"cfl", "rel_tol", "fd_eps"}
_STR_KEYS = {"control", "output_dir", "p0_norm"}
_BOOL_KEYS = {"svg"}
CONFIG_KEYS = _PARAM_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _BOOL_KEYS


def _convert(key: str, raw: str):
    try:
        if key in _PARAM_KEYS or key in _FLOAT_KEYS:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
        if key in _INT_KEYS:
            return int(raw)
    except ValueError:
        raise ValidationError(key, f"cannot parse {raw!r} as a number") from None
    if key in _BOOL_KEYS:
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValidationError(key, f"expected true/false, got {raw!r}")
    return raw


def config_from_mapping(values: dict) -> RunConfig:
    """Validate a flat key -> value mapping; missing keys take the defaults."""
    unknown = set(values) - CONFIG_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ValidationError(key, "unknown configuration key")
    params = ModelParams(**{k: v for k, v in values.items() if k in _PARAM_KEYS})
    rest = {k: v for k, v in values.items() if k not in _PARAM_KEYS}
    cfg = RunConfig(params=params, **rest)
    if cfg.n_x < 3:
        raise ValidationError("n_x", "need at least 3 nodes")
    if not cfg.cfl > 0:
        raise ValidationError("cfl", "must be > 0")
    if cfg.stride is not None and cfg.stride < 1:
        raise ValidationError("stride", "must be >= 1")
    if cfg.p0_norm not in ("peak", "mass"):
        raise ValidationError("p0_norm", "must be 'peak' or 'mass'")
    if cfg.max_iter < 0:
        raise ValidationError("max_iter", "must be >= 0")
    if not cfg.rel_tol > 0:
        raise ValidationError("rel_tol", "must be > 0")
    if cfg.n_probes < 1:
        raise ValidationError("n_probes", "must be >= 1")
    if not cfg.fd_eps > 0:
        raise ValidationError("fd_eps", "must be > 0")
    if cfg.control not in (None, "zero", "exp-decay") and not Path(cfg.control).is_file():
        raise ValidationError("control", f"no such control file {cfg.control!r}")
    return cfg


def load_config(path) -> RunConfig:
    """Read a flat ``key = value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key or not raw:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", lineno)
        if key not in CONFIG_KEYS:
            raise ValidationError(key, f"unknown configuration key (line {lineno})")
        values[key] = _convert(key, raw)
    return config_from_mapping(values)


# -- setup ----------------------------------------------------------------------


@dataclass
class Setup:
    params: ModelParams
    grid: Grid
    kernel: Kernel
    p0: np.ndarray
    d0: np.ndarray


def build_setup(cfg: RunConfig) -> Setup:
    params = cfg.params
    grid = build_grid(params, cfg.n_x, cfg.cfl, p0=lambda x: _p0(x, cfg.p0_norm))
    return Setup(params, grid, build_kernel(grid, params.sigma), initial_tumor(grid, cfg.p0_norm), initial_drug(grid))


def _p0(x, norm):
    from .forward import initial_tumor_values

    return initial_tumor_values(x, norm)


def read_control_csv(path, grid: Grid, params: ModelParams) -> ControlProfile:
    """Load a ``t,I`` file; samples are interpolated when the times differ from the grid."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read control file {path}: {exc}") from None
    if data.shape[1] != 2 or data.shape[0] < 1:
        raise ConfigError(f"control file {path} must have two columns t,I")
    t, values = data[:, 0], data[:, 1]
    if t.size == grid.n_t and np.allclose(t, grid.times, rtol=0, atol=1e-9 * grid.t_final):
        samples = values
    else:
        samples = np.interp(grid.times, t, values)
    try:
        return ControlProfile.checked(samples, grid, params)
    except UsageError as exc:
        raise ValidationError("control", str(exc)) from None


def resolve_control(source: str, grid: Grid, params: ModelParams) -> ControlProfile:
    if source == "zero":
        return ControlProfile.constant(0.0, grid)
    if source == "exp-decay":
        return initial_guess(grid, params)
    return read_control_csv(source, grid, params)


def output_dir(cfg: RunConfig, override=None) -> Path:
    path = Path(override or cfg.output_dir or os.environ.get("ONCO_OUT_DIR") or "onco_out")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path}: {exc}") from None
    return path


def state_stride(cfg: RunConfig, grid: Grid) -> int:
    if cfg.stride is not None:
        return cfg.stride
    return max(10, math.ceil(grid.steps / MAX_STATE_LEVELS))


# -- output helpers ----------------------------------------------------------


def write_csv(path: Path, header: list[str], columns) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    if not np.all(np.isfinite(data)):
        raise ValueError(f"refusing to write non-finite values to {path}")
    np.savetxt(path, data, fmt="%.12g", delimiter=",", header=",".join(header), comments="")


def _svg(path: Path, x, series, xlabel, ylabel, logy=False) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y, style in series:
        ax.plot(x, y, style, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# -- commands -------------------------------------------------------------------


def drug_peak_time(traj: Trajectory) -> float:
    """Time at which the spatial mean of d is largest."""
    mean = np.asarray(traj.drug_mass) / traj.params.length
    if not np.any(mean > 0):
        raise UsageError("drug concentration is zero throughout; peak time undefined")
    return float(traj.grid.times[int(np.argmax(mean))])


def cmd_simulate(cfg: RunConfig, out: Path, control_source: str | None = None) -> dict:
    setup = build_setup(cfg)
    control = resolve_control(control_source or cfg.control or "zero", setup.grid, setup.params)
    t0 = time.perf_counter()
    traj = solve_forward(control, setup.p0, setup.d0, setup.grid, setup.params, setup.kernel, state_stride(cfg, setup.grid))
    runtime = time.perf_counter() - t0
    grid = setup.grid

    t_rows = np.repeat(traj.times, grid.n_x)
    x_rows = np.tile(grid.nodes, traj.levels.size)
    write_csv(out / "state.csv", ["t", "x", "p", "d"], [t_rows, x_rows, traj.p_hist.ravel(), traj.d_hist.ravel()])
    write_csv(out / "mass.csv", ["t", "mass"], [grid.times, traj.mass])
    summary = {
        "J": cost(control, traj, setup.params),
        "final_mass": float(traj.mass[-1]),
        "p_min": float(traj.min_p.min()),
        "p_max": float(traj.peak.max()),
        "d_min": float(traj.min_d.min()),
        "d_max": float(traj.d_hist.max()),
        "clamp_count": traj.clamps,
        "n_x": grid.n_x,
        "n_t": grid.n_t,
        "dt": grid.dt,
        "runtime_s": runtime,
    }
    (out / "summary.txt").write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in summary.items()))
    if cfg.svg:
        _svg(out / "mass.svg", grid.times, [("M(t)", traj.mass, "-")], "t", "tumor mass")
    return summary


def _fmt(v):
    return f"{v:.12g}" if isinstance(v, float) else str(v)


def run_optimize(cfg: RunConfig, setup: Setup, out: Path, control_source: str | None = None) -> OptimizeReport:
    initial = resolve_control(control_source or cfg.control or "exp-decay", setup.grid, setup.params)
    with open(out / "convergence.csv", "w") as fh:
        fh.write("iter,J,grad_norm,step\n")

        def on_iterate(rec):
            fh.write(f"{rec.iteration},{rec.J:.12g},{rec.grad_norm:.12g},{rec.step:.12g}\n")
            fh.flush()

        report = optimize(
            setup.params, setup.grid, setup.p0, setup.d0, kernel=setup.kernel, initial=initial,
            max_iter=cfg.max_iter, rel_tol=cfg.rel_tol, callback=on_iterate,
        )
    grid = setup.grid
    write_csv(out / "control.csv", ["t", "I"], [grid.times, report.final_control.samples])
    keep = np.unique(np.append(np.arange(0, grid.n_t, state_stride(cfg, grid)), grid.n_t - 1))
    cols = [grid.times[keep]] + [c[keep] for c in report.controls]
    write_csv(out / "control_evolution.csv", ["t"] + [f"I_{k}" for k in range(len(report.controls))], cols)
    if cfg.svg:
        _svg(out / "control.svg", grid.times, [("I*", report.final_control.samples, "k-")], "t", "I(t)")
        iters = [it.iteration for it in report.iterates]
        _svg(out / "convergence.svg", iters, [("J", report.costs, "o-")], "iteration", "J")
        _svg(out / "grad_norm.svg", iters, [("|grad J|", report.grad_norms, "o-")], "iteration", "gradient norm", logy=True)
        series = [(f"I_{k}", c, "--" if k == 0 else "-") for k, c in enumerate(report.controls)]
        _svg(out / "control_evolution.svg", grid.times, series, "t", "I(t)")
    return report


def cmd_optimize(cfg: RunConfig, out: Path, control_source: str | None = None) -> OptimizeReport:
    setup = build_setup(cfg)
    return run_optimize(cfg, setup, out, control_source)


@dataclass
class ComparisonMetrics:
    t: np.ndarray
    M_c: np.ndarray
    M_u: np.ndarray
    delta_pct: np.ndarray
    peak_c: np.ndarray
    peak_u: np.ndarray

    @classmethod
    def from_runs(cls, controlled: Trajectory, uncontrolled: Trajectory) -> "ComparisonMetrics":
        t = controlled.grid.times
        keep = uncontrolled.mass > 0
        m_c, m_u = controlled.mass[keep], uncontrolled.mass[keep]
        return cls(t[keep], m_c, m_u, (m_u - m_c) / m_u * 100.0, controlled.peak[keep], uncontrolled.peak[keep])

    def at(self, t: float) -> int:
        return int(np.argmin(np.abs(self.t - t)))

    def peak_reduction_pct(self, t: float) -> float:
        i = self.at(t)
        return float((self.peak_u[i] - self.peak_c[i]) / self.peak_u[i] * 100.0)


def cmd_compare(cfg: RunConfig, out: Path, control_source: str | None = None):
    setup = build_setup(cfg)
    report = run_optimize(cfg, setup, out, control_source)
    controlled = report.final_trajectory
    uncontrolled = solve_forward(
        ControlProfile.constant(0.0, setup.grid), setup.p0, setup.d0, setup.grid, setup.params, setup.kernel,
        stride=setup.grid.n_t,
    )
    metrics = ComparisonMetrics.from_runs(controlled, uncontrolled)
    write_csv(
        out / "metrics.csv",
        ["t", "M_c", "M_u", "delta_pct", "peak_c", "peak_u"],
        [metrics.t, metrics.M_c, metrics.M_u, metrics.delta_pct, metrics.peak_c, metrics.peak_u],
    )
    summary = {
        "delta_final_pct": float(metrics.delta_pct[-1]),
        "peak_reduction_t0.9_pct": metrics.peak_reduction_pct(0.9),
        "drug_peak_time": drug_peak_time(controlled),
        "J_optimal": report.iterates[-1].J,
        "J_uncontrolled": cost(ControlProfile.constant(0.0, setup.grid), uncontrolled, setup.params),
        "iterations": report.iterations_used,
        "converged": report.converged,
    }
    (out / "compare_summary.txt").write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in summary.items()))
    if cfg.svg:
        _svg(out / "delta.svg", metrics.t, [("Delta(t) %", metrics.delta_pct, "-")], "t", "relative improvement (%)")
        _svg(
            out / "mass_comparison.svg", metrics.t,
            [("controlled", metrics.M_c, "b-"), ("uncontrolled", metrics.M_u, "r--")], "t", "tumor mass",
        )
    return report, metrics, summary


def cmd_gradcheck(cfg: RunConfig, control_source: str | None = None):
    setup = build_setup(cfg)
    control = resolve_control(control_source or cfg.control or "exp-decay", setup.grid, setup.params)
    return gradient_check(
        setup.params, setup.grid, setup.p0, setup.d0, control,
        n_probes=cfg.n_probes, seed=cfg.seed, eps=cfg.fd_eps, kernel=setup.kernel,
    )


# -- entry point ----------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="onco", description="Nonlocal tumor growth with optimal drug control.")
    ap.add_argument("command", choices=["simulate", "optimize", "compare", "gradcheck"])
    ap.add_argument("--config", help="key = value configuration file (defaults if omitted)")
    ap.add_argument("--out", help="output directory (default: $ONCO_OUT_DIR or ./onco_out)")
    ap.add_argument("--control", help="zero, exp-decay, or a t,I CSV file")
    ap.add_argument("--nx", type=int, help="number of spatial nodes")
    ap.add_argument("--seed", type=int, help="seed for gradient-check probe directions")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        overrides = {}
        if args.nx is not None:
            overrides["n_x"] = args.nx
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.control is not None:
            overrides["control"] = args.control
        if overrides:
            flat = {k: getattr(cfg.params, k) for k in _PARAM_KEYS}
            flat.update({f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.name != "params"})
            flat.update(overrides)
            cfg = config_from_mapping(flat)

        if args.command == "gradcheck":
            results = cmd_gradcheck(cfg)
            ok = True
            print(f"{'probe':>5}  {'adjoint':>16}  {'finite diff':>16}  {'rel err':>10}")
            for k, res in enumerate(results):
                passed = res.rel_error <= GRADCHECK_TOL
                ok &= passed
                print(f"{k:5d}  {res.adjoint:16.9e}  {res.finite_difference:16.9e}  {res.rel_error:10.3e}  {'PASS' if passed else 'FAIL'}")
            return EXIT_OK if ok else EXIT_GRADCHECK

        out = output_dir(cfg, args.out)
        if args.command == "simulate":
            summary = cmd_simulate(cfg, out)
            print(f"J = {summary['J']:.12g}; wrote state.csv, mass.csv, summary.txt to {out}")
            return EXIT_OK
        if args.command == "optimize":
            report = cmd_optimize(cfg, out)
        else:
            report, _, summary = cmd_compare(cfg, out)
            for k, v in summary.items():
                print(f"{k} = {_fmt(v)}")
        print(f"{report.message}; J = {report.iterates[-1].J:.12g} after {report.iterations_used} iterations")
        return EXIT_OK if report.converged else EXIT_CONVERGENCE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
