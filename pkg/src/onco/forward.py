"""Explicit-Euler integration of the coupled tumor/drug system and the cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _loops
from .errors import NonFiniteError, StabilityError, UsageError, ValidationError
from .grid import (
    Grid,
    Kernel,
    advection_rhs,
    build_kernel,
    convolve,
    diffusion_rhs,
)
from .model import ModelParams, eval_exchange, eval_growth, eval_kill, velocity

P0_CENTER = 0.5
P0_WIDTH = 0.1


def initial_tumor_values(x, normalization: str = "peak") -> np.ndarray:
    """Gaussian bump centred at 0.5 with standard deviation 0.1.

    ``"peak"`` scales it to a maximum of 1; ``"mass"`` to unit integral
    over the real line.
    """
    x = np.asarray(x, dtype=float)
    bump = np.exp(-0.5 * ((x - P0_CENTER) / P0_WIDTH) ** 2)
    if normalization == "peak":
        return bump
    if normalization == "mass":
        return bump / (P0_WIDTH * np.sqrt(2.0 * np.pi))
    raise ValidationError("p0_norm", f"unknown normalization {normalization!r}")


def initial_tumor(grid: Grid, normalization: str = "peak") -> np.ndarray:
    return initial_tumor_values(grid.nodes, normalization)


def initial_drug(grid: Grid) -> np.ndarray:
    return np.zeros(grid.n_x)


def check_field(values, grid: Grid, name: str = "field") -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.n_x,):
        raise UsageError(f"{name} has shape {values.shape}, expected ({grid.n_x},)")
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return values


@dataclass(frozen=True, eq=False)
class ControlProfile:
    """Infusion rate I(t_n) at every time level, read-only."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.ndim != 1:
            raise UsageError("control samples must be one-dimensional")
        if not np.all(np.isfinite(s)):
            raise NonFiniteError("control contains NaN or Inf")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @classmethod
    def checked(cls, samples, grid: Grid, params: ModelParams) -> "ControlProfile":
        """Build a profile and verify length n_t and membership in [0, m_tol]."""
        ctrl = samples if isinstance(samples, cls) else cls(samples)
        if ctrl.samples.size != grid.n_t:
            raise UsageError(f"control has {ctrl.samples.size} samples, grid has {grid.n_t} time levels")
        if ctrl.samples.min() < 0.0 or ctrl.samples.max() > params.m_tol:
            raise UsageError(f"control leaves the admissible box [0, {params.m_tol}]")
        return ctrl

    @classmethod
    def constant(cls, value: float, grid: Grid) -> "ControlProfile":
        return cls(np.full(grid.n_t, float(value)))


def coefficients(params: ModelParams) -> np.ndarray:
    return np.array(
        [params.kappa, params.r_growth, params.K_cap, params.delta, params.diff, params.gamma_ex, params.lambda_cl]
    )


def stored_levels(n_t: int, stride: int) -> np.ndarray:
    """Levels kept at a given stride; the final level is always kept."""
    if stride < 1:
        raise UsageError("stride must be >= 1")
    levels = np.arange(0, n_t, stride, dtype=np.int64)
    if levels[-1] != n_t - 1:
        levels = np.append(levels, n_t - 1)
    return levels


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States of one forward run.

    ``p_hist``/``d_hist`` hold the fields at ``levels`` (every ``stride``-th
    time level plus the last). ``mass``, ``drug_mass``, ``peak``, ``min_p``
    and ``min_d`` are recorded at every level regardless of stride; the
    minima are taken before the negativity clamp.
    """

    grid: Grid
    params: ModelParams
    kernel: Kernel
    control: ControlProfile
    stride: int
    levels: np.ndarray
    p_hist: np.ndarray
    d_hist: np.ndarray
    mass: np.ndarray
    drug_mass: np.ndarray
    peak: np.ndarray
    min_p: np.ndarray
    min_d: np.ndarray
    clamps: int

    @property
    def is_full(self) -> bool:
        return self.stride == 1

    @property
    def times(self) -> np.ndarray:
        """Times of the stored levels."""
        return self.grid.times[self.levels]

    def replay(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Recompute every level between stored levels k and k+1 (inclusive).

        Restarts the compiled loop from the stored fields at ``levels[k]``;
        the loop is deterministic so the result matches a stride-1 run bit
        for bit.
        """
        n0, n1 = int(self.levels[k]), int(self.levels[k + 1])
        seg_levels = np.arange(n0, n1 + 1, dtype=np.int64)
        p_seg = np.empty((seg_levels.size, self.grid.n_x))
        d_seg = np.empty_like(p_seg)
        scratch = [np.empty(self.grid.n_t) for _ in range(5)]
        status, level, _ = _loops.forward_segment(
            self.p_hist[k].copy(), self.d_hist[k].copy(), self.control.samples, n0, n1,
            self.grid.dt, self.grid.dx, self.grid.weights, self.kernel.taps,
            coefficients(self.params), self.grid.v_ref, seg_levels, p_seg, d_seg, *scratch,
        )
        _raise_status(status, level)
        return p_seg, d_seg


def _raise_status(status: int, level: int) -> None:
    if status == _loops.OK:
        return
    if status == _loops.NONFINITE:
        raise NonFiniteError("state became non-finite", level)
    if status == _loops.VELOCITY:
        raise StabilityError("velocity exceeded the CFL reference speed v_ref", level)
    if status == _loops.NEGATIVE:
        raise StabilityError(f"state fell below -{_loops.NEG_TOL:g}", level)
    raise RuntimeError(f"unknown solver status {status}")


def step(p, d, i_now: float, grid: Grid, params: ModelParams, kernel: Kernel):
    """One explicit-Euler step of the coupled system, FFT convolution included.

    Small negative values in (-1e-8, 0) are clamped to zero; anything lower
    raises :class:`StabilityError`.
    """
    w = convolve(p, kernel, grid)
    vel = velocity(w, params)
    if np.max(np.abs(vel)) > grid.v_ref:
        raise StabilityError("velocity exceeded the CFL reference speed v_ref")
    p_new = p + grid.dt * (advection_rhs(p, vel, grid) + eval_growth(p, params) - eval_kill(d, p, params))
    d_new = d + grid.dt * (diffusion_rhs(d, params.diff, grid) + eval_exchange(i_now, d, params))
    if not (np.all(np.isfinite(p_new)) and np.all(np.isfinite(d_new))):
        raise NonFiniteError("state became non-finite")
    if min(p_new.min(), d_new.min()) <= -_loops.NEG_TOL:
        raise StabilityError(f"state fell below -{_loops.NEG_TOL:g}")
    return np.maximum(p_new, 0.0), np.maximum(d_new, 0.0)


def solve_forward(
    control,
    p0,
    d0,
    grid: Grid,
    params: ModelParams,
    kernel: Kernel | None = None,
    stride: int = 1,
) -> Trajectory:
    """Integrate from (p0, d0) over all n_t - 1 steps under ``control``.

    Raises :class:`StabilityError` or :class:`NonFiniteError` carrying the
    failing time level.
    """
    control = ControlProfile.checked(control, grid, params)
    p = check_field(p0, grid, "p0").copy()
    d = check_field(d0, grid, "d0").copy()
    if kernel is None:
        kernel = build_kernel(grid, params.sigma)
    levels = stored_levels(grid.n_t, stride)
    p_hist = np.empty((levels.size, grid.n_x))
    d_hist = np.empty_like(p_hist)
    diag = [np.empty(grid.n_t) for _ in range(5)]
    status, level, clamps = _loops.forward_segment(
        p, d, control.samples, 0, grid.n_t - 1, grid.dt, grid.dx, grid.weights, kernel.taps,
        coefficients(params), grid.v_ref, levels, p_hist, d_hist, *diag,
    )
    _raise_status(status, level)
    for arr in (p_hist, d_hist, *diag):
        arr.setflags(write=False)
    mass, drug_mass, peak, min_p, min_d = diag
    return Trajectory(
        grid=grid, params=params, kernel=kernel, control=control, stride=stride, levels=levels,
        p_hist=p_hist, d_hist=d_hist, mass=mass, drug_mass=drug_mass, peak=peak,
        min_p=min_p, min_d=min_d, clamps=int(clamps),
    )


def cost(control, traj: Trajectory, params: ModelParams) -> float:
    """J = int_0^T (alpha M(t) + beta I(t)^2) dt + gamma M(T), trapezoid in time.

    Uses the tumor mass recorded at every level, so any stride is valid.
    """
    samples = control.samples if isinstance(control, ControlProfile) else np.asarray(control, dtype=float)
    wt = traj.grid.time_weights()
    running = params.alpha_w * traj.mass + params.beta_w * samples**2
    return float(wt @ running + params.gamma_w * traj.mass[-1])


def tumor_mass(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """(t_n, M(t_n)) at every time level."""
    return traj.grid.times, np.array(traj.mass)
