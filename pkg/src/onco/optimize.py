"""Adjoint solve, reduced gradient and projected gradient descent on I(t).

The backward system integrated here is

    -q_t - V[w_p] q_x - kappa * int K(y, x) p(y) q_x(y) dy - (F'(p) - dC/dp) q = alpha,   q(T) = gamma
    -r_t - D r_xx - dG/dd r = -dC/dd q,                                                  r(T) = 0

and the gradient of J with respect to the control is
``2 beta I(t) + dG/dI * int r(t, x) dx``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _loops
from .errors import LineSearchFailure, NonFiniteError, UsageError
from .forward import (
    ControlProfile,
    Trajectory,
    coefficients,
    cost,
    solve_forward,
    stored_levels,
)
from .grid import Grid, Kernel, build_kernel
from .model import ModelParams, partials

log = logging.getLogger(__name__)

# above this many bytes of (p, d) history the optimizer switches to checkpoints
FULL_STORAGE_BYTES = 600 * 2**20


@dataclass(frozen=True, eq=False)
class AdjointPair:
    """Adjoint fields at ``levels`` and the spatial integral of r at every level."""

    levels: np.ndarray
    q_hist: np.ndarray
    r_hist: np.ndarray
    r_int: np.ndarray


def solve_adjoint(
    traj: Trajectory,
    control,
    grid: Grid,
    params: ModelParams,
    kernel: Kernel | None = None,
    *,
    replay: bool = False,
    store_stride: int | None = None,
) -> AdjointPair:
    """Integrate the adjoint pair backward from t = T by explicit Euler.

    Needs the state at every level. A stride-1 trajectory supplies it
    directly; a decimated one is only accepted with ``replay=True``, in
    which case each interval between stored levels is recomputed from its
    left end. ``store_stride`` decimates the returned q/r fields (default:
    the trajectory's stride).
    """
    if not traj.is_full and not replay:
        raise UsageError("adjoint needs a stride-1 trajectory (or replay=True)")
    control = ControlProfile.checked(control, grid, params)
    if not np.array_equal(control.samples, traj.control.samples):
        raise UsageError("control does not match the one that produced the trajectory")
    if kernel is None:
        kernel = traj.kernel
    levels = stored_levels(grid.n_t, store_stride or traj.stride)
    q_hist = np.empty((levels.size, grid.n_x))
    r_hist = np.empty_like(q_hist)
    r_int = np.empty(grid.n_t)
    q = np.full(grid.n_x, params.gamma_w)
    r = np.zeros(grid.n_x)
    args = (grid.dt, grid.dx, grid.weights, kernel.taps, coefficients(params), params.alpha_w, levels, q_hist, r_hist, r_int)

    if traj.is_full:
        status, level = _loops.adjoint_segment(traj.p_hist, traj.d_hist, 0, grid.n_t - 1, q, r, *args)
        _check(status, level)
    else:
        for k in range(traj.levels.size - 2, -1, -1):
            p_seg, d_seg = traj.replay(k)
            n0, n1 = int(traj.levels[k]), int(traj.levels[k + 1])
            status, level = _loops.adjoint_segment(p_seg, d_seg, n0, n1, q, r, *args)
            _check(status, level)
    for arr in (q_hist, r_hist, r_int):
        arr.setflags(write=False)
    return AdjointPair(levels=levels, q_hist=q_hist, r_hist=r_hist, r_int=r_int)


def _check(status, level):
    if status != _loops.OK:
        raise NonFiniteError("adjoint became non-finite", level)


def reduced_gradient(control, adj: AdjointPair, traj: Trajectory, grid: Grid, params: ModelParams) -> np.ndarray:
    """g(t_n) = 2 beta I(t_n) + dG/dI * quadrature(r(t_n, .))."""
    samples = ControlProfile.checked(control, grid, params).samples
    dg_di = partials(0.0, 0.0, samples, params).dG_di
    return 2.0 * params.beta_w * samples + dg_di * adj.r_int


def l2_norm(g, grid: Grid) -> float:
    """L2(0, T) norm by the time trapezoid."""
    return math.sqrt(float(grid.time_weights() @ (np.asarray(g) ** 2)))


def inner(a, b, grid: Grid) -> float:
    return float(grid.time_weights() @ (np.asarray(a) * np.asarray(b)))


def project(raw, m_tol: float) -> np.ndarray:
    """Pointwise projection onto [0, m_tol]."""
    return np.clip(np.asarray(raw, dtype=float), 0.0, m_tol)


def initial_guess(grid: Grid, params: ModelParams) -> ControlProfile:
    """I0(t) = m_tol * exp(-4 t)."""
    return ControlProfile(params.m_tol * np.exp(-4.0 * grid.times))


def auto_stride(grid: Grid) -> int:
    """1 when the full history fits the memory budget, else ~sqrt(n_t) checkpoints."""
    if grid.n_t * grid.n_x * 16 <= FULL_STORAGE_BYTES:
        return 1
    return max(2, math.isqrt(grid.n_t))


class Evaluator:
    """Forward, cost and gradient for one problem setup, with a fixed storage policy."""

    def __init__(self, params: ModelParams, grid: Grid, p0, d0, kernel: Kernel | None = None, stride: int | None = None):
        self.params = params
        self.grid = grid
        self.p0 = np.asarray(p0, dtype=float)
        self.d0 = np.asarray(d0, dtype=float)
        self.kernel = kernel if kernel is not None else build_kernel(grid, params.sigma)
        self.stride = stride if stride is not None else auto_stride(grid)

    def forward(self, control, stride: int | None = None) -> Trajectory:
        return solve_forward(control, self.p0, self.d0, self.grid, self.params, self.kernel, stride or self.stride)

    def cost(self, control) -> float:
        # endpoints only; the cost uses the per-level mass record
        return cost(control, self.forward(control, stride=self.grid.n_t), self.params)

    def gradient(self, traj: Trajectory) -> np.ndarray:
        adj = solve_adjoint(
            traj, traj.control, self.grid, self.params, self.kernel, replay=not traj.is_full, store_stride=self.grid.n_t
        )
        return reduced_gradient(traj.control, adj, traj, self.grid, self.params)


@dataclass
class IterRecord:
    iteration: int
    J: float
    grad_norm: float
    step: float  # step that produced this iterate; 0 for the initial guess
    clamp_fraction: float  # share of samples sitting on a bound


@dataclass
class OptimizeReport:
    iterates: list[IterRecord]
    final_control: ControlProfile
    converged: bool
    iterations_used: int
    final_gradient: np.ndarray
    final_trajectory: Trajectory
    controls: list[np.ndarray] = field(default_factory=list)
    message: str = ""
    optimality_residual: float = float("nan")
    switching_max: float = float("nan")
    failure: LineSearchFailure | None = None

    @property
    def costs(self) -> np.ndarray:
        return np.array([it.J for it in self.iterates])

    @property
    def grad_norms(self) -> np.ndarray:
        return np.array([it.grad_norm for it in self.iterates])


def _clamp_fraction(samples, m_tol) -> float:
    return float(np.mean((samples <= 0.0) | (samples >= m_tol)))


def optimize(
    params: ModelParams,
    grid: Grid,
    p0,
    d0,
    *,
    kernel: Kernel | None = None,
    initial=None,
    max_iter: int = 50,
    rel_tol: float = 5e-5,
    step0: float = 1.0,
    armijo: float = 1e-4,
    max_halvings: int = 30,
    stride: int | None = None,
    keep_controls: bool = True,
    callback=None,
) -> OptimizeReport:
    """Projected gradient descent I <- P(I - s g) with Armijo backtracking.

    The trial step starts at ``step0``, is halved up to ``max_halvings``
    times, and the accepted step doubled seeds the next iteration. Stops
    when |J_{k+1} - J_k| / |J_k| < ``rel_tol`` or after ``max_iter``
    updates. A failed line search ends the run with ``converged=False``.
    ``callback(record)`` is called with each :class:`IterRecord` as it is made.
    """
    ev = Evaluator(params, grid, p0, d0, kernel, stride)
    m_tol = params.m_tol
    control = ControlProfile.checked(
        project(initial.samples if isinstance(initial, ControlProfile) else initial, m_tol)
        if initial is not None
        else initial_guess(grid, params).samples,
        grid,
        params,
    )
    traj = ev.forward(control)
    J = cost(control, traj, params)
    g = ev.gradient(traj)
    records = [IterRecord(0, J, l2_norm(g, grid), 0.0, _clamp_fraction(control.samples, m_tol))]
    controls = [control.samples] if keep_controls else []
    if callback is not None:
        callback(records[0])
    converged = False
    message = f"reached max_iter={max_iter}"
    failure = None
    seed = step0
    used = 0
    step = 0.0

    for k in range(1, max_iter + 1):
        step = seed
        for _ in range(max_halvings + 1):
            trial = ControlProfile(project(control.samples - step * g, m_tol))
            trial_traj = ev.forward(trial)
            J_trial = cost(trial, trial_traj, params)
            if J_trial <= J + armijo * inner(g, trial.samples - control.samples, grid):
                break
            trial_traj = None  # free before the next trial allocates
            step *= 0.5
        else:
            message = f"line search failed at iteration {k} after {max_halvings} halvings"
            failure = LineSearchFailure(message)
            log.warning(message)
            break

        rel = abs(J_trial - J) / abs(J) if J != 0 else abs(J_trial - J)
        control, traj, J = trial, trial_traj, J_trial
        g = ev.gradient(traj)
        used = k
        records.append(IterRecord(k, J, l2_norm(g, grid), step, _clamp_fraction(control.samples, m_tol)))
        if keep_controls:
            controls.append(control.samples)
        if callback is not None:
            callback(records[-1])
        log.info("iter %d  J=%.10g  |g|=%.4g  step=%.4g  rel=%.3g", k, J, records[-1].grad_norm, step, rel)
        if rel < rel_tol:
            converged = True
            message = f"relative cost change {rel:.3g} < {rel_tol:g}"
            break
        seed = 2.0 * step

    report = OptimizeReport(
        iterates=records,
        final_control=control,
        converged=converged,
        iterations_used=used,
        final_gradient=g,
        final_trajectory=traj,
        controls=controls,
        message=message,
        failure=failure,
    )
    s = step if step > 0 else step0
    residual = control.samples - project(control.samples - s * g, m_tol)
    report.optimality_residual = l2_norm(residual, grid) / (s * records[0].grad_norm + 1e-300)
    interior = (control.samples > 0.0) & (control.samples < m_tol)
    report.switching_max = float(np.max(np.abs(g[interior]))) if interior.any() else 0.0
    return report


# -- gradient verification ---------------------------------------------------


def probe_directions(control, params: ModelParams, n_probes: int, seed: int, eps: float, pieces: int = 8) -> list[np.ndarray]:
    """Seeded piecewise-constant +-1 directions, zeroed where I +- eps*h leaves the box."""
    samples = control.samples if isinstance(control, ControlProfile) else np.asarray(control, dtype=float)
    rng = np.random.default_rng(seed)
    n_t = samples.size
    piece = np.minimum((np.arange(n_t) * pieces) // n_t, pieces - 1)
    out = []
    for _ in range(n_probes):
        h = rng.choice([-1.0, 1.0], size=pieces)[piece]
        blocked = (samples + eps > params.m_tol) | (samples - eps < 0.0)
        h[blocked] = 0.0
        out.append(h)
    return out


@dataclass
class ProbeResult:
    adjoint: float
    finite_difference: float

    @property
    def rel_error(self) -> float:
        return abs(self.adjoint - self.finite_difference) / max(abs(self.finite_difference), 1e-300)


def gradient_check(
    params: ModelParams,
    grid: Grid,
    p0,
    d0,
    control,
    *,
    n_probes: int = 5,
    seed: int = 0,
    eps: float = 1e-4,
    kernel: Kernel | None = None,
) -> list[ProbeResult]:
    """Compare <g, h> from the adjoint with (J(I + eps h) - J(I - eps h)) / (2 eps)."""
    ev = Evaluator(params, grid, p0, d0, kernel)
    control = ControlProfile.checked(control, grid, params)
    g = ev.gradient(ev.forward(control))
    results = []
    for h in probe_directions(control, params, n_probes, seed, eps):
        j_plus = ev.cost(ControlProfile(control.samples + eps * h))
        j_minus = ev.cost(ControlProfile(control.samples - eps * h))
        results.append(ProbeResult(adjoint=inner(g, h, grid), finite_difference=(j_plus - j_minus) / (2.0 * eps)))
    return results
