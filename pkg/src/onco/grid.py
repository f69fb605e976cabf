"""Uniform 1D discretization and the spatial operators used by the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from . import _loops
from .errors import ValidationError
from .model import ModelParams

# relative mass of the kernel tail dropped from the banded tap vector
TAP_TAIL_TOL = 1e-17

# v_ref = VREF_SAFETY * kappa * max(w_p0)
VREF_SAFETY = 4.0


@dataclass(frozen=True, eq=False)
class Grid:
    """Spatial nodes x_0..x_{n_x-1} on [x_min, x_max] and n_t time levels on [0, T]."""

    n_x: int
    dx: float
    nodes: np.ndarray
    n_t: int
    dt: float
    cfl: float
    v_ref: float
    t_final: float

    @property
    def steps(self) -> int:
        return self.n_t - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.n_t)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights (1/2 at the ends, 1 inside), without dx."""
        return trapezoid_weights(self.n_x)

    def time_weights(self) -> np.ndarray:
        """Trapezoid weights in time, including dt."""
        return trapezoid_weights(self.n_t) * self.dt


def trapezoid_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def gaussian(h, sigma):
    """Mass-normalized Gaussian density with standard deviation ``sigma``."""
    return np.exp(-0.5 * (np.asarray(h, dtype=float) / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True, eq=False)
class Kernel:
    """Gaussian interaction kernel sampled at every node offset of a grid.

    ``profile[k]`` is K((k - (n_x - 1)) * dx) for k = 0..2 n_x - 2, so the
    centre entry is the zero offset. ``spectrum`` is the real FFT of the
    circularly laid-out profile on the zero-padded length ``pad_len``.
    ``taps`` holds dx * K(m dx) for |m| <= band, the truncation used by the
    compiled time loops.
    """

    sigma: float
    profile: np.ndarray
    spectrum: np.ndarray
    pad_len: int
    taps: np.ndarray

    @property
    def band(self) -> int:
        return (self.taps.size - 1) // 2

    def at(self, offset: int) -> float:
        n = (self.profile.size + 1) // 2
        return float(self.profile[n - 1 + offset])


def build_kernel(grid: Grid, sigma: float) -> Kernel:
    n = grid.n_x
    half = gaussian(np.arange(n) * grid.dx, sigma)
    profile = np.concatenate([half[:0:-1], half])

    pad_len = sfft.next_fast_len(2 * n - 1, real=True)
    circ = np.zeros(pad_len)
    circ[:n] = half
    circ[pad_len - n + 1 :] = half[:0:-1]
    spectrum = sfft.rfft(circ)

    pos = half * grid.dx
    total = pos[0] + 2.0 * pos[1:].sum()
    # tail[m] = mass of all offsets with |k| > m
    tail = 2.0 * (np.cumsum(pos[::-1])[::-1] - pos)
    small = tail <= TAP_TAIL_TOL * total
    band = int(np.argmax(small)) if small.any() else n - 1
    taps = np.concatenate([pos[band:0:-1], pos[: band + 1]])
    return Kernel(sigma=float(sigma), profile=profile, spectrum=spectrum, pad_len=pad_len, taps=taps)


def build_grid(
    params: ModelParams,
    n_x: int = 200,
    cfl: float = 0.025,
    *,
    p0=None,
    v_ref: float | None = None,
) -> Grid:
    """Build the space-time grid with a CFL-limited explicit time step.

    The step is ``cfl * min(dx / v_ref, dx**2 / (2 D))``, shrunk so that T
    is an integer number of steps. Unless given, ``v_ref`` is four times
    the largest initial velocity ``kappa * max(w_p0)``; ``p0`` is either an
    array on the nodes, a callable of the nodes, or None for the default
    initial tumor.
    """
    if isinstance(n_x, bool) or not isinstance(n_x, (int, np.integer)):
        raise ValidationError("n_x", f"expected an integer, got {n_x!r}")
    if n_x < 3:
        raise ValidationError("n_x", "need at least 3 nodes")
    if not (math.isfinite(cfl) and cfl > 0):
        raise ValidationError("cfl", "must be finite and > 0")
    n_x = int(n_x)
    nodes = np.linspace(params.x_min, params.x_max, n_x)
    dx = params.length / (n_x - 1)

    if v_ref is None:
        if p0 is None:
            from .forward import initial_tumor_values

            p0_vals = initial_tumor_values(nodes)
        elif callable(p0):
            p0_vals = np.asarray(p0(nodes), dtype=float)
        else:
            p0_vals = np.asarray(p0, dtype=float)
        provisional = Grid(n_x, dx, nodes, 2, params.t_final, cfl, 0.0, params.t_final)
        w0 = convolve(p0_vals, build_kernel(provisional, params.sigma), provisional)
        v_ref = VREF_SAFETY * params.kappa * float(np.max(np.abs(w0)))
    if not (math.isfinite(v_ref) and v_ref >= 0):
        raise ValidationError("v_ref", "must be finite and >= 0")

    limit = dx * dx / (2.0 * params.diff)
    if v_ref > 0:
        limit = min(limit, dx / v_ref)
    dt_max = cfl * limit
    steps = max(1, math.ceil(params.t_final / dt_max))
    dt = params.t_final / steps
    return Grid(
        n_x=n_x, dx=dx, nodes=nodes, n_t=steps + 1, dt=dt, cfl=float(cfl),
        v_ref=float(v_ref), t_final=params.t_final,
    )


def quadrature(f, grid: Grid) -> float:
    """Trapezoid rule on the grid nodes."""
    f = np.asarray(f, dtype=float)
    return float(grid.dx * (f.sum() - 0.5 * (f[0] + f[-1])))


def convolve(p, kernel: Kernel, grid: Grid) -> np.ndarray:
    """w_i = sum_j dx c_j K(x_i - x_j) p_j with trapezoid end weights c_j.

    Evaluated by zero-padded FFT so there is no periodic wrap-around.
    """
    p = np.asarray(p, dtype=float)
    a = p * grid.weights * grid.dx
    w = sfft.irfft(sfft.rfft(a, kernel.pad_len) * kernel.spectrum, kernel.pad_len)
    return w[: grid.n_x]


def convolve_direct(p, kernel: Kernel, grid: Grid) -> np.ndarray:
    """O(n_x^2) evaluation of :func:`convolve` from the node coordinates."""
    p = np.asarray(p, dtype=float)
    x = grid.nodes
    mat = gaussian(x[:, None] - x[None, :], kernel.sigma)
    return mat @ (p * grid.weights * grid.dx)


def convolve_banded(p, kernel: Kernel, grid: Grid) -> np.ndarray:
    """The truncated-band convolution used inside the compiled loops."""
    p = np.ascontiguousarray(p, dtype=float)
    out = np.empty_like(p)
    return _loops.banded_convolve(p, grid.weights, kernel.taps, out, np.empty_like(p))


def advection_rhs(p, vel, grid: Grid) -> np.ndarray:
    """-(vel p)_x by local Lax-Friedrichs fluxes.

    Boundary faces use a ghost value equal to the boundary node and admit
    only outflow, so nothing enters the domain.
    """
    p = np.ascontiguousarray(p, dtype=float)
    vel = np.ascontiguousarray(np.broadcast_to(vel, p.shape), dtype=float)
    return _loops.lf_advection(p, vel, grid.dx, np.empty_like(p))


def boundary_flux(p, vel) -> tuple[float, float]:
    """(left, right) face fluxes used by :func:`advection_rhs`."""
    return min(vel[0], 0.0) * p[0], max(vel[-1], 0.0) * p[-1]


def diffusion_rhs(d, diff: float, grid: Grid) -> np.ndarray:
    """diff * d_xx with homogeneous Neumann ends (mirrored ghosts)."""
    d = np.ascontiguousarray(d, dtype=float)
    return diff * _loops.neumann_laplacian(d, grid.dx, np.empty_like(d))


def gradient(u, grid: Grid) -> np.ndarray:
    """Centered first derivative, one-sided at the ends."""
    u = np.ascontiguousarray(u, dtype=float)
    return _loops.centered_gradient(u, grid.dx, np.empty_like(u))
