"""Discretizations of the fractional Laplacian, the drift, and the full generator.

Two routes to the jump operator I = Lap^(alpha/2):

* spectral: Fourier multiplier -(2 pi |xi|)^alpha on the periodized box;
* quadrature: singular-integral form.  Pairing z with -z turns the principal
  value into S(z) = u(x+z) + u(x-z) - 2u(x), and writing the integrand as
  (S(z)/|z|^2) * kappa(z)|z|^2 regularizes the singularity: in 1d the smooth
  factor S/|z|^2 is interpolated piecewise-linearly on the offset nodes and
  the kernel moment integrated exactly against the hats (product
  integration: no first-moment sampling error, second order uniformly in
  alpha); in 2d the factor is sampled at cell centers against Gauss-Legendre
  cell integrals.  The z = 0 node carries the discrete second derivative.
  All pair weights are nonnegative, so every jump matrix is Metzler.

Exterior treatment of the standalone quadrature operator is a choice,
exposed as ``exterior`` on OperatorConfig:

* "tail": fields are extended by zero outside the box and the analytic
  exterior kernel mass is charged to -u(x).  Faithful to the whole-space
  operator for decaying fields, but the box loses mass through outward jumps.
* "conservative": jumps leaving the box are dropped (the box Markov process:
  exactly zero column sums, constants map to zero).

The GENERATOR instead wraps jumps around the box: the periodized process has
the whole-space symbol exactly, so the wrapped quadrature stencil (circulant
fold plus the kernel mass of all periodic images) is the real-space twin of
the spectral route, with exact mass conservation.  Generator matrices, time
integration and the semigroup machinery all live on this periodized box.

The kernel is kappa_alpha(z) = c_{alpha,d} |z|^(-d-alpha) with the unique
normalization matching the Fourier multiplier; both routes cross-validate it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate as _sciint
from scipy import signal as _signal
from scipy.special import gamma as _gamma

from fracfp.grid import Field, Grid

__all__ = [
    "OperatorConfig",
    "ForceField",
    "GeneratorMatrix",
    "norm_constant",
    "make_force",
    "verify_force_hypotheses",
    "spectral_fraclap",
    "quadrature_fraclap",
    "split_fraclap",
    "capped_convolution",
    "drift_divergence",
    "drift_gradient_adjoint",
    "generator_apply",
    "adjoint_apply",
    "assemble_generator_matrix",
    "fraclap_of_weight",
    "fraclap_reference",
]

MAX_DENSE = 4096  # dense-assembly guard on n^d


def norm_constant(alpha: float, d: int) -> float:
    """Kernel normalization c_{alpha,d} = 2^a Gamma((d+a)/2) / (pi^(d/2) |Gamma(-a/2)|).

    The unique constant for which the integral operator with kernel
    c |z|^(-d-alpha) has Fourier symbol -(2 pi |xi|)^alpha.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    num = 2.0**alpha * _gamma((d + alpha) / 2.0)
    den = math.pi ** (d / 2.0) * abs(_gamma(-alpha / 2.0))
    return num / den


# ---------------------------------------------------------------------------
# configuration and force fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForceField:
    """Drift field E(x); canonical family E = <x>^(gamma-2) x when func is None.

    Custom fields supply ``func`` taking 1d coordinates (d = 1) or an
    (..., 2) point array (d = 2), matching whichever dimension they run in.
    """

    gamma: float
    func: Callable[[np.ndarray], np.ndarray] | None = None

    def at(self, x: np.ndarray, d: int) -> np.ndarray:
        if self.func is not None:
            return np.asarray(self.func(x), dtype=float)
        x = np.asarray(x, dtype=float)
        if d == 1:
            r2 = x**2
        else:
            r2 = np.sum(x**2, axis=-1, keepdims=True)
        return x * (1.0 + r2) ** ((self.gamma - 2.0) / 2.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """1d evaluation shorthand."""
        return self.at(x, 1)

    @property
    def is_canonical(self) -> bool:
        return self.func is None


def make_force(gamma: float) -> ForceField:
    """Canonical confining force E(x) = <x>^(gamma-2) x."""
    return ForceField(gamma=float(gamma))


@dataclass(frozen=True)
class OperatorConfig:
    """Parameters fully determining the generator Lambda f = I(f) + div(E f)."""

    alpha: float
    gamma: float = 2.0
    method: str = "spectral"  # {"spectral", "quadrature"}
    split_radius: float | None = None  # near/far kernel cut; defaults to h
    exterior: str = "tail"  # {"tail", "conservative"} for the quadrature route
    drift: str = "upwind"  # {"upwind", "centered"}: centered trades the
    # discrete maximum principle for second-order steady-state accuracy
    force: ForceField | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        if self.method not in ("spectral", "quadrature"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.exterior not in ("tail", "conservative"):
            raise ValueError(f"unknown exterior mode {self.exterior!r}")
        if self.drift not in ("upwind", "centered"):
            raise ValueError(f"unknown drift scheme {self.drift!r}")

    def force_field(self) -> ForceField:
        return self.force if self.force is not None else make_force(self.gamma)

    def norm_constant(self, d: int) -> float:
        return norm_constant(self.alpha, d)


# ---------------------------------------------------------------------------
# radial kernels and their exact moment integrals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpKernel:
    """Radial jump kernel c |z|^(-d-alpha), optionally capped, compensated or windowed.

    cap_r:   kappa -> min(kappa, kappa(cap_r))            (bounded far kernel)
    near_of: kappa -> (kappa - kappa(near_of))_+           (compensated near kernel)
    lo, hi:  radial window; kernel vanishes outside [lo, hi].
    """

    c: float
    alpha: float
    d: int
    cap_r: float | None = None
    near_of: float | None = None
    lo: float = 0.0
    hi: float = math.inf

    def value(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            v = self.c * r ** (-self.d - self.alpha)
        if self.cap_r is not None:
            v = np.minimum(v, self.c * self.cap_r ** (-self.d - self.alpha))
        if self.near_of is not None:
            v = np.maximum(v - self.c * self.near_of ** (-self.d - self.alpha), 0.0)
        v = np.where((r >= self.lo) & (r <= self.hi), v, 0.0)
        return v

    def _segments(self):
        """(a, b, power_coeff, const_value) pieces with kernel = power + const."""
        cap = self.c * self.cap_r ** (-self.d - self.alpha) if self.cap_r else None
        sub = self.c * self.near_of ** (-self.d - self.alpha) if self.near_of else None
        if self.near_of is not None:
            segs = [(0.0, self.near_of, self.c, -sub)]
        elif self.cap_r is not None:
            segs = [(0.0, self.cap_r, 0.0, cap), (self.cap_r, math.inf, self.c, 0.0)]
        else:
            segs = [(0.0, math.inf, self.c, 0.0)]
        out = []
        for a, b, cp, cv in segs:
            a2, b2 = max(a, self.lo), min(b, self.hi)
            if b2 > a2:
                out.append((a2, b2, cp, cv))
        return out

    def moment(self, a, b, m: float):
        """Radial moment integral of kappa(r) r^m over [a, b], vectorized in a, b.

        m = 0 and 2 feed the 1d cell weights; m = 1 and 3 feed the polar
        integrals used in 2d; fractional m serves the W^{s,p} seminorms.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        total = np.zeros(np.broadcast(a, b).shape)
        for sa, sb, cp, cv in self._segments():
            lo = np.maximum(a, sa)
            hi = np.minimum(b, sb)
            w = hi > lo
            lo = np.where(w, lo, 1.0)
            hi = np.where(w, hi, 1.0)
            piece = np.zeros_like(total)
            if cp != 0.0:
                q = m - self.d - self.alpha  # never -1 for alpha in (0,2), m in {0..3}
                piece += cp * (hi ** (q + 1) - lo ** (q + 1)) / (q + 1)
            if cv != 0.0:
                piece += cv * (hi ** (m + 1) - lo ** (m + 1)) / (m + 1)
            total += np.where(w, piece, 0.0)
        return total

    def l1_mass(self) -> float:
        """Analytic ||kappa||_L1 over R^d (infinite for the uncapped kernel)."""
        surf = 2.0 if self.d == 1 else 2.0 * math.pi
        return float(surf * self.moment(0.0, math.inf, self.d - 1))


def full_kernel(alpha: float, d: int) -> JumpKernel:
    return JumpKernel(c=norm_constant(alpha, d), alpha=alpha, d=d)


def far_kernel(alpha: float, d: int, r: float) -> JumpKernel:
    return JumpKernel(c=norm_constant(alpha, d), alpha=alpha, d=d, cap_r=r)


def near_kernel(alpha: float, d: int, r: float) -> JumpKernel:
    return JumpKernel(c=norm_constant(alpha, d), alpha=alpha, d=d, near_of=r)


def windowed_kernel(alpha: float, d: int, eps: float) -> JumpKernel:
    return JumpKernel(
        c=norm_constant(alpha, d), alpha=alpha, d=d, lo=eps, hi=1.0 / eps
    )


# ---------------------------------------------------------------------------
# stencils: pair weights + degree fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpStencil:
    """Discrete realization of a jump kernel on a grid.

    ker      convolution kernel over offsets, shape (2n+1,)*d, zero center;
    deg_in   per-node total pair weight toward in-box targets;
    ext_mass per-node exterior kernel mass (plain cell masses + analytic
             beyond-range tail), charged to -u(x) in "tail" mode;
    folded   the kernel folded modulo n per axis: the circulant of the
             periodic-wrap variant used by the generator.
    """

    grid: Grid
    ker: np.ndarray
    deg_in: np.ndarray
    ext_mass: np.ndarray
    folded: np.ndarray

    def pair_sum(self, values: np.ndarray) -> np.ndarray:
        return _signal.fftconvolve(values, self.ker, mode="same")

    def apply(self, values: np.ndarray, exterior: str) -> np.ndarray:
        out = self.pair_sum(values) - self.deg_in * values
        if exterior == "tail":
            out = out - self.ext_mass * values
        return out

    def apply_periodic(self, values: np.ndarray) -> np.ndarray:
        """Periodic-wrap jump operator: the real-space twin of the spectral
        route, with exactly zero column sums at every node."""
        g = self.grid
        deg = float(self.folded.sum())
        if g.d == 1:
            conv = np.fft.irfft(np.fft.rfft(values) * np.fft.rfft(self.folded), n=g.n)
        else:
            conv = np.fft.irfft2(
                np.fft.rfft2(values) * np.fft.rfft2(self.folded), s=g.shape
            )
        return conv - deg * values


def _fold_kernel(ker: np.ndarray, grid: Grid, kernel: JumpKernel) -> np.ndarray:
    """Exact-periodization circulant row: fold the offset kernel modulo n and
    add the kernel mass of all periodic images beyond the covered band.

    The image masses make the circulant the discrete kernel of the periodized
    jump process, whose symbol is the whole-space symbol sampled at the box
    frequencies; without them the lowest modes lose the kernel tail beyond
    one period (a ~kappa-tail relative error, fatal for equilibrium shapes).
    All additions are nonnegative, so the Metzler structure is preserved.
    """
    n, d, h, period = grid.n, grid.d, grid.h, 2.0 * grid.L
    if d == 1:
        out = np.zeros(n)
        idx = np.arange(-n, n + 1) % n
        np.add.at(out, idx, ker)
        # images: distances r h + m * period and (period - r h) + m * period
        r = np.arange(n) * h
        m_max = 500
        for m in range(1, m_max + 1):
            for dist in (r + period * m, (period - r) + period * m):
                out += kernel.moment(dist - h / 2, dist + h / 2, 0)
        return out
    out = np.zeros((n, n))
    i = np.arange(-n, n + 1) % n
    i1 = np.broadcast_to(i[:, None], ker.shape)
    i2 = np.broadcast_to(i[None, :], ker.shape)
    np.add.at(out, (i1, i2), ker)
    # 2d images over the period lattice: the covered offset band already
    # holds the displacements with m in {0,-1} per axis; add the rest up to
    # |m| <= 6 (the remainder is negligible at 2d tolerances)
    off = np.arange(n) * h
    c1, c2 = np.meshgrid(off, off, indexing="ij")
    for m1 in range(-6, 6):
        for m2 in range(-6, 6):
            if m1 in (0, -1) and m2 in (0, -1):
                continue
            m0, _ = _gl_cell_integrals_2d(
                kernel, c1 + period * m1, c2 + period * m2, h, npts=4
            )
            out += m0
    return out


@lru_cache(maxsize=64)
def get_stencil(grid: Grid, kernel: JumpKernel) -> JumpStencil:
    if grid.d == 1:
        return _build_stencil_1d(grid, kernel)
    return _build_stencil_2d(grid, kernel)


def _build_stencil_1d(grid: Grid, kernel: JumpKernel) -> JumpStencil:
    n, h = grid.n, grid.h
    j = np.arange(1, n + 1)
    zc = j * h
    # product integration of g(z) = S(z)/z^2 against kappa z^2: integrate the
    # kernel moment exactly against the piecewise-linear interpolant of g on
    # the offset nodes 0, h, ..., nh (hat weights; exact for linear g, so no
    # first-moment sampling error and clean second order uniformly in alpha)
    zn = np.arange(0, n + 1) * h
    m2 = kernel.moment(zn[:-1], zn[1:], 2)
    m3 = kernel.moment(zn[:-1], zn[1:], 3)
    gw = np.zeros(n + 1)
    gw[1:] += (m3 - zn[:-1] * m2) / h  # rising side of the hat at z_j
    gw[:-1] += (zn[1:] * m2 - m3) / h  # falling side of the hat at z_{j-1}
    nu = gw[1:] / zc**2
    # the z = 0 node value is the discrete second derivative S_1/h^2
    nu[0] += gw[0] / h**2
    ker = np.zeros(2 * n + 1)
    ker[n + 1 :] = nu
    ker[:n] = nu[::-1]

    cnu = np.concatenate([[0.0], np.cumsum(nu)])
    idx = np.arange(n)
    deg_in = cnu[n - 1 - idx] + cnu[idx]

    wbar = kernel.moment(zc - h / 2, zc + h / 2, 0)  # plain cell masses
    cw = np.concatenate([[0.0], np.cumsum(wbar)])
    beyond = float(kernel.moment((n + 0.5) * h, math.inf, 0))
    ext = (cw[n] - cw[n - 1 - idx]) + (cw[n] - cw[idx]) + 2.0 * beyond
    return JumpStencil(
        grid=grid, ker=ker, deg_in=deg_in, ext_mass=ext, folded=_fold_kernel(ker, grid, kernel)
    )


def _gl_cell_integrals_2d(kernel: JumpKernel, centers1, centers2, h, npts=10, moment=2.0):
    """Gauss-Legendre integrals of kappa and kappa*|z|^moment over square cells."""
    gx, gw = np.polynomial.legendre.leggauss(npts)
    gx = 0.5 * h * gx  # nodes relative to cell center
    gw = 0.5 * h * gw
    z1 = centers1[..., None, None] + gx[None, :, None]
    z2 = centers2[..., None, None] + gx[None, None, :]
    w2d = gw[:, None] * gw[None, :]
    r = np.hypot(z1, z2)
    kv = kernel.value(r)
    m0 = np.sum(kv * w2d, axis=(-2, -1))
    mm = np.sum(kv * r**moment * w2d, axis=(-2, -1))
    return m0, mm


def _theta_quad(f, a, b, npts=2048):
    t = np.linspace(a, b, npts + 1)
    return float(np.trapezoid(f(t), t))


def _build_stencil_2d(grid: Grid, kernel: JumpKernel) -> JumpStencil:
    n, h = grid.n, grid.h
    off = np.arange(-n, n + 1) * h
    c1, c2 = np.meshgrid(off, off, indexing="ij")
    m0, m2 = _gl_cell_integrals_2d(kernel, c1, c2, h)
    mid = n
    rr2 = c1**2 + c2**2
    rr2[mid, mid] = 1.0
    ker = m2 / rr2
    ker[mid, mid] = 0.0
    m0[mid, mid] = 0.0

    # self cell: (1/2) Lap u * int_cell kappa z1^2, via the polar moment integral
    def z1sq(t):
        rmax = (h / 2) / np.maximum(np.abs(np.cos(t)), np.abs(np.sin(t)))
        return np.cos(t) ** 2 * kernel.moment(0.0, rmax, 3)

    mc = _theta_quad(z1sq, 0.0, 2.0 * math.pi)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ker[mid + di, mid + dj] += mc / (2.0 * h**2)

    ones = np.ones(grid.shape)
    deg_in = _signal.fftconvolve(ones, ker, mode="same")

    # exterior: plain masses of not-covered cells + analytic beyond-square tail
    cov0 = _signal.fftconvolve(ones, m0, mode="same")
    zmax = (n + 0.5) * h

    def beyond_integrand(t):
        return kernel.moment(zmax / np.cos(t), math.inf, 1)

    beyond = 8.0 * _theta_quad(beyond_integrand, 0.0, math.pi / 4)
    ext = (float(m0.sum()) - cov0) + beyond
    return JumpStencil(
        grid=grid, ker=ker, deg_in=deg_in, ext_mass=ext, folded=_fold_kernel(ker, grid, kernel)
    )


# ---------------------------------------------------------------------------
# fractional Laplacian: spectral and quadrature routes
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def spectral_symbol(grid: Grid, alpha: float) -> np.ndarray:
    """Multiplier -(2 pi |xi|)^alpha on the discrete frequencies of the box."""
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if grid.d == 1:
        xi = np.fft.rfftfreq(grid.n, d=grid.h)
        return -((2.0 * math.pi * np.abs(xi)) ** alpha)
    xi1 = np.fft.fftfreq(grid.n, d=grid.h)
    xi2 = np.fft.rfftfreq(grid.n, d=grid.h)
    absxi = np.hypot(xi1[:, None], xi2[None, :])
    return -((2.0 * math.pi * absxi) ** alpha)


def spectral_fraclap(f: Field, alpha: float) -> Field:
    """I(f) through the Fourier multiplier (periodic interpretation of the box)."""
    sym = spectral_symbol(f.grid, float(alpha))
    if f.grid.d == 1:
        out = np.fft.irfft(sym * np.fft.rfft(f.values), n=f.grid.n)
    else:
        out = np.fft.irfft2(sym * np.fft.rfft2(f.values), s=f.grid.shape)
    return f.with_values(out)


BOUNDARY_DECAY_TOL = 1e-3


def check_boundary_decay(f: Field, tol: float = BOUNDARY_DECAY_TOL) -> float:
    """Largest boundary-layer value relative to the max; raises above tol."""
    v = np.abs(f.values)
    top = float(v.max())
    if top == 0.0:
        return 0.0
    if f.grid.d == 1:
        edge = max(v[0], v[-1])
    else:
        edge = max(v[0, :].max(), v[-1, :].max(), v[:, 0].max(), v[:, -1].max())
    ratio = float(edge / top)
    if ratio > tol:
        raise ValueError(
            f"field does not decay at the box boundary (edge/max = {ratio:.3e} "
            f"> {tol:g}); the zero-extension truncation error would dominate"
        )
    return ratio


def quadrature_fraclap(f: Field, cfg: OperatorConfig, check_decay: bool = True) -> Field:
    """I(f) through the singular-integral quadrature.

    In "tail" mode fields are extended by zero and the analytic exterior
    kernel mass is charged to -u(x); in "conservative" mode jumps leaving
    the box are dropped (Markov box process).
    """
    if check_decay:
        check_boundary_decay(f)
    st = get_stencil(f.grid, full_kernel(cfg.alpha, f.grid.d))
    return f.with_values(st.apply(f.values, cfg.exterior))


def split_fraclap(f: Field, cfg: OperatorConfig, r: float | None = None):
    """Kernel splitting I = I_near + I_far at radius r.

    near uses the compensated kernel (kappa - kappa(r))_+ supported in |z| < r,
    far the bounded kernel kappa^c = min(kappa, kappa(r)).  The discrete cell
    weights are additive in the kernel, so near + far equals the full
    quadrature operator to machine precision.  Returns (near, far, Kc) with
    Kc the analytic L1 mass of kappa^c.
    """
    grid = f.grid
    if r is None:
        r = cfg.split_radius if cfg.split_radius is not None else grid.h
    if not 0.0 < r < grid.L:
        raise ValueError(f"split radius must lie in (0, L), got {r}")
    near_st = get_stencil(grid, near_kernel(cfg.alpha, grid.d, r))
    far_st = get_stencil(grid, far_kernel(cfg.alpha, grid.d, r))
    near = f.with_values(near_st.apply(f.values, cfg.exterior))
    far = f.with_values(far_st.apply(f.values, cfg.exterior))
    kc = far_kernel(cfg.alpha, grid.d, r).l1_mass()
    return near, far, kc


@lru_cache(maxsize=32)
def _plain_conv_kernel(grid: Grid, kernel: JumpKernel) -> np.ndarray:
    """Cell-mass convolution stencil for a bounded kernel (no singularity)."""
    n, h = grid.n, grid.h
    if grid.d == 1:
        j = np.arange(1, n + 1)
        w = kernel.moment(j * h - h / 2, j * h + h / 2, 0)
        ker = np.zeros(2 * n + 1)
        ker[n + 1 :] = w
        ker[:n] = w[::-1]
        ker[n] = 2.0 * float(kernel.moment(0.0, h / 2, 0))
        return ker
    off = np.arange(-n, n + 1) * h
    c1, c2 = np.meshgrid(off, off, indexing="ij")
    m0, _ = _gl_cell_integrals_2d(kernel, c1, c2, h)

    def self_mass(t):
        rmax = (h / 2) / np.maximum(np.abs(np.cos(t)), np.abs(np.sin(t)))
        return kernel.moment(0.0, rmax, 1)

    m0[n, n] = _theta_quad(self_mass, 0.0, 2.0 * math.pi)
    return m0


def capped_convolution(f: Field, cfg: OperatorConfig, r: float) -> Field:
    """kappa^c * f for the bounded far kernel: nonnegative for f >= 0.

    The capped kernel is bounded, so plain cell masses give a second-order
    convolution rule with all weights nonnegative (positivity is structural).
    """
    ker = _plain_conv_kernel(f.grid, far_kernel(cfg.alpha, f.grid.d, r))
    return f.with_values(_signal.fftconvolve(f.values, ker, mode="same"))


# ---------------------------------------------------------------------------
# drift: conservative upwind divergence and its adjoint
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _face_velocities(grid: Grid, force: ForceField) -> tuple[np.ndarray, ...]:
    """E+ and E- per axis at interior faces, zero at the box boundary faces.

    For the confining family the flux at the outer faces vanishes (upwind
    takes the exterior value, which is zero), so boundary faces carry E = 0
    and the flux form telescopes to exact mass conservation.
    """
    ax = grid.axis
    if grid.d == 1:
        xf = ax[:-1] + grid.h / 2
        ef = force.at(xf, 1)
        return (np.maximum(ef, 0.0), np.minimum(ef, 0.0))
    out = []
    for axis in (0, 1):
        xf = ax[:-1] + grid.h / 2
        if axis == 0:
            p1, p2 = np.meshgrid(xf, ax, indexing="ij")
        else:
            p1, p2 = np.meshgrid(ax, xf, indexing="ij")
        pts = np.stack([p1, p2], axis=-1)
        ef = force.at(pts, 2)[..., axis]
        out.append(np.maximum(ef, 0.0))
        out.append(np.minimum(ef, 0.0))
    return tuple(out)


def drift_divergence(f: Field, force: ForceField) -> Field:
    """div(E f) in conservative flux form with first-order upwind faces.

    Faces take the value from the side mass flows from (velocity -E), which
    keeps the stencil Metzler and the discrete maximum principle intact.
    """
    grid = f.grid
    v = f.values
    h = grid.h
    if grid.d == 1:
        ep, em = _face_velocities(grid, force)
        flux = ep * v[1:] + em * v[:-1]
        out = (np.concatenate([flux, [0.0]]) - np.concatenate([[0.0], flux])) / h
        return f.with_values(out)
    ep0, em0, ep1, em1 = _face_velocities(grid, force)
    flux0 = ep0 * v[1:, :] + em0 * v[:-1, :]
    flux1 = ep1 * v[:, 1:] + em1 * v[:, :-1]
    z0 = np.zeros((1, grid.n))
    z1 = np.zeros((grid.n, 1))
    out = (
        np.concatenate([flux0, z0], axis=0) - np.concatenate([z0, flux0], axis=0)
    ) / h + (
        np.concatenate([flux1, z1], axis=1) - np.concatenate([z1, flux1], axis=1)
    ) / h
    return f.with_values(out)


def drift_gradient_adjoint(g: Field, force: ForceField) -> Field:
    """-E . grad g, the exact transpose of the upwind divergence.

    Differences are taken on the downwind side relative to -E, so the matrix
    identity (div_upwind)^T = -E.grad_downwind holds entrywise.
    """
    grid = g.grid
    v = g.values
    h = grid.h
    if grid.d == 1:
        ep, em = _face_velocities(grid, force)
        dv = (v[1:] - v[:-1]) / h
        out = np.zeros_like(v)
        out[1:] -= ep * dv  # (D^T g)_i includes E+_{i-1/2} (g_{i-1} - g_i)/h
        out[:-1] -= em * dv  # and E-_{i+1/2} (g_i - g_{i+1})/h
        return g.with_values(out)
    ep0, em0, ep1, em1 = _face_velocities(grid, force)
    out = np.zeros_like(v)
    dv0 = (v[1:, :] - v[:-1, :]) / h
    out[1:, :] -= ep0 * dv0
    out[:-1, :] -= em0 * dv0
    dv1 = (v[:, 1:] - v[:, :-1]) / h
    out[:, 1:] -= ep1 * dv1
    out[:, :-1] -= em1 * dv1
    return g.with_values(out)


def drift_divergence_centered(f: Field, force: ForceField) -> Field:
    """div(E f) with centered face averages: second order, conservative,
    but not Metzler (no discrete maximum principle).  Used where equilibrium
    accuracy outranks sign structure."""
    grid = f.grid
    v = f.values
    h = grid.h
    if grid.d == 1:
        ep, em = _face_velocities(grid, force)
        ef = ep + em
        flux = ef * 0.5 * (v[1:] + v[:-1])
        out = (np.concatenate([flux, [0.0]]) - np.concatenate([[0.0], flux])) / h
        return f.with_values(out)
    ep0, em0, ep1, em1 = _face_velocities(grid, force)
    f0 = (ep0 + em0) * 0.5 * (v[1:, :] + v[:-1, :])
    f1 = (ep1 + em1) * 0.5 * (v[:, 1:] + v[:, :-1])
    z0 = np.zeros((1, grid.n))
    z1 = np.zeros((grid.n, 1))
    out = (
        np.concatenate([f0, z0], axis=0) - np.concatenate([z0, f0], axis=0)
    ) / h + (
        np.concatenate([f1, z1], axis=1) - np.concatenate([z1, f1], axis=1)
    ) / h
    return f.with_values(out)


def drift_gradient_adjoint_centered(g: Field, force: ForceField) -> Field:
    """Exact transpose of the centered flux divergence: -E.grad with
    face-averaged centered differences."""
    grid = g.grid
    v = g.values
    h = grid.h
    if grid.d == 1:
        ep, em = _face_velocities(grid, force)
        ef = ep + em
        dv = ef * (v[1:] - v[:-1]) / h
        out = np.zeros_like(v)
        out[1:] -= 0.5 * dv
        out[:-1] -= 0.5 * dv
        return g.with_values(out)
    ep0, em0, ep1, em1 = _face_velocities(grid, force)
    out = np.zeros_like(v)
    dv0 = (ep0 + em0) * (v[1:, :] - v[:-1, :]) / h
    out[1:, :] -= 0.5 * dv0
    out[:-1, :] -= 0.5 * dv0
    dv1 = (ep1 + em1) * (v[:, 1:] - v[:, :-1]) / h
    out[:, 1:] -= 0.5 * dv1
    out[:, :-1] -= 0.5 * dv1
    return g.with_values(out)


def drift_apply(f: Field, cfg: OperatorConfig) -> Field:
    if cfg.drift == "centered":
        return drift_divergence_centered(f, cfg.force_field())
    return drift_divergence(f, cfg.force_field())


def drift_adjoint_apply(g: Field, cfg: OperatorConfig) -> Field:
    if cfg.drift == "centered":
        return drift_gradient_adjoint_centered(g, cfg.force_field())
    return drift_gradient_adjoint(g, cfg.force_field())


def max_drift_speed(grid: Grid, force: ForceField) -> float:
    """Sum over axes of the largest face speed; drives the CFL bound."""
    faces = _face_velocities(grid, force)
    total = 0.0
    for axis in range(grid.d):
        ep, em = faces[2 * axis], faces[2 * axis + 1]
        total += max(float(np.max(ep, initial=0.0)), float(np.max(-em, initial=0.0)))
    return total


# ---------------------------------------------------------------------------
# the generator Lambda = I + div(E .) and its adjoint
# ---------------------------------------------------------------------------


def jump_apply(f: Field, cfg: OperatorConfig) -> Field:
    """Jump part of the generator per cfg.method.

    The generator is realized on the periodized box: the quadrature route
    wraps jumps around (the real-space twin of the spectral multiplier), so
    mass is conserved exactly (column sums zero, dual to Lambda^* 1 = 0) and
    both routes share one equilibrium up to quadrature error.  Standalone
    exterior treatments live in quadrature_fraclap.
    """
    if cfg.method == "spectral":
        return spectral_fraclap(f, cfg.alpha)
    st = get_stencil(f.grid, full_kernel(cfg.alpha, f.grid.d))
    return f.with_values(st.apply_periodic(f.values))


def generator_apply(f: Field, cfg: OperatorConfig) -> Field:
    """Lambda f = I(f) + div(E f)."""
    jump = jump_apply(f, cfg)
    drift = drift_apply(f, cfg)
    return f.with_values(jump.values + drift.values)


def adjoint_apply(g: Field, cfg: OperatorConfig) -> Field:
    """Lambda^* g = I(g) - E . grad g (upwind transposed); Lambda^* 1 = 0 exactly."""
    jump = jump_apply(g, cfg)
    drift = drift_adjoint_apply(g, cfg)
    return g.with_values(jump.values + drift.values)


@dataclass(frozen=True)
class GeneratorMatrix:
    """Dense realization of Lambda (or Lambda^*) on the flattened node set."""

    grid: Grid
    cfg: OperatorConfig
    which: str  # {"forward", "adjoint"}
    mat: np.ndarray

    @property
    def size(self) -> int:
        return self.mat.shape[0]


@lru_cache(maxsize=16)
def _jump_matrix(grid: Grid, alpha: float) -> np.ndarray:
    """Periodic-wrap jump matrix: circulant symmetric Metzler, column sums zero."""
    st = get_stencil(grid, full_kernel(alpha, grid.d))
    n = grid.n
    if grid.d == 1:
        dd = idx_diff(n) % n
        a = st.folded[dd].copy()
    else:
        dd = idx_diff(n) % n
        a = st.folded[dd[:, None, :, None], dd[None, :, None, :]]
        a = a.reshape(n * n, n * n).copy()
    np.fill_diagonal(a, 0.0)
    np.fill_diagonal(a, -a.sum(axis=0))
    return a


def idx_diff(n: int) -> np.ndarray:
    i = np.arange(n)
    return i[:, None] - i[None, :]


def _drift_matrix(grid: Grid, cfg: OperatorConfig) -> np.ndarray:
    size = grid.size
    mat = np.zeros((size, size))
    eye = np.eye(size)
    # flux form is linear with a 3-point stencil per axis; assemble by action
    for k in range(size):
        f = Field(grid, eye[:, k].reshape(grid.shape))
        mat[:, k] = drift_apply(f, cfg).values.ravel(order="C")
    return mat


def assemble_generator_matrix(
    grid: Grid, cfg: OperatorConfig, which: str = "forward"
) -> GeneratorMatrix:
    """Dense generator on n^d <= 4096 nodes; adjoint is the exact transpose.

    The jump part always uses the conservative quadrature stencil: the
    spectral multiplier has no Metzler matrix realization, and the maximum
    principle plus Krein-Rutman structure require nonnegative off-diagonal
    jump entries.
    """
    if which not in ("forward", "adjoint"):
        raise ValueError(f"which must be 'forward' or 'adjoint', got {which!r}")
    if grid.size > MAX_DENSE:
        raise ValueError(
            f"dense assembly limited to n^d <= {MAX_DENSE}, got {grid.size}"
        )
    a = _jump_matrix(grid, cfg.alpha) + _drift_matrix(grid, cfg)
    if which == "adjoint":
        a = a.T
    return GeneratorMatrix(grid=grid, cfg=cfg, which=which, mat=a)


# ---------------------------------------------------------------------------
# semi-analytic fractional Laplacian of smooth non-decaying functions (1d)
# ---------------------------------------------------------------------------


def fraclap_reference(
    func: Callable[[np.ndarray], np.ndarray], xs: np.ndarray, alpha: float
) -> np.ndarray:
    """High-precision I(func) at points xs by adaptive quadrature (d = 1).

    Uses the symmetrized form int_0^inf (u(x+z) + u(x-z) - 2u(x)) kappa(z) dz
    with the substitution w = z^(2-alpha) on z in (0, 1), which removes the
    endpoint singularity, and an infinite-range quadrature beyond.  Works for
    any smooth func with growth below |x|^alpha (weights, Gaussians, ...).
    """
    c = norm_constant(alpha, 1)
    p = 1.0 / (2.0 - alpha)
    z_floor = 1e-4  # below this the centered second difference cancels badly
    out = np.empty(np.shape(xs), dtype=float)
    flat = out.ravel()
    for i, x in enumerate(np.ravel(np.asarray(xs, dtype=float))):
        u0 = float(func(x))

        def second_diff(z):
            return func(x + z) + func(x - z) - 2.0 * u0

        g_floor = second_diff(z_floor) / z_floor**2  # ~ u''(x)

        def inner(w):
            z = w**p
            if z < z_floor:
                return g_floor
            return second_diff(z) / z**2

        near, _ = _sciint.quad(inner, 0.0, 1.0, limit=200)
        near *= c * p  # kappa z^2 dz = c z^(1-alpha) dz = (c/p') dw under w = z^(2-alpha)

        def outer(z):
            return second_diff(z) * z ** (-1.0 - alpha)

        # u(x -+ z) can localize near z = |x|; split there so the adaptive
        # quadrature cannot step over the bump on the infinite range
        zcut = max(2.0 * abs(x) + 20.0, 50.0)
        pts = sorted({min(max(q, 1.0), zcut) for q in (abs(x) - 8, abs(x), abs(x) + 8)})
        far1, _ = _sciint.quad(outer, 1.0, zcut, points=pts, limit=400)
        far2, _ = _sciint.quad(outer, zcut, np.inf, limit=200)
        flat[i] = near + c * (far1 + far2)
    return out


@lru_cache(maxsize=32)
def fraclap_of_weight(grid: Grid, k: float, alpha: float) -> Field:
    """I(<x>^k) on the grid with the analytic exterior (d = 1, k < alpha).

    Weight fields grow, so zero-extension is useless; the quadrature runs
    over the analytic weight on all of R.
    """
    if grid.d != 1:
        raise NotImplementedError("analytic-exterior weight action is 1d only")
    if not k < alpha:
        raise ValueError(f"need k < alpha for I(<x>^k) to be finite, got k={k}")

    def m(x):
        return (1.0 + np.asarray(x) ** 2) ** (k / 2.0)

    vals = fraclap_reference(m, grid.axis, alpha)
    return Field(grid, vals)


# ---------------------------------------------------------------------------
# hypothesis checks on the force field
# ---------------------------------------------------------------------------


def verify_force_hypotheses(force: ForceField, gamma: float, grid: Grid) -> dict:
    """Empirical constants for the growth and confinement hypotheses.

    Returns sup |grad E| / <x>^(gamma-2), inf (E.x) / (<x>^(gamma-2) |x|^2)
    over nodes with |x| > h, plus a flag for any node where E.x < 0.
    grad E uses centered differences with step h.
    """
    h = grid.h
    br = grid.bracket()
    if grid.d == 1:
        x = grid.axis
        e = force(x)
        de = np.gradient(e, h)
        grad_norm = np.abs(de)
        ex = e * x
        r2 = x**2
    else:
        pts = np.stack(grid.coords(), axis=-1)
        e = force.at(pts, 2)
        d00 = np.gradient(e[..., 0], h, axis=0)
        d01 = np.gradient(e[..., 0], h, axis=1)
        d10 = np.gradient(e[..., 1], h, axis=0)
        d11 = np.gradient(e[..., 1], h, axis=1)
        grad_norm = np.sqrt(d00**2 + d01**2 + d10**2 + d11**2)
        ex = np.sum(e * pts, axis=-1)
        r2 = grid.radius2()
    decay = br ** (gamma - 2.0)
    sup_grad = float(np.max(grad_norm / decay))
    mask = r2 > h**2
    inf_conf = float(np.min(ex[mask] / (decay[mask] * r2[mask])))
    negative = ex < -1e-14 * np.max(np.abs(ex))
    report = {
        "sup_grad_ratio": sup_grad,
        "inf_confinement_ratio": inf_conf,
        "negative_confinement_nodes": int(np.count_nonzero(negative)),
        "passes": bool(
            np.isfinite(sup_grad) and inf_conf > 0.0 and not negative.any()
        ),
    }
    return report
