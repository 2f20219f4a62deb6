"""Constructive inverses for one observation step.

Each builder here produces a function ``g`` on observation space such that
averaging ``g`` over one channel draw reproduces a target function ``f`` on
state space:

    S(g)(x) = E[g(h(x, Z))] = f(x)      (Z the channel noise)

Four channel families are covered, each with its own construction:

* affine:      y = a(z)·x + b(z); polynomial targets solved through an
               upper-triangular moment system.
* indicator:   y = max(x, z) in effect (x revealed only when it exceeds the
               noise); g built by integrating f'/cdf.
* two_point:   y = x ± 1 with equal probability; g built by a sign-flipping
               recursion that telescopes under the two-point average.
* direct:      y = h(x) noiselessly; g = f ∘ h⁻¹.

``verify_S`` closes the loop: it evaluates S(g) on a grid (exactly for the
two_point and direct channels, by adaptive Gauss-Legendre quadrature for the
others) and reports the sup-norm residual against f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.special import ndtr

from .errors import (
    NonFiniteMoment,
    PositivityViolated,
    QuadratureNotConverged,
    SingularDiagonal,
)

__all__ = [
    "MomentMatrix",
    "PiecewiseG",
    "affine_moment_matrix",
    "affine_solve",
    "direct_g",
    "function_from_dict",
    "indicator_g",
    "moment_oracle_from_channel",
    "noise_from_dict",
    "poly_fn",
    "telescoping_g",
    "verify_S",
]

EPS_POS = 1e-9
DEFAULT_QUAD_TOL = 1e-8
DEFAULT_MAX_DOUBLINGS = 14
DEFAULT_GL_ORDER = 16

# points per unit length when estimating the sup of a closed-form g
_SUP_RESOLUTION = 50_000


# ---------------------------------------------------------------------------
# function handles


def poly_fn(coeffs) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized polynomial ``c[0] + c[1]*y + c[2]*y**2 + ...``."""
    c = np.asarray(coeffs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("polynomial coefficients must be a nonempty 1-d vector")

    def fn(y):
        return np.polynomial.polynomial.polyval(np.asarray(y, dtype=float), c)

    return fn


def _table_fn(xs, ys) -> Callable[[np.ndarray], np.ndarray]:
    # linear interpolation inside the table, constant extension outside
    def fn(y):
        return np.interp(np.asarray(y, dtype=float), xs, ys)

    return fn


def function_from_dict(spec) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a serializable function spec into a vectorized callable.

    Accepted forms: a callable (returned unchanged), ``{"poly": [c0, c1, ...]}``,
    or a grid table ``{"xs": [...], "ys": [...]}`` evaluated by linear
    interpolation with constant extension beyond the table ends.
    """
    if callable(spec):
        return spec
    if not isinstance(spec, dict):
        raise ValueError(f"cannot interpret {type(spec).__name__} as a function")
    if "poly" in spec:
        return poly_fn(spec["poly"])
    if "xs" in spec and "ys" in spec:
        xs = np.asarray(spec["xs"], dtype=float)
        ys = np.asarray(spec["ys"], dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ValueError("grid table needs matching 1-d xs and ys, length >= 2")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValueError("grid table entries must be finite")
        if np.any(np.diff(xs) <= 0.0):
            raise ValueError("grid table xs must be strictly increasing")
        return _table_fn(xs, ys)
    raise ValueError("function spec must be callable, {'poly': ...} or {'xs','ys'}")


# ---------------------------------------------------------------------------
# noise laws


class _Noise:
    """Scalar noise law with density, cdf and a finite quadrature window."""

    __slots__ = ("lo", "hi", "pdf", "cdf")

    def __init__(self, lo, hi, pdf, cdf):
        self.lo = float(lo)
        self.hi = float(hi)
        self.pdf = pdf
        self.cdf = cdf


def noise_from_dict(spec) -> _Noise:
    """Parse a noise spec: uniform, normal, or a density grid table.

    ``{"kind": "uniform", "lo": .., "hi": ..}``;
    ``{"kind": "normal", "mean": .., "std": ..}`` (quadrature window is
    mean +/- 12 std, which carries all mass any 1e-8 check can see);
    ``{"xs": [...], "ys": [...]}`` a tabulated density, renormalized to
    integrate to one over its support.
    """
    if isinstance(spec, _Noise):
        return spec
    if not isinstance(spec, dict):
        raise ValueError("noise spec must be a dict")
    kind = spec.get("kind")
    if kind == "uniform":
        lo, hi = float(spec["lo"]), float(spec["hi"])
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError("uniform noise needs finite lo < hi")
        dens = 1.0 / (hi - lo)

        def pdf(z):
            z = np.asarray(z, dtype=float)
            return np.where((z >= lo) & (z <= hi), dens, 0.0)

        def cdf(z):
            z = np.asarray(z, dtype=float)
            return np.clip((z - lo) * dens, 0.0, 1.0)

        return _Noise(lo, hi, pdf, cdf)
    if kind == "normal":
        mean, std = float(spec["mean"]), float(spec["std"])
        if not (math.isfinite(mean) and math.isfinite(std) and std > 0.0):
            raise ValueError("normal noise needs finite mean and std > 0")
        norm = 1.0 / (std * math.sqrt(2.0 * math.pi))

        def pdf(z):
            t = (np.asarray(z, dtype=float) - mean) / std
            return norm * np.exp(-0.5 * t * t)

        def cdf(z):
            return ndtr((np.asarray(z, dtype=float) - mean) / std)

        return _Noise(mean - 12.0 * std, mean + 12.0 * std, pdf, cdf)
    if "xs" in spec and "ys" in spec:
        xs = np.asarray(spec["xs"], dtype=float)
        ys = np.asarray(spec["ys"], dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
            raise ValueError("density table needs matching 1-d xs and ys")
        if np.any(np.diff(xs) <= 0.0) or np.any(ys < 0.0):
            raise ValueError("density table needs increasing xs and ys >= 0")
        total = trapezoid(ys, xs)
        if not (math.isfinite(total) and total > 0.0):
            raise ValueError("density table must have positive finite mass")
        ys = ys / total
        cum = cumulative_trapezoid(ys, xs, initial=0.0)

        def pdf(z):
            return np.interp(np.asarray(z, dtype=float), xs, ys, left=0.0, right=0.0)

        def cdf(z):
            return np.interp(np.asarray(z, dtype=float), xs, cum, left=0.0, right=1.0)

        return _Noise(xs[0], xs[-1], pdf, cdf)
    raise ValueError("noise spec must be uniform, normal, or an {'xs','ys'} table")


# ---------------------------------------------------------------------------
# quadrature


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_rule(order):
    rule = _GL_CACHE.get(order)
    if rule is None:
        rule = np.polynomial.legendre.leggauss(order)
        _GL_CACHE[order] = rule
    return rule


def _composite_nodes(lo, hi, nsub, order):
    """Nodes and weights of an nsub-panel Gauss-Legendre rule on [lo, hi]."""
    x, w = _gl_rule(order)
    edges = np.linspace(lo, hi, nsub + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * np.diff(edges)
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


def _adaptive_scalar(fn, lo, hi, tol, max_doublings, order=DEFAULT_GL_ORDER):
    """Integrate fn over [lo, hi], doubling panels until two runs agree."""
    prev = None
    nsub = 1
    for _ in range(max_doublings + 1):
        pts, wts = _composite_nodes(lo, hi, nsub, order)
        cur = float(np.asarray(fn(pts), dtype=float) @ wts)
        if not math.isfinite(cur):
            raise NonFiniteMoment("integrand produced a non-finite value")
        if prev is not None and abs(cur - prev) <= tol:
            return cur
        prev = cur
        nsub *= 2
    raise QuadratureNotConverged(
        f"integral estimates still moving after {max_doublings} doublings "
        f"(last two: {prev!r}, tolerance {tol!r})"
    )


# ---------------------------------------------------------------------------
# affine channel


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    """Upper-triangular system linking target and solution coefficients.

    ``entries[k, i]`` holds C(i, k) * E[a(Z)^k * b(Z)^(i-k)]; a polynomial
    target f with coefficients beta is matched by g with coefficients alpha
    satisfying beta = entries @ alpha.  ``diag_nonzero`` records whether every
    diagonal entry E[a(Z)^k] is nonzero, the solvability condition.
    """

    degree: int
    entries: np.ndarray
    diag_nonzero: bool


def affine_moment_matrix(moment_oracle, degree: int) -> MomentMatrix:
    """Build the coefficient system for the channel y = a(Z)·x + b(Z).

    ``moment_oracle(k, j)`` must return the joint moment E[a(Z)^k * b(Z)^j];
    every moment with k + j <= degree is consulted and must be finite.
    """
    degree = int(degree)
    if degree < 0:
        raise ValueError("degree must be >= 0")
    n = degree + 1
    entries = np.zeros((n, n))
    for i in range(n):
        for k in range(i + 1):
            m = float(moment_oracle(k, i - k))
            if not math.isfinite(m):
                raise NonFiniteMoment(
                    f"moment E[a^{k} b^{i - k}] is not finite: {m!r}"
                )
            entries[k, i] = math.comb(i, k) * m
    diag_nonzero = bool(np.all(np.abs(np.diag(entries)) > 0.0))
    return MomentMatrix(degree=degree, entries=entries, diag_nonzero=diag_nonzero)


def affine_solve(nmat: MomentMatrix, beta) -> np.ndarray:
    """Solve beta = N @ alpha for the coefficients of g by back-substitution.

    beta may be shorter than degree + 1; missing high-order coefficients are
    treated as zero.  Raises SingularDiagonal when some power of a(Z) averages
    to zero, in which case no polynomial g of this degree can work.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.ndim != 1 or beta.size == 0:
        raise ValueError("beta must be a nonempty 1-d coefficient vector")
    n = nmat.degree + 1
    if beta.size > n:
        raise ValueError(f"beta has degree {beta.size - 1} > matrix degree {nmat.degree}")
    if not nmat.diag_nonzero:
        zero_powers = [k for k in range(n) if nmat.entries[k, k] == 0.0]
        raise SingularDiagonal(
            f"E[a(Z)^k] vanishes for k in {zero_powers}; triangular system is singular"
        )
    full = np.zeros(n)
    full[: beta.size] = beta
    alpha = np.zeros(n)
    for k in range(n - 1, -1, -1):
        alpha[k] = (full[k] - nmat.entries[k, k + 1 :] @ alpha[k + 1 :]) / nmat.entries[k, k]
    return alpha


def moment_oracle_from_channel(
    a,
    b,
    q,
    tol: float = 1e-10,
    max_doublings: int = 12,
) -> Callable[[int, int], float]:
    """Numeric joint-moment oracle E[a(Z)^k b(Z)^j] for a noise spec q."""
    afun = function_from_dict(a)
    bfun = function_from_dict(b)
    noise = noise_from_dict(q)

    def oracle(k: int, j: int) -> float:
        def integrand(z):
            az = np.asarray(afun(z), dtype=float)
            bz = np.asarray(bfun(z), dtype=float)
            return (az ** k) * (bz ** j) * noise.pdf(z)

        return _adaptive_scalar(integrand, noise.lo, noise.hi, tol, max_doublings)

    return oracle


# ---------------------------------------------------------------------------
# piecewise g container


@dataclass(frozen=True, eq=False)
class PiecewiseG:
    """A constructed g: callable, with its kink locations and sup norm.

    ``kind`` is "table" (dense grid plus linear interpolation; sup_norm is the
    exact node maximum) or "closed_form" (evaluation by recursion; sup_norm is
    estimated on a dense structural grid, resolution ~2e-5).
    """

    breakpoints: np.ndarray
    kind: str
    sup_norm: float
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    table_xs: Optional[np.ndarray] = None
    table_ys: Optional[np.ndarray] = None

    def __call__(self, ys):
        return np.asarray(self.fn(np.asarray(ys, dtype=float)), dtype=float)


# ---------------------------------------------------------------------------
# indicator channel


def indicator_g(
    f,
    Q_cdf,
    x_min: float,
    x_max: float,
    c: Optional[float] = None,
    npts: int = 10_000,
    fprime=None,
    eps_pos: float = EPS_POS,
) -> PiecewiseG:
    """Invert the censoring channel that reveals x only above the noise.

    The one-step average here is S(g)(x) = g(x)·F(x) + ∫_x g(z) q(z) dz with
    F = Q_cdf, and differentiating shows g must satisfy g' = f'/F.  We return

        g(x) = c + ∫_{x_min}^x f'(u) / F(u) du

    on [x_min, x_max], tabulated on a uniform grid of ``npts`` points
    (cumulative trapezoid) and extended by its boundary values outside.

    With ``c=None`` (default) the constant is anchored automatically: because
    g is continued flat above x_max, S(g)(x_max) = g(x_max) exactly, for any
    noise law, so c = f(x_max) - ∫_{x_min}^{x_max} f'/F makes the match exact
    at the right endpoint and hence (up to quadrature error) everywhere.
    Passing an explicit c reproduces that g up to an additive constant and
    generally leaves a constant residual in S(g) - f.

    f' is taken from ``fprime`` when supplied, otherwise computed by central
    differences on the grid.  Raises PositivityViolated when F(x_min) <=
    eps_pos, since then the integrand is unbounded at the left edge.
    """
    x_min = float(x_min)
    x_max = float(x_max)
    if not (math.isfinite(x_min) and math.isfinite(x_max) and x_min < x_max):
        raise ValueError("need finite x_min < x_max")
    if npts < 3:
        raise ValueError("npts must be >= 3")
    ffun = function_from_dict(f)
    cdf = function_from_dict(Q_cdf) if not callable(Q_cdf) else Q_cdf

    xs = np.linspace(x_min, x_max, int(npts))
    F = np.asarray(cdf(xs), dtype=float)
    if F[0] <= eps_pos:
        raise PositivityViolated(
            f"noise cdf at interval start is {F[0]!r} <= {eps_pos!r}; "
            "the state space must sit inside the region the noise can reach"
        )
    fvals = np.asarray(ffun(xs), dtype=float)
    if fprime is not None:
        fp = np.asarray(function_from_dict(fprime)(xs), dtype=float)
    else:
        fp = np.gradient(fvals, xs)
    g0 = cumulative_trapezoid(fp / F, xs, initial=0.0)
    c_val = float(fvals[-1] - g0[-1]) if c is None else float(c)
    ys = c_val + g0
    return PiecewiseG(
        breakpoints=xs,
        kind="table",
        sup_norm=float(np.max(np.abs(ys))),
        fn=_table_fn(xs, ys),
        table_xs=xs,
        table_ys=ys,
    )


# ---------------------------------------------------------------------------
# two-point channel


def telescoping_g(f, M: int, a: float) -> PiecewiseG:
    """Invert the equal-odds y = x ± 1 channel on the band [a - M, a + M].

    g is defined by a four-case recursion: zero below a - M + 1, twice
    f(y - 1) on the first width-2 cell, 2·f(y - 1) - g(y - 2) through the rest
    of the band, and -g(y - 2) above it.  Averaging g(x + 1) and g(x - 1)
    telescopes the sum so S(g) = f on the band and 0 outside, with
    sup|g| <= 4·M·sup|f|.  M = 0 is the empty band and returns g = 0.

    f must accept numpy arrays; it is only ever evaluated inside the band.
    """
    M = int(M)
    if M < 0:
        raise ValueError("M must be >= 0")
    a = float(a)
    if not math.isfinite(a):
        raise ValueError("a must be finite")

    if M == 0:
        zero = lambda y: np.zeros_like(np.asarray(y, dtype=float))
        return PiecewiseG(
            breakpoints=np.array([]), kind="closed_form", sup_norm=0.0, fn=zero
        )

    ffun = function_from_dict(f)
    lo = a - M
    hi = a + M

    def eval_g(ys):
        ys = np.asarray(ys, dtype=float)
        flat = ys.ravel()
        out = np.zeros(flat.shape)
        y = flat.copy()
        sign = np.ones(flat.shape)
        active = y >= lo + 1.0
        while np.any(active):
            contrib = active & (y <= hi + 1.0)
            if np.any(contrib):
                out[contrib] += sign[contrib] * 2.0 * np.asarray(
                    ffun(y[contrib] - 1.0), dtype=float
                )
            active = active & (y >= lo + 3.0)
            y[active] -= 2.0
            sign[active] = -sign[active]
        return out.reshape(ys.shape)

    breakpoints = lo + 1.0 + 2.0 * np.arange(M + 1)

    # every value of g repeats (up to sign) values taken on [lo+1, hi+1],
    # so the sup over that window is the global sup
    count = max(2, int(2 * M * _SUP_RESOLUTION) + 1)
    probe = np.linspace(lo + 1.0, hi + 1.0, count)
    probe = np.concatenate([probe, breakpoints, np.nextafter(breakpoints, -np.inf)])
    sup = float(np.max(np.abs(eval_g(probe))))

    return PiecewiseG(
        breakpoints=breakpoints, kind="closed_form", sup_norm=sup, fn=eval_g
    )


# ---------------------------------------------------------------------------
# direct channel


def direct_g(f, h_inverse) -> Callable[[np.ndarray], np.ndarray]:
    """g = f ∘ h⁻¹ for a noiseless invertible observation y = h(x)."""
    ffun = function_from_dict(f)
    hinv = function_from_dict(h_inverse)

    def g(ys):
        return np.asarray(ffun(hinv(np.asarray(ys, dtype=float))), dtype=float)

    return g


# ---------------------------------------------------------------------------
# verification


def _s_affine(gfun, afun, bfun, noise, grid, nsub, order):
    pts, wts = _composite_nodes(noise.lo, noise.hi, nsub, order)
    az = np.asarray(afun(pts), dtype=float)
    bz = np.asarray(bfun(pts), dtype=float)
    wq = wts * np.asarray(noise.pdf(pts), dtype=float)
    out = np.empty(grid.size)
    chunk = max(1, int(4_000_000 // max(1, pts.size)))
    for s in range(0, grid.size, chunk):
        xs = grid[s : s + chunk]
        y = az[None, :] * xs[:, None] + bz[None, :]
        vals = np.asarray(gfun(y.ravel()), dtype=float).reshape(y.shape)
        out[s : s + chunk] = vals @ wq
    return out


def _s_indicator(gfun, noise, grid, nsub, order):
    xs_u, inv = np.unique(grid, return_inverse=True)
    g_u = np.asarray(gfun(xs_u), dtype=float)
    F_u = np.asarray(noise.cdf(xs_u), dtype=float)
    tail = np.zeros(xs_u.size)

    below = xs_u < noise.hi
    nodes = np.append(xs_u[below], noise.hi)
    nseg = nodes.size - 1
    if nseg > 0:
        x, w = _gl_rule(order)
        seg_ints = np.empty(nseg)
        block = max(1, int(2_000_000 // max(1, nsub * order)))
        for s in range(0, nseg, block):
            stop = min(s + block, nseg)
            left = nodes[s:stop]
            right = nodes[s + 1 : stop + 1]
            edges = left[:, None] + (right - left)[:, None] * np.linspace(
                0.0, 1.0, nsub + 1
            )[None, :]
            mid = 0.5 * (edges[:, :-1] + edges[:, 1:])
            half = 0.5 * np.diff(edges, axis=1)
            pts = mid[:, :, None] + half[:, :, None] * x[None, None, :]
            wts = half[:, :, None] * w[None, None, :]
            vals = np.asarray(
                gfun(pts.ravel()), dtype=float
            ) * np.asarray(noise.pdf(pts.ravel()), dtype=float)
            seg_ints[s : s + left.size] = (
                vals.reshape(pts.shape) * wts
            ).sum(axis=(1, 2))
        # suffix sums: integral from each node up to the top of the support
        suffix = np.cumsum(seg_ints[::-1])[::-1]
        tail[below] = suffix
    return (g_u * F_u + tail)[inv]


def verify_S(
    g,
    channel: dict,
    f,
    grid,
    quad_tol: float = DEFAULT_QUAD_TOL,
    max_doublings: int = DEFAULT_MAX_DOUBLINGS,
    order: int = DEFAULT_GL_ORDER,
) -> float:
    """Sup-norm residual between f and the one-step average of g on a grid.

    ``channel`` is a spec dict: {"kind": "two_point"} (y = x ± 1, equal odds),
    {"kind": "direct", "h": ...}, {"kind": "affine", "a": ..., "b": ...,
    "q": noise}, or {"kind": "indicator", "q": noise}.  Function-valued
    entries accept callables, {"poly": ...}, or {"xs", "ys"} tables.

    The two_point and direct channels are averaged exactly.  The affine and
    indicator channels use panel-doubling Gauss-Legendre quadrature, stopping
    once successive residual estimates agree within ``quad_tol`` and raising
    QuadratureNotConverged if they never do.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        return 0.0
    gfun = g if callable(g) else function_from_dict(g)
    ffun = function_from_dict(f)
    fvals = np.asarray(ffun(grid), dtype=float)

    if not isinstance(channel, dict) or "kind" not in channel:
        raise ValueError("channel spec must be a dict with a 'kind' entry")
    kind = channel["kind"]

    if kind == "two_point":
        svals = 0.5 * (
            np.asarray(gfun(grid + 1.0), dtype=float)
            + np.asarray(gfun(grid - 1.0), dtype=float)
        )
        return float(np.max(np.abs(fvals - svals)))

    if kind == "direct":
        hfun = function_from_dict(channel["h"])
        svals = np.asarray(gfun(np.asarray(hfun(grid), dtype=float)), dtype=float)
        return float(np.max(np.abs(fvals - svals)))

    if kind == "affine":
        afun = function_from_dict(channel["a"])
        bfun = function_from_dict(channel["b"])
        noise = noise_from_dict(channel["q"])

        def residual(nsub):
            return float(
                np.max(np.abs(fvals - _s_affine(gfun, afun, bfun, noise, grid, nsub, order)))
            )

    elif kind == "indicator":
        noise = noise_from_dict(channel["q"])

        def residual(nsub):
            return float(
                np.max(np.abs(fvals - _s_indicator(gfun, noise, grid, nsub, order)))
            )

    else:
        raise ValueError(f"unknown channel kind {kind!r}")

    prev = None
    nsub = 1
    for _ in range(max_doublings + 1):
        cur = residual(nsub)
        if prev is not None and abs(cur - prev) <= quad_tol:
            return cur
        prev = cur
        nsub *= 2
    raise QuadratureNotConverged(
        f"residual estimates still moving after {max_doublings} panel doublings "
        f"(last two: {prev!r}; tolerance {quad_tol!r})"
    )
