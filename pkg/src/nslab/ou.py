"""Ornstein-Uhlenbeck operator on half-spaces and planar cone cells.

``T_rho 1_C(x)`` is the Gaussian measure of ``(C - rho x) / sqrt(1 - rho^2)``. For a
planar cell cut out by at most three half-planes this is written as an outer
integral over the coordinate ``s`` across one chosen boundary line of an inner
normal CDF in the coordinate ``r`` along it:

    T_rho 1_C(x) = int_{s >= alpha'} phi(s) [Phi(U(s)) - Phi(L(s))] ds

with ``L`` and ``U`` affine in ``s``. Restricted to a line parallel to the chosen
boundary, only the inner limits move, and they move affinely in the line
parameter, which gives the holomorphic continuation used by ``complex_line_eval``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .gaussian import (
    SQRT2PI,
    DomainError,
    _ndtr,
    gauss_legendre_panels,
    std_normal_cdf,
    std_normal_pdf,
)
from .partition import FlatPartition, cell_constraints, facet_adjacent, facet_frame

RADIUS = 10.0
MAX_IMAG = 3.0


class AccuracyError(DomainError):
    """Requested evaluation lies outside the validated accuracy window."""


@dataclass(frozen=True)
class LineRestriction:
    """The line ``c N + t w`` inside the hyperplane shared by cells ``pair = (i, j)``."""

    c: float
    N: np.ndarray
    w: np.ndarray
    pair: tuple

    def __post_init__(self):
        N = np.asarray(self.N, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if abs(np.linalg.norm(N) - 1.0) > 1e-12:
            raise DomainError("N must be a unit vector")
        if abs(N @ w) > 1e-12 or np.linalg.norm(w) == 0:
            raise DomainError("w must be nonzero and orthogonal to N")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "pair", tuple(int(v) for v in self.pair))

    def point(self, t):
        t = np.asarray(t)
        return self.c * self.N + t[..., None] * self.w


def line_restriction(p: FlatPartition, i: int, j: int) -> LineRestriction:
    """Line along the shared facet of cells i and j, scaled so {t >= 1} lies in the facet."""
    frame = facet_frame(p, i, j)
    scale = max(1.0, frame.t_apex)
    return LineRestriction(c=frame.offset, N=frame.normal, w=scale * frame.direction, pair=(i, j))


@dataclass(frozen=True, eq=False)
class ConeCell2D:
    """Planar cell ``{x : <x, normals[m]> <= offsets[m]}`` with at most three constraints."""

    normals: np.ndarray
    offsets: np.ndarray
    apex: np.ndarray = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.asarray(self.offsets, dtype=float).reshape(-1)
        if u.shape[1] != 2 or not (1 <= u.shape[0] <= 3) or b.shape[0] != u.shape[0]:
            raise DomainError("a planar cone cell has 1 to 3 constraints in R^2")
        norms = np.linalg.norm(u, axis=1)
        if np.any(norms == 0):
            raise DomainError("constraint normals must be nonzero")
        b = b / norms
        u = u / norms[:, None]
        object.__setattr__(self, "normals", u)
        object.__setattr__(self, "offsets", b)
        if not _has_interior(u, b):
            raise DomainError("cell has empty interior")

    @property
    def m(self) -> int:
        return self.normals.shape[0]


def _has_interior(u, b) -> bool:
    # maximise eps with <x, u_m> + eps <= b_m, inside a large box
    m = u.shape[0]
    res = linprog([0.0, 0.0, -1.0], A_ub=np.column_stack([u, np.ones(m)]), b_ub=b,
                  bounds=[(-1e6, 1e6), (-1e6, 1e6), (None, 1.0)], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-12)


def cone_cell(p: FlatPartition, i: int) -> ConeCell2D:
    if p.n != 2:
        raise DomainError("cone cells are planar")
    u, b = cell_constraints(p, i)
    return ConeCell2D(u, b, apex=p.shift.copy())


def t_rho_halfspace(a_offset: float, u, rho: float, x):
    """T_rho applied to the indicator of {<z, u> <= a_offset}, at x (unit u)."""
    if not (-1.0 < rho < 1.0):
        raise DomainError("rho must lie in (-1, 1)")
    u = np.asarray(u, dtype=float)
    proj = np.asarray(x, dtype=float) @ u
    return std_normal_cdf((a_offset - rho * proj) / math.sqrt(1.0 - rho * rho))


# --- nested integral -----------------------------------------------------------

def _frame(cell: ConeCell2D, axis: int):
    e1 = -cell.normals[axis]
    e2 = np.array([-e1[1], e1[0]])
    others = [m for m in range(cell.m) if m != axis]
    p = np.array([cell.normals[m] @ e1 for m in others])
    q = np.array([cell.normals[m] @ e2 for m in others])
    return others, p, q


def _scaled_offsets(cell: ConeCell2D, rho: float, x):
    s = math.sqrt(1.0 - rho * rho)
    x = np.asarray(x)
    return (cell.offsets - rho * (x @ cell.normals.T)) / s


def _single_bound(p_o, q_o, b_axis, b_other):
    """s-range and inner-limit kind for a two-constraint (or one) cell, vectorised."""
    lo = -b_axis
    hi = np.full(np.shape(lo), np.inf)
    kind = None
    if p_o is None:
        return lo, hi, None, None, None
    if abs(q_o) < 1e-13:
        if p_o > 0:
            hi = np.minimum(hi, b_other / p_o)
        else:
            lo = np.maximum(lo, b_other / p_o)
        return lo, hi, None, None, None
    kind = "upper" if q_o > 0 else "lower"
    # r-bound = slope * s + intercept
    return lo, hi, kind, -p_o / q_o, b_other / q_o


def _nested_two(cell: ConeCell2D, offs: np.ndarray, axis: int, order: int, panels: int):
    others, p, q = _frame(cell, axis)
    b_axis = offs[:, axis]
    if others:
        lo, hi, kind, slope, icpt = _single_bound(p[0], q[0], b_axis, offs[:, others[0]])
    else:
        lo, hi, kind, slope, icpt = _single_bound(None, None, b_axis, None)
    lo = np.maximum(lo, -RADIUS)
    hi = np.minimum(hi, RADIUS)
    empty = lo >= hi
    hi = np.where(empty, lo, hi)
    scale = 1.0 / max(1.0, abs(slope)) if kind else 1.0
    # extra panel edges around the inner transition r-bound = 0, where the integrand is steep
    base = np.linspace(0.0, 1.0, panels + 1)[None, :]
    edges = [lo[:, None] + (hi - lo)[:, None] * base]
    if kind:
        s_star = -icpt / slope if slope != 0 else np.full(lo.shape, np.nan)
        if slope != 0:
            marks = s_star[:, None] + scale * np.array([-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0])[None, :]
            edges.append(np.clip(marks, lo[:, None], hi[:, None]))
    e = np.sort(np.concatenate(edges, axis=1), axis=1)
    s_nodes, s_w = gauss_legendre_panels(e[:, :-1], e[:, 1:], order, 1)
    s_nodes = s_nodes.reshape(len(lo), -1)
    s_w = s_w.reshape(len(lo), -1)
    if kind is None:
        inner = np.ones_like(s_nodes)
    else:
        bound = slope * s_nodes + icpt[:, None]
        inner = _ndtr(bound) if kind == "upper" else _ndtr(-bound)
    val = np.sum(s_w * std_normal_pdf(s_nodes) * inner, axis=1)
    return np.where(empty, 0.0, val)


def _nested_three(cell: ConeCell2D, offs: np.ndarray, axis: int, order: int, panels: int):
    others, p, q = _frame(cell, axis)
    out = np.empty(offs.shape[0])
    for row, b in enumerate(offs):
        lo, hi = -b[axis], np.inf
        lines = []  # (kind, slope, intercept)
        for m, pm, qm in zip(others, p, q):
            if abs(qm) < 1e-13:
                if pm > 0:
                    hi = min(hi, b[m] / pm)
                else:
                    lo = max(lo, b[m] / pm)
            else:
                lines.append(("upper" if qm > 0 else "lower", -pm / qm, b[m] / qm))
        lo, hi = max(lo, -RADIUS), min(hi, RADIUS)
        if lo >= hi:
            out[row] = 0.0
            continue
        cuts = [lo, hi] + list(np.linspace(lo, hi, panels + 1))
        for a in range(len(lines)):
            if lines[a][1] != 0:
                cuts.append(-lines[a][2] / lines[a][1])
            for c in range(a + 1, len(lines)):
                ds = lines[a][1] - lines[c][1]
                if ds != 0:
                    cuts.append((lines[c][2] - lines[a][2]) / ds)
        e = np.unique(np.clip(cuts, lo, hi))
        s_nodes, s_w = gauss_legendre_panels(e[:-1], e[1:], order, 1)
        s_nodes, s_w = s_nodes.ravel(), s_w.ravel()
        low = np.full(s_nodes.shape, -np.inf)
        up = np.full(s_nodes.shape, np.inf)
        for kind, slope, icpt in lines:
            bound = slope * s_nodes + icpt
            if kind == "upper":
                up = np.minimum(up, bound)
            else:
                low = np.maximum(low, bound)
        inner = np.clip(_ndtr(up) - _ndtr(low), 0.0, None)
        out[row] = np.sum(s_w * std_normal_pdf(s_nodes) * inner)
    return out


def t_rho_cone2d(cell: ConeCell2D, rho: float, x, order: int = 16, panels: int = 8, axis: int = 0):
    """T_rho 1_cell(x) by outer Gauss-Legendre quadrature of the inner normal CDF.

    ``x`` is a point or an (m, 2) array. With rho = 0 this is gamma_2(cell).
    """
    if not (-1.0 < rho < 1.0):
        raise DomainError("rho must lie in (-1, 1)")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if not np.all(np.isfinite(pts)):
        raise DomainError("evaluation point must be finite")
    offs = _scaled_offsets(cell, rho, pts)
    if cell.m <= 2:
        val = _nested_two(cell, offs, axis, order, panels)
    else:
        val = _nested_three(cell, offs, axis, order, panels)
    val = np.clip(val, 0.0, 1.0)
    return float(val[0]) if single else val


def cell_measure(cell: ConeCell2D, order: int = 16, panels: int = 8) -> float:
    return t_rho_cone2d(cell, 0.0, np.zeros(2), order, panels)


# --- facet lines ---------------------------------------------------------------

def _facet_axis(cell: ConeCell2D, N) -> int:
    for m, u in enumerate(cell.normals):
        if abs(abs(u @ N) - 1.0) < 1e-10:
            return m
    raise DomainError("cell has no boundary line parallel to the restriction line")


def _check_line(p, lr: LineRestriction, rho: float):
    if not isinstance(p, FlatPartition) or p.n != 2:
        raise DomainError("line restrictions are evaluated for planar flat partitions")
    if not (-1.0 < rho < 1.0) or rho == 0.0:
        raise DomainError("rho must lie in (-1, 0) or (0, 1)")
    if not facet_adjacent(p, *lr.pair):
        raise DomainError(f"cells {lr.pair} are not facet-adjacent")


def line_difference(p: FlatPartition, lr: LineRestriction, rho: float, t, order: int = 16, panels: int = 8):
    """t -> T_rho(1_{A_i} - 1_{A_j})(c N + t w)."""
    _check_line(p, lr, rho)
    i, j = lr.pair
    pts = lr.point(np.asarray(t, dtype=float))
    vals = []
    for idx in (i, j):
        cell = cone_cell(p, idx)
        vals.append(t_rho_cone2d(cell, rho, pts, order, panels, axis=_facet_axis(cell, lr.N)))
    return vals[0] - vals[1]


def limit_at_infinity(c: float, rho: float) -> float:
    """Limit of the facet-line difference as t -> +inf, for rho in (0, 1)."""
    if not (0.0 < rho < 1.0):
        raise DomainError("limit_at_infinity is stated for rho in (0, 1); use line_limits for rho < 0")
    return 2.0 * math.copysign(1.0, c) * (std_normal_cdf(abs(c) * (1.0 - rho) / math.sqrt(1.0 - rho * rho)) - 0.5) \
        if c != 0 else 0.0


def line_limits(c: float, rho: float) -> tuple:
    """(limit as t -> -inf, limit as t -> +inf); the nonzero plateau swaps sides for rho < 0."""
    if rho > 0:
        return 0.0, limit_at_infinity(c, rho)
    if rho < 0:
        if c == 0:
            return 0.0, 0.0
        val = 2.0 * math.copysign(1.0, c) * (
            std_normal_cdf(abs(c) * (1.0 - rho) / math.sqrt(1.0 - rho * rho)) - 0.5)
        return val, 0.0
    raise DomainError("rho must be nonzero")


# --- complex continuation --------------------------------------------------------

_LEG_X, _LEG_W = np.polynomial.legendre.leggauss(80)


def complex_normal_cdf(lam):
    """Phi at complex arguments along the two-leg path 0 -> Re(lam) -> lam."""
    lam = np.asarray(lam, dtype=complex)
    re, im = lam.real, lam.imag
    tau = im[..., None] * (_LEG_X + 1.0) / 2.0
    z = re[..., None] + 1j * tau
    leg = np.sum(_LEG_W * np.exp(-0.5 * z * z), axis=-1) * im / 2.0 / SQRT2PI
    return _ndtr(re) + 1j * leg


def _line_coefficients(cell: ConeCell2D, rho: float, lr: LineRestriction):
    """Axis index and the affine inner limit  slope * s + icpt + cprime * z  (or None)."""
    axis = _facet_axis(cell, lr.N)
    others, p, q = _frame(cell, axis)
    sc = math.sqrt(1.0 - rho * rho)
    base = (cell.offsets - rho * lr.c * (cell.normals @ lr.N)) / sc
    dz = -rho * (cell.normals @ lr.w) / sc  # d(offset)/dz
    if not others:
        return axis, base, None
    if len(others) > 1:
        raise DomainError("complex continuation is implemented for cells with at most two constraints")
    o = others[0]
    if abs(q[0]) < 1e-13:
        return axis, base, None
    kind = "upper" if q[0] > 0 else "lower"
    return axis, base, (kind, -p[0] / q[0], base[o] / q[0], dz[o] / q[0])


def growth_constant(cell: ConeCell2D, rho: float, lr: LineRestriction) -> float:
    """Constant C with |f(z)| <= 1 + C |Im z| exp(C (Im z)^2 / 2) for f(z) = T_rho 1_cell(c N + z w).

    The inner limit moves with slope c' in z; C = max(|c'|, c'^2) makes the bound
    hold for every c', not only |c'| <= 1.
    """
    _, _, line = _line_coefficients(cell, rho, lr)
    if line is None:
        return 0.0
    cp = abs(line[3])
    return max(cp, cp * cp)


def complex_line_eval(cell: ConeCell2D, rho: float, lr: LineRestriction, z,
                      order: int = 16, panels: int = 8):
    """Holomorphic extension of t -> T_rho 1_cell(c N + t w) to complex t."""
    if not (-1.0 < rho < 1.0) or rho == 0.0:
        raise DomainError("rho must lie in (-1, 0) or (0, 1)")
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z.imag) > MAX_IMAG):
        raise AccuracyError(f"|Im z| > {MAX_IMAG} is outside the validated window")
    axis, base, line = _line_coefficients(cell, rho, lr)
    lo = max(-base[axis], -RADIUS)
    hi = RADIUS
    if line is None:
        # the other constraint (if any) is parallel to the line, so nothing depends on z
        x_real = lr.point(z.real.ravel())
        val = t_rho_cone2d(cell, rho, x_real, order, panels, axis=axis)
        return np.asarray(val, dtype=complex).reshape(z.shape)[()]
    kind, slope, icpt, cprime = line
    if lo >= hi:
        return np.zeros(z.shape, dtype=complex)[()]
    s_nodes, s_w = gauss_legendre_panels(lo, hi, order, panels)
    lam = slope * s_nodes[None, :] + icpt + cprime * z.ravel()[:, None]
    inner = complex_normal_cdf(lam) if kind == "upper" else 1.0 - complex_normal_cdf(lam)
    val = np.sum(s_w * std_normal_pdf(s_nodes) * inner, axis=1)
    return val.reshape(z.shape)[()]


def complex_line_difference(p: FlatPartition, lr: LineRestriction, rho: float, z, **kw):
    _check_line(p, lr, rho)
    i, j = lr.pair
    return complex_line_eval(cone_cell(p, i), rho, lr, z, **kw) - complex_line_eval(cone_cell(p, j), rho, lr, z, **kw)
