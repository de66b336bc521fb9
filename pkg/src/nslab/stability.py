"""Gaussian noise stability of partitions: Monte Carlo, quadrature and closed form."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _mc
from .gaussian import (
    CorrelatedGaussianModel,
    DomainError,
    RngStream,
    bivariate_normal_cdf,
    gauss_legendre_panels,
    std_normal_pdf,
)
from .ou import RADIUS, LineRestriction, _frame, _single_bound, cone_cell, t_rho_cone2d, ConeCell2D
from .partition import (
    BumpPatch,
    FacetFrame,
    FlatPartition,
    PerturbedPartition,
    SlabPartition,
    facet_adjacent,
    facet_frame,
    patch_area_first_order,
)


def partition_digest(p) -> str:
    doc = json.dumps(p.to_json(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class StabilityEstimate:
    value: float
    std_error: float
    method: str
    samples_or_order: int
    seed: Optional[RngStream] = None
    partition_digest: str = ""

    def to_json(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "method": self.method,
                "samples_or_order": self.samples_or_order,
                "seed": self.seed.to_json() if self.seed else None,
                "partition_digest": self.partition_digest}


def _draw_pairs(gen: np.random.Generator, size: int, model: CorrelatedGaussianModel):
    xz = gen.standard_normal((size, 2 * model.n))
    x = xz[:, : model.n]
    return x, model.rho * x + model.noise_scale * xz[:, model.n:]


def _check_mc(samples, model, parts):
    if samples < 1000:
        raise DomainError("Monte Carlo estimates need at least 1000 samples")
    for p in parts:
        if p.n != model.n:
            raise DomainError("partition and model dimensions differ")


def stability_mc(p, model: CorrelatedGaussianModel, samples: int, rng: RngStream) -> StabilityEstimate:
    """Fraction of correlated pairs (X, Y) that land in the same cell."""
    _check_mc(samples, model, [p])

    def work(size, gen):
        x, y = _draw_pairs(gen, size, model)
        return int(np.count_nonzero(p.labels(x) == p.labels(y)))

    hits = sum(_mc.run_chunks(work, samples, rng))
    v = hits / samples
    return StabilityEstimate(v, math.sqrt(v * (1 - v) / samples), "mc", samples, rng, partition_digest(p))


@dataclass
class CrnComparison:
    """Stabilities of several partitions on one shared stream of pairs.

    ``diffs[m]`` is S(partitions[m]) - S(partitions[reference]) with its paired
    standard error.
    """

    values: np.ndarray
    std_errors: np.ndarray
    diffs: np.ndarray
    diff_std_errors: np.ndarray
    samples: int
    reference: int = 0
    hits: np.ndarray = field(default=None, repr=False)


def compare_mc(partitions: Sequence, model: CorrelatedGaussianModel, samples: int, rng: RngStream,
               reference: int = 0) -> CrnComparison:
    """Common-random-number comparison: every partition sees identical (X, Y) draws."""
    _check_mc(samples, model, partitions)
    m = len(partitions)

    def work(size, gen):
        x, y = _draw_pairs(gen, size, model)
        agree = np.empty((m, size), dtype=np.int8)
        for a, p in enumerate(partitions):
            agree[a] = p.labels(x) == p.labels(y)
        d = agree.astype(np.int64) - agree[reference]
        return agree.sum(axis=1, dtype=np.int64), d.sum(axis=1), (d * d).sum(axis=1)

    parts = _mc.run_chunks(work, samples, rng)
    hits = np.sum([r[0] for r in parts], axis=0)
    dsum = np.sum([r[1] for r in parts], axis=0)
    d2sum = np.sum([r[2] for r in parts], axis=0)
    values = hits / samples
    dmean = dsum / samples
    dvar = np.maximum(d2sum / samples - dmean ** 2, 0.0)
    return CrnComparison(values=values, std_errors=np.sqrt(values * (1 - values) / samples),
                         diffs=dmean, diff_std_errors=np.sqrt(dvar / samples), samples=samples,
                         reference=reference, hits=hits)


# --- quadrature ----------------------------------------------------------------

def _axis_nodes(order: int):
    panels = max(1, math.ceil(order / 20))
    return math.ceil(order / panels), panels


def _cell_self_integral(cell: ConeCell2D, rho: float, order: int) -> float:
    """int_cell T_rho 1_cell dgamma_2, in the cell's own (s, r) frame."""
    per, panels = _axis_nodes(order)
    others, p, q = _frame(cell, 0)
    e1 = -cell.normals[0]
    e2 = np.array([-e1[1], e1[0]])
    b = cell.offsets
    if others:
        lo, hi, kind, slope, icpt = _single_bound(p[0], q[0], np.array([b[0]]), np.array([b[others[0]]]))
    else:
        lo, hi, kind, slope, icpt = _single_bound(None, None, np.array([b[0]]), None)
    lo, hi = max(float(lo[0]), -RADIUS), min(float(hi[0]), RADIUS)
    if lo >= hi:
        return 0.0
    s, ws = gauss_legendre_panels(lo, hi, per, panels)
    if kind is None:
        r_lo, r_hi = np.full(s.shape, -RADIUS), np.full(s.shape, RADIUS)
    elif kind == "lower":
        r_lo, r_hi = np.clip(slope * s + icpt[0], -RADIUS, RADIUS), np.full(s.shape, RADIUS)
    else:
        r_lo, r_hi = np.full(s.shape, -RADIUS), np.clip(slope * s + icpt[0], -RADIUS, RADIUS)
    r, wr = gauss_legendre_panels(r_lo, r_hi, per, panels)
    pts = s[:, None, None] * e1 + r[:, :, None] * e2
    tv = t_rho_cone2d(cell, rho, pts.reshape(-1, 2)).reshape(r.shape)
    inner = np.sum(wr * std_normal_pdf(r) * tv, axis=1)
    return float(np.sum(ws * std_normal_pdf(s) * inner))


def stability_quadrature(p, model: CorrelatedGaussianModel, order: int = 80) -> StabilityEstimate:
    """sum_i int 1_{A_i} T_rho 1_{A_i} dgamma_2 for a planar flat partition.

    Each cell is integrated in its own coordinates with composite Gauss-Legendre
    rules on the Gaussian-truncated cell, using ``order`` nodes per axis.
    """
    if not isinstance(p, FlatPartition):
        raise DomainError("quadrature is available for flat partitions only; use stability_mc")
    if p.n != 2 or model.n != 2:
        raise DomainError("quadrature is implemented for n = 2")
    if model.rho == 0.0:
        raise DomainError("quadrature path requires rho != 0")
    total = 0.0
    for i in range(p.k):
        try:
            cell = cone_cell(p, i)
        except DomainError:
            continue  # empty interior, zero measure
        total += _cell_self_integral(cell, model.rho, order)
    return StabilityEstimate(float(total), 0.0, "quadrature", order, None, partition_digest(p))


# --- bilinear ------------------------------------------------------------------

def _rect_prob(a, b, rho):
    (a1, a2), (b1, b2) = a, b
    if a1 >= a2 or b1 >= b2:
        return 0.0
    f = bivariate_normal_cdf
    return float(f(a2, b2, rho) - f(a1, b2, rho) - f(a2, b1, rho) + f(a1, b1, rho))


def _closed_form_ok(pA, pB) -> bool:
    return (isinstance(pA, SlabPartition) and isinstance(pB, SlabPartition)
            and abs(abs(pA.normal @ pB.normal) - 1.0) < 1e-12)


def stability_bilinear(pA, pB, model: CorrelatedGaussianModel, method: str = "auto",
                       samples: int = 10**6, rng: Optional[RngStream] = None) -> StabilityEstimate:
    """sum_i int 1_{A_i} T_rho 1_{B_i} dgamma_n, i.e. sum_i P(X in A_i, Y in B_i).

    ``closed-form`` needs slab partitions with parallel normals; ``auto`` uses it when
    available and Monte Carlo otherwise.
    """
    if pA.n != pB.n or pA.n != model.n:
        raise DomainError("partitions and model must share the dimension")
    if pA.k != pB.k:
        raise DomainError("bilinear stability pairs cells by index; k must match")
    if method == "auto":
        method = "closed-form" if _closed_form_ok(pA, pB) else "mc"
    digest = partition_digest(pA) + ":" + partition_digest(pB)
    if method == "closed-form":
        if not _closed_form_ok(pA, pB):
            raise DomainError("closed form requires slab partitions with parallel normals")
        r = model.rho * float(np.sign(pA.normal @ pB.normal))
        total = sum(_rect_prob(ia, ib, r) for ia, ib in zip(pA.bounds, pB.bounds))
        return StabilityEstimate(total, 0.0, "closed-form", 0, None, digest)
    if method != "mc":
        raise DomainError(f"unknown method {method!r}")
    if rng is None:
        raise DomainError("Monte Carlo needs an RngStream")
    _check_mc(samples, model, [pA, pB])

    def work(size, gen):
        x, y = _draw_pairs(gen, size, model)
        return int(np.count_nonzero(pA.labels(x) == pB.labels(y)))

    v = sum(_mc.run_chunks(work, samples, rng)) / samples
    return StabilityEstimate(v, math.sqrt(v * (1 - v) / samples), "mc", samples, rng, digest)


# --- first variation ------------------------------------------------------------

def facet_difference(p: FlatPartition, frame: FacetFrame, rho: float, t):
    """T_rho(1_{A_i} - 1_{A_j}) at the facet-frame points ``offset N + t direction``."""
    i, j = frame.pair
    pts = frame.point(np.asarray(t, dtype=float))
    flat = pts.reshape(-1, 2)
    vals = []
    for idx in (i, j):
        cell = cone_cell(p, idx)
        axis = next(m for m, u in enumerate(cell.normals) if abs(abs(u @ frame.normal) - 1) < 1e-10)
        vals.append(t_rho_cone2d(cell, rho, flat, axis=axis))
    return (vals[0] - vals[1]).reshape(pts.shape[:-1])


def first_variation(p: FlatPartition, lr: LineRestriction, phi1: BumpPatch, phi2: BumpPatch, rho: float,
                    order: int = 32, panels: int = 8) -> float:
    """d/d(eps) S_rho when the facet of ``lr`` moves by eps (phi1 - phi2) along its normal.

    phi1 pushes cell i outward (into j) and phi2 pulls it back. The two bumps must
    carry equal first-order Gaussian mass so the motion preserves volumes.
    """
    if not isinstance(p, FlatPartition) or p.n != 2:
        raise DomainError("first variation is computed for planar flat partitions")
    if rho == 0.0 or not (-1.0 < rho < 1.0):
        raise DomainError("rho must lie in (-1, 0) or (0, 1)")
    if not facet_adjacent(p, *lr.pair):
        raise DomainError(f"cells {lr.pair} are not facet-adjacent")
    for ph in (phi1, phi2):
        if tuple(ph.facet) != tuple(lr.pair):
            raise DomainError("bumps must sit on the facet of the line restriction")
    if phi1 == phi2:
        return 0.0
    if phi1.support[0] < phi2.support[1] and phi2.support[0] < phi1.support[1]:
        raise DomainError("bump supports overlap")
    frame = facet_frame(p, *lr.pair)
    m1 = patch_area_first_order(frame, phi1, order, panels)
    m2 = patch_area_first_order(frame, phi2, order, panels)
    if abs(m1 - m2) > 1e-8:
        raise DomainError(f"bumps are not volume matched: {m1:.3e} vs {m2:.3e}")
    total = 0.0
    dens = std_normal_pdf(frame.offset)
    for ph, sgn in ((phi1, 1.0), (phi2, -1.0)):
        t, w = gauss_legendre_panels(*ph.support, order, panels)
        h = facet_difference(p, frame, rho, t)
        total += sgn * np.sum(w * h * ph.shape(t) * std_normal_pdf(t)) * dens
    return float(2.0 * total)


# --- localised CRN difference -------------------------------------------------------
#
# Two partitions sharing a flat base differ only on the union P of patch regions.
# With D(x, y) the change in the same-cell indicator, exchangeability of (X, Y) gives
#   S(B) - S(A) = E[D] = E[1_P(X) D (2 - 1_P(Y))].
# Conditionally on X the Y-expectation is available in closed form (base-cell T_rho
# values plus Gaussian masses of the patch regions), which leaves a smooth integrand
# over the small set P.

@dataclass(frozen=True, eq=False)
class _Region:
    frame: FacetFrame
    patch: BumpPatch
    in_a: bool
    in_b: bool

    @property
    def src(self) -> int:
        i, j = self.patch.facet
        return j if self.patch.sign > 0 else i

    @property
    def dst(self) -> int:
        i, j = self.patch.facet
        return i if self.patch.sign > 0 else j

    @property
    def label_a(self) -> int:
        return self.dst if self.in_a else self.src

    @property
    def label_b(self) -> int:
        return self.dst if self.in_b else self.src

    @property
    def box(self) -> tuple:
        h = self.patch.height
        return self.patch.support, ((0.0, h) if self.patch.sign > 0 else (-h, 0.0))

    def contains(self, x) -> np.ndarray:
        t, s = self.frame.local(x)
        lo, hi = self.patch.support
        out = (t > lo) & (t < hi)
        if np.any(out):
            ss = self.patch.sign * s[out]
            out[out] = (ss >= 0) & (ss <= self.patch.shape(t[out]))
        return out


def _regions(pA, pB) -> list:
    for part in (pA, pB):
        if not isinstance(part, (FlatPartition, PerturbedPartition)) or part.n != 2:
            raise DomainError("localised differences need planar flat or perturbed partitions")
    if pA.base.to_json() != pB.base.to_json():
        raise DomainError("partitions must share the same flat base")
    base = pA.base
    regions = []
    keyed = {}
    for tag, part in (("a", pA), ("b", pB)):
        for patch in getattr(part, "patches", ()):
            key = json.dumps(patch.to_json(), sort_keys=True)
            if key in keyed:
                keyed[key][tag] = True
                continue
            keyed[key] = {"patch": patch, "a": tag == "a", "b": tag == "b"}
    for entry in keyed.values():
        patch = entry["patch"]
        regions.append(_Region(facet_frame(base, *patch.facet), patch, entry["a"], entry["b"]))
    for m, r in enumerate(regions):
        for q in regions[m + 1:]:
            same_side = r.patch.facet == q.patch.facet and r.patch.sign == q.patch.sign
            (a0, a1), (b0, b1) = r.patch.support, q.patch.support
            if same_side and a0 < b1 and b0 < a1:
                raise DomainError("patch regions of the two partitions overlap")
    return regions


def _region_mass_given(region: _Region, rho: float, x, order: int = 24, panels: int = 4) -> np.ndarray:
    """P(Y in region | X = x) for Y = rho x + sqrt(1 - rho^2) Z."""
    sig = math.sqrt(1.0 - rho * rho)
    fr, patch = region.frame, region.patch
    xt, xs = fr.local(x)
    xn = xs + fr.offset
    t, w = gauss_legendre_panels(*patch.support, order, panels)
    prof = patch.shape(t)
    mt = std_normal_pdf((t[None, :] - rho * xt[:, None]) / sig) / sig
    base = (fr.offset - rho * xn)[:, None] / sig
    if patch.sign > 0:
        strip = _ndtr_diff(base + prof[None, :] / sig, base)
    else:
        strip = _ndtr_diff(base, base - prof[None, :] / sig)
    return np.sum(w * mt * strip, axis=1)


def _ndtr_diff(hi, lo):
    from scipy.special import ndtr
    # both arguments are on the same side in practice; subtracting upper tails keeps precision
    return np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))


def _conditional_difference(region: _Region, regions: list, base: FlatPartition, rho: float, x,
                            cells: dict) -> np.ndarray:
    """x in ``region``: E[D (2 - 1_P(Y)) | X = x], P the regions owned by one side only."""
    masses = [_region_mass_given(r, rho, x) for r in regions]

    def t_part(label, use_a):
        if label not in cells:
            cells[label] = cone_cell(base, label)
        val = t_rho_cone2d(cells[label], rho, x, order=12, panels=4)
        for r, m in zip(regions, masses):
            if r.in_a if use_a else r.in_b:
                val = val + m * ((r.dst == label) - (r.src == label))
        return val

    la, lb = region.label_a, region.label_b
    out = 2.0 * (t_part(lb, False) - t_part(la, True))
    for r, m in zip(regions, masses):
        if r.in_a != r.in_b:
            out -= m * ((r.label_b == lb) - 1.0 * (r.label_a == la))
    return out


_CHEB_T, _CHEB_S = 18, 8


class _RegionInterpolant:
    """Tensor Chebyshev interpolant of the conditional difference on a region's box."""

    def __init__(self, region, regions, base, rho, cells):
        (t0, t1), (s0, s1) = region.box
        self.lo = np.array([t0, s0])
        self.hi = np.array([t1, s1])
        ut = np.cos(np.pi * (np.arange(_CHEB_T) + 0.5) / _CHEB_T)
        us = np.cos(np.pi * (np.arange(_CHEB_S) + 0.5) / _CHEB_S)
        gt, gs = np.meshgrid(ut, us, indexing="ij")
        t, s = self._from_unit(gt.ravel(), gs.ravel())
        vals = _conditional_difference(region, regions, base, rho, region.frame.point(t, s), cells)
        vt = np.polynomial.chebyshev.chebvander(ut, _CHEB_T - 1)
        vs = np.polynomial.chebyshev.chebvander(us, _CHEB_S - 1)
        self.coef = np.linalg.solve(vt, np.linalg.solve(vs, vals.reshape(_CHEB_T, _CHEB_S).T).T)
        self.region = region

    def _from_unit(self, ut, us):
        mid, half = (self.lo + self.hi) / 2, (self.hi - self.lo) / 2
        return mid[0] + half[0] * ut, mid[1] + half[1] * us

    def __call__(self, x) -> np.ndarray:
        t, s = self.region.frame.local(x)
        mid, half = (self.lo + self.hi) / 2, (self.hi - self.lo) / 2
        return np.polynomial.chebyshev.chebval2d((t - mid[0]) / half[0], (s - mid[1]) / half[1], self.coef)


def stability_difference_quadrature(pA, pB, rho: float, order: int = 24, panels: int = 4) -> float:
    """Deterministic S(pB) - S(pA) for partitions differing by bump patches (planar).

    Integrates the conditional difference over each patch region with Gauss-Legendre
    rules along and across the facet.
    """
    regions = _regions(pA, pB)
    base = pA.base
    cells = {}
    total = 0.0
    for r in regions:
        if r.in_a and r.in_b:
            continue
        t, wt = gauss_legendre_panels(*r.patch.support, order, panels)
        top = r.patch.shape(t)
        u, wu = np.polynomial.legendre.leggauss(12)
        s = r.patch.sign * top[:, None] * (u[None, :] + 1) / 2
        ws = wt[:, None] * top[:, None] * wu[None, :] / 2
        pts = r.frame.point(np.broadcast_to(t[:, None], s.shape), s).reshape(-1, 2)
        f = _conditional_difference(r, regions, base, rho, pts, cells)
        total += float(np.sum(ws.ravel() * np.prod(std_normal_pdf(pts), axis=1) * f))
    return total


def stability_difference_local(pA, pB, model: CorrelatedGaussianModel, samples: int,
                               rng: RngStream, conditional: bool = True) -> tuple:
    """S(pB) - S(pA) by Monte Carlo localised to the patch regions. Returns (value, SE).

    X is drawn by importance sampling from the patch bounding boxes and shared by
    both partitions. With ``conditional`` the Y-expectation given X is integrated
    exactly; otherwise Y = rho X + noise is sampled too.
    """
    if model.n != 2:
        raise DomainError("localised differences are planar")
    if samples < 1000:
        raise DomainError("Monte Carlo estimates need at least 1000 samples")
    all_regions = _regions(pA, pB)
    active = [r for r in all_regions if r.in_a != r.in_b]
    if not active:
        return 0.0, 0.0
    boxes = [r.box for r in active]
    areas = np.array([(b[0][1] - b[0][0]) * (b[1][1] - b[1][0]) for b in boxes])
    total_area = areas.sum()
    if conditional:
        cells = {}
        interp = [_RegionInterpolant(r, all_regions, pA.base, model.rho, cells) for r in active]

    def density_q(x):
        q = np.zeros(len(x))
        for r, ((t0, t1), (s0, s1)) in zip(active, boxes):
            t, s = r.frame.local(x)
            q += ((t >= t0) & (t <= t1) & (s >= s0) & (s <= s1)) / total_area
        return q

    def work(size, gen):
        pick = gen.choice(len(boxes), size=size, p=areas / total_area)
        u = gen.random((size, 2))
        x = np.empty((size, 2))
        for b, (r, ((t0, t1), (s0, s1))) in enumerate(zip(active, boxes)):
            sel = pick == b
            x[sel] = r.frame.point(t0 + (t1 - t0) * u[sel, 0], s0 + (s1 - s0) * u[sel, 1])
        dens = np.prod(std_normal_pdf(x), axis=1)
        term = np.zeros(size)
        if conditional:
            for b, r in enumerate(active):
                inside = r.contains(x)
                if np.any(inside):
                    term[inside] += interp[b](x[inside])
            term *= dens / np.maximum(density_q(x), 1e-300)
        else:
            z = gen.standard_normal((size, 2))
            y = model.rho * x + model.noise_scale * z
            in_x = np.zeros(size, dtype=bool)
            in_y = np.zeros(size, dtype=bool)
            for r in active:
                in_x |= r.contains(x)
                in_y |= r.contains(y)
            d = (pB.labels(x) == pB.labels(y)).astype(float) - (pA.labels(x) == pA.labels(y))
            term = np.where(in_x, dens / np.maximum(density_q(x), 1e-300), 0.0) * d * (2.0 - in_y)
        return term.sum(), (term * term).sum()

    parts = _mc.run_chunks(work, samples, rng)
    s1 = sum(r[0] for r in parts)
    s2 = sum(r[1] for r in parts)
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0)
    return float(mean), float(math.sqrt(var / samples))
