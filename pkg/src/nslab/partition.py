"""Flat, standard-simplex, slab and locally perturbed partitions of R^n.

Cells are indexed from 0. A flat partition with shift ``y`` and directions ``y_i``
puts ``x`` in cell ``argmax_i <x - y, y_i>``; exact ties go to the lowest index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq, linprog

from . import _mc
from .gaussian import (
    CorrelatedGaussianModel,
    DomainError,
    RngStream,
    bivariate_normal_cdf,
    gauss_legendre_panels,
    std_normal_cdf,
    std_normal_pdf,
)


def _as_vector(v, n: Optional[int] = None) -> np.ndarray:
    arr = np.array(v, dtype=float).reshape(-1)
    if n is not None and arr.shape != (n,):
        raise DomainError(f"expected a vector of length {n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("vector entries must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class FlatPartition:
    shift: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        dirs = np.array(self.directions, dtype=float)
        if dirs.ndim != 2 or dirs.shape[0] < 2:
            raise DomainError("directions must be a (k, n) array with k >= 2")
        k, n = dirs.shape
        if k > n + 1:
            raise DomainError(f"a flat partition of R^{n} has at most {n + 1} cells, got {k}")
        shift = _as_vector(self.shift, n)
        if not np.all(np.isfinite(dirs)):
            raise DomainError("directions must be finite")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(norms == 0):
            raise DomainError("directions must be nonzero")
        unit = dirs / norms[:, None]
        for i in range(k):
            for j in range(i + 1, k):
                if np.max(np.abs(unit[i] - unit[j])) <= 1e-12:
                    raise DomainError(f"direction {j} is a positive multiple of direction {i}")
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "directions", dirs)
        shift.setflags(write=False)
        dirs.setflags(write=False)

    @property
    def n(self) -> int:
        return self.directions.shape[1]

    @property
    def k(self) -> int:
        return self.directions.shape[0]

    @property
    def base(self) -> "FlatPartition":
        return self

    def scores(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - self.shift) @ self.directions.T

    def labels(self, x) -> np.ndarray:
        return np.argmax(self.scores(np.atleast_2d(x)), axis=1)

    def to_json(self) -> dict:
        return {"n": self.n, "k": self.k, "shift": self.shift.tolist(),
                "directions": self.directions.tolist(), "patches": []}


@dataclass(frozen=True)
class StandardSimplexSpec:
    n: int
    shift: Optional[Sequence[float]] = None


def make_standard_simplex(spec: StandardSimplexSpec) -> FlatPartition:
    """k = n + 1 unit directions with pairwise inner products -1/n."""
    n = spec.n
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif n == 2:
        ang = 2 * math.pi * np.arange(3) / 3
        dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    else:
        k = n + 1
        centred = np.eye(k) - 1.0 / k
        # orthonormal basis of the sum-zero hyperplane in R^k
        q, _ = np.linalg.qr(centred[:, :n])
        dirs = centred @ q
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    shift = np.zeros(n) if spec.shift is None else spec.shift
    return FlatPartition(shift=shift, directions=dirs)


@dataclass(frozen=True)
class FacetFrame:
    """Shared boundary of cells i and j of a planar flat partition.

    The hyperplane is ``<x, normal> = offset`` with ``normal`` the exterior normal of
    cell i. Points on it are ``offset * normal + t * direction`` and the shared facet
    is ``t >= t_apex`` (the whole line when ``t_apex`` is -inf).
    """

    pair: tuple
    normal: np.ndarray
    offset: float
    direction: np.ndarray
    t_apex: float

    def point(self, t, s=0.0) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return (self.offset + s)[..., None] * self.normal + t[..., None] * self.direction

    def local(self, x):
        """(t, s) coordinates; s is the signed distance past the hyperplane into cell j."""
        x = np.asarray(x, dtype=float)
        return x @ self.direction, x @ self.normal - self.offset


def facet_adjacent(p: FlatPartition, i: int, j: int, tol: float = 1e-9) -> bool:
    """True when cells i and j share an (n-1)-dimensional face.

    Solved as a small LP: maximise the margin by which i and j beat every other
    direction on the hyperplane <z, y_i - y_j> = 0, |z| <= 1.
    """
    _check_pair(p, i, j)
    others = [q for q in range(p.k) if q not in (i, j)]
    if not others:
        return True
    d = p.directions
    n = p.n
    c = np.zeros(n + 1)
    c[-1] = -1.0
    a_eq = np.append(d[i] - d[j], 0.0)[None, :]
    a_ub = np.array([np.append(-(d[i] - d[q]), 1.0) for q in others])
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(len(others)), A_eq=a_eq, b_eq=[0.0],
                  bounds=[(-1, 1)] * n + [(None, 1)], method="highs")
    return bool(res.status == 0 and -res.fun > tol)


def _check_pair(p, i, j):
    if not (0 <= i < p.k and 0 <= j < p.k) or i == j:
        raise DomainError(f"invalid cell pair ({i}, {j}) for k={p.k}")


def facet_frame(p: FlatPartition, i: int, j: int) -> FacetFrame:
    p = p.base
    if p.n != 2:
        raise DomainError("facet frames are implemented for planar partitions only")
    _check_pair(p, i, j)
    diff = p.directions[j] - p.directions[i]
    normal = diff / np.linalg.norm(diff)
    offset = float(p.shift @ normal)
    d = np.array([-normal[1], normal[0]])
    others = [q for q in range(p.k) if q not in (i, j)]
    good = [sgn for sgn in (1.0, -1.0)
            if all(sgn * (d @ (p.directions[i] - p.directions[q])) > 1e-12 for q in others)]
    if not good:
        raise DomainError(f"cells {i} and {j} do not share a facet")
    w = good[0] * d
    t_apex = -math.inf if len(good) == 2 else float(p.shift @ w)
    return FacetFrame(pair=(i, j), normal=normal, offset=offset, direction=w, t_apex=t_apex)


def adjacent_pairs(p: FlatPartition) -> list:
    return [(i, j) for i in range(p.k) for j in range(i + 1, p.k) if facet_adjacent(p, i, j)]


# --- bump patches -------------------------------------------------------------

def bump_profile(u):
    """C-infinity bump exp(1 - 1/(1 - u^2)) on (-1, 1), zero outside; peak value 1."""
    u = np.asarray(u, dtype=float)
    out = np.zeros(u.shape)
    inside = np.abs(u) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


PROFILES = {"bump": bump_profile}


@dataclass(frozen=True)
class BumpPatch:
    """Region ``|t - center_t| <= half_width, 0 <= sign * s <= height * profile``.

    ``sign=+1`` hands that region from cell j to cell i of ``facet=(i, j)``;
    ``sign=-1`` hands it from i to j.
    """

    facet: tuple
    center_t: float
    half_width: float
    height: float
    sign: int = 1
    profile: str = "bump"

    def __post_init__(self):
        object.__setattr__(self, "facet", tuple(int(v) for v in self.facet))
        if self.half_width <= 0 or self.height <= 0:
            raise DomainError("patch half_width and height must be positive")
        if self.sign not in (1, -1):
            raise DomainError("patch sign must be +1 or -1")
        if self.profile not in PROFILES:
            raise DomainError(f"unknown profile {self.profile!r}")

    def shape(self, t) -> np.ndarray:
        return self.height * PROFILES[self.profile]((np.asarray(t, float) - self.center_t) / self.half_width)

    @property
    def support(self) -> tuple:
        return (self.center_t - self.half_width, self.center_t + self.half_width)

    def to_json(self) -> dict:
        return {"facet": list(self.facet), "center_t": self.center_t, "half_width": self.half_width,
                "height": self.height, "sign": self.sign, "profile": self.profile}


def _supports_overlap(a: BumpPatch, b: BumpPatch) -> bool:
    return a.facet == b.facet and a.support[0] < b.support[1] and b.support[0] < a.support[1]


def patch_area(frame: FacetFrame, patch: BumpPatch, order: int = 32, panels: int = 8) -> float:
    """Exact Gaussian measure of the patch region (1D quadrature along the facet)."""
    lo, hi = patch.support
    t, w = gauss_legendre_panels(lo, hi, order, panels)
    prof = patch.shape(t)
    c = frame.offset
    if patch.sign > 0:
        strip = std_normal_cdf(c + prof) - std_normal_cdf(c)
    else:
        strip = std_normal_cdf(c) - std_normal_cdf(c - prof)
    return float(np.sum(w * std_normal_pdf(t) * strip))


def patch_area_first_order(frame: FacetFrame, patch: BumpPatch, order: int = 32, panels: int = 8) -> float:
    """Linearised area: integral of profile times the Gaussian density on the facet."""
    lo, hi = patch.support
    t, w = gauss_legendre_panels(lo, hi, order, panels)
    return float(std_normal_pdf(frame.offset) * np.sum(w * std_normal_pdf(t) * patch.shape(t)))


@dataclass(frozen=True, eq=False)
class PerturbedPartition:
    base: FlatPartition
    patches: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.base.n != 2:
            raise DomainError("perturbed partitions are implemented for n = 2 only")
        patches = tuple(self.patches)
        object.__setattr__(self, "patches", patches)
        for a in range(len(patches)):
            for b in range(a + 1, len(patches)):
                if _supports_overlap(patches[a], patches[b]):
                    raise DomainError("patch supports on the same facet overlap")
        frames = {}
        for patch in patches:
            if patch.facet not in frames:
                frames[patch.facet] = facet_frame(self.base, *patch.facet)
            lo, _ = patch.support
            if lo < frames[patch.facet].t_apex:
                raise DomainError("patch support extends past the apex of its facet")
        object.__setattr__(self, "_frames", frames)

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def k(self) -> int:
        return self.base.k

    def frame(self, facet) -> FacetFrame:
        return self._frames[tuple(facet)]

    def labels(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = self.base.labels(x)
        for patch in self.patches:
            inside = self.patch_mask(patch, x)
            i, j = patch.facet
            src, dst = (j, i) if patch.sign > 0 else (i, j)
            flip = inside & (out == src)
            out[flip] = dst
        return out

    def patch_mask(self, patch: BumpPatch, x) -> np.ndarray:
        t, s = self.frame(patch.facet).local(x)
        lo, hi = patch.support
        mask = (t > lo) & (t < hi)
        res = np.zeros(t.shape, dtype=bool)
        if np.any(mask):
            ss = patch.sign * s[mask]
            res[mask] = (ss >= 0) & (ss <= patch.shape(t[mask]))
        return res

    def net_transfer(self, facet) -> float:
        """Signed Gaussian mass moved from cell j to cell i across ``facet``."""
        frame = self.frame(facet)
        return sum(p.sign * patch_area(frame, p) for p in self.patches if p.facet == tuple(facet))

    def to_json(self) -> dict:
        doc = self.base.to_json()
        doc["patches"] = [p.to_json() for p in self.patches]
        return doc


@dataclass(frozen=True, eq=False)
class SlabPartition:
    """Cells are consecutive intervals of ``<x, normal>`` cut at sorted ``cuts``.

    Cell m is ``cuts[m-1] < <x, normal> <= cuts[m]``; equal cuts give empty cells.
    """

    normal: np.ndarray
    cuts: np.ndarray

    def __post_init__(self):
        u = _as_vector(self.normal)
        if np.linalg.norm(u) == 0:
            raise DomainError("slab normal must be nonzero")
        u = u / np.linalg.norm(u)
        cuts = np.array(self.cuts, dtype=float).reshape(-1)
        if np.any(np.diff(cuts) < 0):
            raise DomainError("slab cuts must be nondecreasing")
        object.__setattr__(self, "normal", u)
        object.__setattr__(self, "cuts", cuts)

    @property
    def n(self) -> int:
        return self.normal.shape[0]

    @property
    def k(self) -> int:
        return self.cuts.shape[0] + 1

    @property
    def bounds(self) -> list:
        edges = np.concatenate([[-np.inf], self.cuts, [np.inf]])
        return list(zip(edges[:-1], edges[1:]))

    def labels(self, x) -> np.ndarray:
        proj = np.atleast_2d(np.asarray(x, float)) @ self.normal
        return np.searchsorted(self.cuts, proj, side="left")

    def to_json(self) -> dict:
        return {"kind": "slab", "n": self.n, "k": self.k, "normal": self.normal.tolist(),
                "cuts": self.cuts.tolist()}


def classify(p, x):
    """Cell index of a point (int) or of each row of an (m, n) array."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("classify requires finite points")
    out = p.labels(x)
    return int(out[0]) if x.ndim == 1 else out


# --- volumes -----------------------------------------------------------------

def halfspace_volume(a_offset: float) -> float:
    """gamma_n of {<x, u> <= a} for a unit vector u."""
    return std_normal_cdf(a_offset)


def cell_constraints(p: FlatPartition, i: int):
    """Unit normals u_m and offsets b_m with cell i = {x: <x, u_m> <= b_m}."""
    p = p.base
    rows = []
    for j in range(p.k):
        if j == i:
            continue
        diff = p.directions[j] - p.directions[i]
        rows.append(diff / np.linalg.norm(diff))
    u = np.array(rows)
    return u, u @ p.shift


def exact_volumes(p: FlatPartition) -> np.ndarray:
    """Closed-form cell measures: slabs in any dimension, flat partitions of R^2 via the bivariate normal CDF."""
    if isinstance(p, SlabPartition):
        return np.diff(np.concatenate([[0.0], std_normal_cdf(p.cuts), [1.0]]))
    p = p.base
    if p.n != 2:
        raise DomainError("exact volumes are implemented for n = 2 only")
    vols = np.empty(p.k)
    for i in range(p.k):
        u, b = cell_constraints(p, i)
        if len(b) == 1:
            vols[i] = std_normal_cdf(b[0])
        else:
            r = float(np.clip(u[0] @ u[1], -1.0, 1.0))
            if abs(r) >= 1.0 - 1e-12:
                # parallel constraints: intersection of two half-planes with (anti)parallel normals
                vols[i] = std_normal_cdf(min(b)) if r > 0 else max(0.0, std_normal_cdf(b[0]) - std_normal_cdf(-b[1]))
            else:
                vols[i] = bivariate_normal_cdf(b[0], b[1], r)
    return vols


def estimate_volumes(p, model: CorrelatedGaussianModel, samples: int, rng: RngStream):
    """Monte Carlo cell measures and their standard errors."""
    if samples < 1000:
        raise DomainError("estimate_volumes needs at least 1000 samples")
    if p.n != model.n:
        raise DomainError("partition and model dimensions differ")

    def work(size, gen):
        x = gen.standard_normal((size, model.n))
        return np.bincount(p.labels(x), minlength=p.k)

    counts = np.sum(_mc.run_chunks(work, samples, rng), axis=0)
    a = counts / samples
    return a, np.sqrt(a * (1 - a) / samples)


def shifted_simplex(volume_first: float) -> FlatPartition:
    """Planar standard simplex shifted along -y_1 so that cell 0 has the given measure.

    The other two cells share the remaining mass equally by symmetry.
    """
    if not (0.0 < volume_first < 1.0):
        raise DomainError("volume must lie in (0, 1)")
    centred = make_standard_simplex(StandardSimplexSpec(2))
    y1 = centred.directions[0]

    def excess(s):
        return exact_volumes(FlatPartition(-s * y1, centred.directions))[0] - volume_first

    s = brentq(excess, -20.0, 20.0, xtol=1e-14)
    return FlatPartition(-s * y1, centred.directions)


# --- serialisation -----------------------------------------------------------

def partition_from_json(doc):
    if isinstance(doc, str):
        doc = json.loads(doc)
    if doc.get("kind") == "slab":
        return SlabPartition(normal=doc["normal"], cuts=doc["cuts"])
    base = FlatPartition(shift=doc["shift"], directions=doc["directions"])
    if "n" in doc and doc["n"] != base.n or "k" in doc and doc["k"] != base.k:
        raise DomainError("declared n/k disagree with shift/directions")
    patches = doc.get("patches") or []
    if not patches:
        return base
    return PerturbedPartition(base, tuple(BumpPatch(**{**p, "facet": tuple(p["facet"])}) for p in patches))


def partition_to_json(p) -> dict:
    return p.to_json()
