"""Volume-preserving bump perturbations of planar flat partitions that raise (or lower) S_rho."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from . import _mc
from .gaussian import CorrelatedGaussianModel, DomainError, RngStream, gauss_legendre_panels, std_normal_pdf
from .ou import LineRestriction, line_difference, line_restriction
from .partition import (
    BumpPatch,
    FacetFrame,
    FlatPartition,
    PerturbedPartition,
    adjacent_pairs,
    bump_profile,
    exact_volumes,
    facet_frame,
    patch_area,
)
from .stability import partition_digest, stability_difference_local

SCAN_RANGE = 50.0
SCAN_POINTS = 513
SPREAD_TOL = 1e-7
HALF_WIDTH = 0.25
DELTAS = (0.005, 0.01, 0.02, 0.04, 0.08)
# witnesses are searched where the Gaussian weight along the facet is not negligible
WINDOW = 4.0
WINDOW_POINTS = 161


@dataclass(frozen=True)
class FacetWitness:
    """Facet with the largest non-constancy of h = T_rho(1_{A_i} - 1_{A_j}) on it.

    ``t1``/``t2`` are facet-frame coordinates (unit speed along the facet): a bump
    pushing cell i outward at t1 and pulling it back at t2 raises S_rho to first
    order for rho > 0.
    """

    line: LineRestriction
    frame: FacetFrame
    t1: float
    t2: float
    spread: float
    spreads: dict = field(default_factory=dict)

    @property
    def facet(self) -> tuple:
        return self.frame.pair


def _frame_difference(p, lr: LineRestriction, frame: FacetFrame, rho: float, t):
    # lr.w is a positive multiple of frame.direction and both lines share the base point c N
    scale = float(np.linalg.norm(lr.w))
    return line_difference(p, lr, rho, np.asarray(t, float) / scale)


def _bump_moments(frame: FacetFrame, centers, half_width, values_at):
    """First-order mass and bump-weighted mean of h for unit-height bumps at ``centers``."""
    t, w = gauss_legendre_panels(centers - half_width, centers + half_width, 16, 2)
    prof = bump_profile((t - centers[:, None]) / half_width) * std_normal_pdf(t)
    mass = std_normal_pdf(frame.offset) * np.sum(w * prof, axis=1)
    h = values_at(t.ravel()).reshape(t.shape)
    return mass, np.sum(w * prof * h, axis=1) * std_normal_pdf(frame.offset) / mass


def _witness_on_facet(p, lr, frame, rho, half_width):
    lo = max(frame.t_apex, -WINDOW - half_width) + half_width + 1e-3
    hi = WINDOW
    if lo >= hi:
        return None
    centers = np.linspace(lo, hi, WINDOW_POINTS)
    mass, hbar = _bump_moments(frame, centers, half_width, lambda t: _frame_difference(p, lr, frame, rho, t))
    gain = 2.0 * np.minimum(mass[:, None], mass[None, :]) * (hbar[:, None] - hbar[None, :])
    apart = np.abs(centers[:, None] - centers[None, :]) >= 2 * half_width
    gain = np.where(apart, gain, -np.inf)
    a, b = np.unravel_index(np.argmax(gain), gain.shape)
    return float(gain[a, b]), float(centers[a]), float(centers[b])


def find_improving_facet(p: FlatPartition, rho: float, half_width: float = HALF_WIDTH) -> Optional[FacetWitness]:
    """Scan every facet for non-constant h; None when no facet shows spread above 1e-7.

    The spread is max - min of h on 513 points of [-50, 50]. On the facet with the
    largest spread the witness pair maximises the predicted first-order gain
    2 min(m1, m2) (hbar1 - hbar2) of two unit bumps, m the bump's Gaussian mass and
    hbar the bump-weighted mean of h.
    """
    if not isinstance(p, FlatPartition) or p.n != 2 or p.k != 3:
        raise DomainError("facet scan needs a planar flat partition with k = 3")
    if rho == 0.0 or not (-1.0 < rho < 1.0):
        raise DomainError("rho must lie in (-1, 0) or (0, 1)")
    pairs = adjacent_pairs(p)
    if not pairs:
        raise DomainError("no facet-adjacent cells")
    grid = np.linspace(-SCAN_RANGE, SCAN_RANGE, SCAN_POINTS)
    spreads = {}
    for i, j in pairs:
        h = line_difference(p, line_restriction(p, i, j), rho, grid)
        spreads[(i, j)] = float(np.max(h) - np.min(h))
    best = max(pairs, key=lambda pr: spreads[pr])
    if spreads[best] <= SPREAD_TOL:
        return None
    # among facets with real spread, prefer the one whose best witness gains most
    found = None
    for pr in pairs:
        if spreads[pr] <= SPREAD_TOL:
            continue
        lr = line_restriction(p, *pr)
        frame = facet_frame(p, *pr)
        w = _witness_on_facet(p, lr, frame, rho, half_width)
        if w is not None and w[0] > 0 and (found is None or w[0] > found[0]):
            found = (w[0], lr, frame, w[1], w[2])
    if found is None:
        return None
    _, lr, frame, t1, t2 = found
    return FacetWitness(line=lr, frame=frame, t1=t1, t2=t2, spread=spreads[frame.pair], spreads=spreads)


def build_perturbation(p: FlatPartition, facet, t1: float, t2: float, delta: float,
                       half_width: float = HALF_WIDTH) -> PerturbedPartition:
    """+1 bump of height ``delta`` at t1 and a -1 bump at t2 carrying the same Gaussian mass.

    A negative ``delta`` swaps the roles (cell i gives mass at t1 and takes it at t2).
    """
    if t1 == t2:
        raise DomainError("t1 and t2 must differ")
    if delta == 0 or not math.isfinite(delta):
        raise DomainError("delta must be finite and nonzero")
    facet = tuple(int(v) for v in facet)
    frame = facet_frame(p, *facet)
    gap = abs(t1 - t2)
    if gap < 2 * half_width:
        half_width = gap / 4
        if half_width < 1e-3:
            raise DomainError("bump centres are too close")
    sign = 1 if delta > 0 else -1
    first = BumpPatch(facet, t1, half_width, abs(delta), sign)
    target = patch_area(frame, first)

    def mismatch(height):
        return patch_area(frame, BumpPatch(facet, t2, half_width, height, -sign)) - target

    top = abs(delta)
    while mismatch(top) < 0:
        top *= 2.0
        if top > 1e3:
            raise DomainError("cannot match bump areas")
    h2 = brentq(mismatch, 1e-300, top, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    second = BumpPatch(facet, t2, half_width, h2, -sign)
    out = PerturbedPartition(p, (first, second))
    if abs(out.net_transfer(facet)) > 1e-8:
        raise DomainError("bump areas could not be matched to 1e-8")
    return out


def matched_unit_bumps(p: FlatPartition, facet, t1: float, t2: float, half_width: float = HALF_WIDTH):
    """Bumps (phi1, phi2) with phi1 of unit height and equal first-order Gaussian mass.

    These are the tangent direction of :func:`build_perturbation` as delta -> 0.
    """
    facet = tuple(int(v) for v in facet)
    frame = facet_frame(p, *facet)
    m, _ = _bump_moments(frame, np.array([t1, t2]), half_width, lambda t: np.zeros_like(t))
    return (BumpPatch(facet, t1, half_width, 1.0, 1),
            BumpPatch(facet, t2, half_width, float(m[0] / m[1]), -1))


@dataclass
class Trial:
    facet: tuple
    t1: float
    t2: float
    delta: float
    value: float
    std_error: float

    def to_json(self) -> dict:
        return {"facet": list(self.facet), "t1": self.t1, "t2": self.t2, "delta": self.delta,
                "value": self.value, "std_error": self.std_error}


@dataclass
class ImprovementReport:
    """Outcome of :func:`improve`. Trial values are S_rho(perturbed) - S_rho(input)."""

    input_digest: str
    rho: float
    trials: list
    best_index: Optional[int]
    seed: RngStream
    message: str = ""

    @property
    def best(self) -> Optional[Trial]:
        return None if self.best_index is None else self.trials[self.best_index]

    def to_json(self) -> dict:
        return {"input_digest": self.input_digest, "rho": self.rho,
                "trials": [t.to_json() for t in self.trials], "best_index": self.best_index,
                "seed": self.seed.to_json(), "message": self.message}


def improve(p: FlatPartition, rho: float, budget: int = len(DELTAS), samples: int = 10**7,
            rng: Optional[RngStream] = None, half_width: float = HALF_WIDTH):
    """Search the step-size menu at the witness facet for the best volume-preserving bump pair.

    The objective is +S_rho for rho > 0 and -S_rho for rho < 0. Each trial's
    difference is estimated with common random numbers on its own child stream.
    Returns (partition, report); the input comes back unchanged when no facet
    shows an improving direction.
    """
    rng = rng or RngStream(0)
    if budget < 1:
        raise DomainError("budget must be at least 1")
    digest = partition_digest(p)
    vols = exact_volumes(p)
    if np.max(vols) - np.min(vols) < 1e-12 and np.allclose(p.shift, 0.0):
        return p, ImprovementReport(digest, rho, [], None, rng, "no improving direction detected")
    wit = find_improving_facet(p, rho, half_width)
    if wit is None:
        return p, ImprovementReport(digest, rho, [], None, rng, "no improving direction detected")
    t1, t2 = (wit.t1, wit.t2) if rho > 0 else (wit.t2, wit.t1)
    model = CorrelatedGaussianModel(2, rho)
    deltas = [DELTAS[m % len(DELTAS)] for m in range(budget)]
    cands = [build_perturbation(p, wit.facet, t1, t2, d, half_width) for d in deltas]

    def run(m):
        return stability_difference_local(p, cands[m], model, samples, rng.child(m + 1))

    workers = min(_mc.worker_count(), budget)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            res = list(pool.map(run, range(budget)))
    else:
        res = [run(m) for m in range(budget)]
    trials = [Trial(wit.facet, t1, t2, d, v, se) for d, (v, se) in zip(deltas, res)]
    sgn = 1.0 if rho > 0 else -1.0
    best = max(range(budget), key=lambda m: (sgn * trials[m].value, -m))
    if sgn * trials[best].value <= 0:
        return p, ImprovementReport(digest, rho, trials, None, rng, "no trial improved the objective")
    return cands[best], ImprovementReport(digest, rho, trials, best, rng, "improved")
