"""Three-candidate elections: biased plurality, correlated vote pairs, and count-statistic competitors."""

from __future__ import annotations

import itertools
import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from . import _mc
from .gaussian import DomainError, RngStream
from .partition import FlatPartition, PerturbedPartition

LABELS = (1, 2, 3)
MAX_EXACT_N = 8


@dataclass(frozen=True)
class BiasedMeasure:
    """Vote law q = (1/3 + a/sqrt(n), 1/3 + b/sqrt(n), 1/3 - (a + b)/sqrt(n))."""

    n: int
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        q = self.q
        if np.any(q <= 0) or np.any(q >= 1):
            raise DomainError(f"vote probabilities {q} must lie in (0, 1)")

    @property
    def q(self) -> np.ndarray:
        r = 1.0 / math.sqrt(self.n)
        q = np.array([1 / 3 + self.alpha * r, 1 / 3 + self.beta * r, 0.0])
        q[2] = 1.0 - q[0] - q[1]
        return q

    @property
    def mean_shift(self) -> np.ndarray:
        """Asymptotic mean of the centred statistic (X_1, X_2)."""
        return np.array([self.alpha, self.beta], dtype=float)


@dataclass(frozen=True)
class CorrelatedPairLaw:
    """Coordinates agree with probability rho and are otherwise independent draws from q."""

    base: BiasedMeasure
    rho: float

    def __post_init__(self):
        if not (0.0 <= self.rho <= 1.0):
            raise DomainError("rho must lie in [0, 1]")

    @property
    def table(self) -> np.ndarray:
        q = self.base.q
        return self.rho * np.diag(q) + (1.0 - self.rho) * np.outer(q, q)

    @property
    def n(self) -> int:
        return self.base.n


# --- plurality and counts --------------------------------------------------------

def _check_words(words) -> np.ndarray:
    w = np.asarray(words)
    if w.size == 0:
        raise DomainError("a vote word needs at least one voter")
    if not np.issubdtype(w.dtype, np.integer):
        if not np.all(np.equal(np.mod(w, 1), 0)):
            raise DomainError("votes must be integers in {1, 2, 3}")
        w = w.astype(np.int64)
    if np.any((w < 1) | (w > 3)):
        raise DomainError("votes must be in {1, 2, 3}")
    return w


def vote_counts(words) -> np.ndarray:
    """Counts of each candidate; words have shape (..., n), the result (..., 3)."""
    w = _check_words(words)
    return np.stack([np.count_nonzero(w == a, axis=-1) for a in LABELS], axis=-1)


def plurality_from_counts(counts) -> np.ndarray:
    """Most frequent candidate; ties go to the lowest index. Labels are 1, 2, 3."""
    return np.argmax(np.asarray(counts), axis=-1) + 1


def plurality(votes):
    lab = plurality_from_counts(vote_counts(votes))
    return int(lab) if np.ndim(lab) == 0 else lab


# --- statistic embedding -----------------------------------------------------------

def indicator_covariance() -> np.ndarray:
    """Cov(1(w = i), 1(w = j)), i, j in {1, 2}, for one uniform vote, by enumeration."""
    outcomes = np.eye(3)[:, :2]
    mean = outcomes.mean(axis=0)
    return (outcomes - mean).T @ (outcomes - mean) / 3.0


@dataclass(frozen=True, eq=False)
class StatisticEmbedding:
    """(X_1, X_2) = n^{-1/2} (N_i - n/3), whitened and re-centred at the biased mean.

    ``whiten(counts)`` returns W (X - mu) with W = Cov^{-1/2} under the uniform law
    and mu the asymptotic mean (alpha, beta); the image is asymptotically gamma_2.
    """

    n: int
    alpha: float = 0.0
    beta: float = 0.0
    W: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cov = indicator_covariance()
        vals, vecs = np.linalg.eigh(cov)
        object.__setattr__(self, "W", vecs @ np.diag(vals ** -0.5) @ vecs.T)

    @property
    def covariance(self) -> np.ndarray:
        return indicator_covariance()

    @property
    def mean_shift(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=float)

    def statistic(self, counts) -> np.ndarray:
        c = np.asarray(counts, dtype=np.int64)
        num = 3 * c[..., :2] - self.n  # exact integers
        return num / (3.0 * math.sqrt(self.n))

    def whiten(self, counts) -> np.ndarray:
        return (self.statistic(counts) - self.mean_shift) @ self.W.T

    def unwhiten(self, z) -> np.ndarray:
        return np.asarray(z) @ np.linalg.inv(self.W).T + self.mean_shift


def plurality_limit_partition(alpha: float, beta: float) -> FlatPartition:
    """Gaussian limit of plurality's cells in whitened coordinates, as a shifted simplex.

    Cell c (0-based) corresponds to label c + 1.
    """
    emb = StatisticEmbedding(1, alpha, beta)
    lin = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    dirs = lin @ np.linalg.inv(emb.W)
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    return FlatPartition(shift=-emb.W @ emb.mean_shift, directions=dirs)


# --- rectangle sets ----------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    x0: float
    x1: float
    y0: float
    y1: float
    label: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise DomainError("rectangles need x0 < x1 and y0 < y1")
        if self.label not in LABELS:
            raise DomainError("rectangle labels must be 1, 2 or 3")

    def contains(self, z) -> np.ndarray:
        z = np.asarray(z)
        return (z[..., 0] >= self.x0) & (z[..., 0] < self.x1) & (z[..., 1] >= self.y0) & (z[..., 1] < self.y1)

    def to_json(self) -> list:
        return [self.x0, self.x1, self.y0, self.y1, self.label]


def _check_disjoint(rects: Sequence[Rect]):
    if len(rects) < 2:
        return
    arr = np.array([[r.x0, r.x1, r.y0, r.y1] for r in rects])
    order = np.argsort(arr[:, 0])
    arr = arr[order]
    for a in range(len(arr)):
        b = a + 1
        while b < len(arr) and arr[b, 0] < arr[a, 1]:
            if arr[b, 2] < arr[a, 3] and arr[a, 2] < arr[b, 3]:
                raise DomainError("rectangles overlap")
            b += 1


@dataclass(frozen=True, eq=False)
class RectangleGrid:
    """Square grid on [-radius, radius]^2, row-major ``labels[row, col]``; row = y index.

    Points off the grid get ``outside``.
    """

    radius: float
    resolution: int
    labels: np.ndarray
    outside: int = 1

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.shape != (self.resolution, self.resolution):
            raise DomainError("label grid must be resolution x resolution")
        if not np.all(np.isin(lab, LABELS)):
            raise DomainError("grid labels must be 1, 2 or 3")
        object.__setattr__(self, "labels", lab)

    def classify(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        h = 2 * self.radius / self.resolution
        col = np.floor((z[..., 0] + self.radius) / h).astype(np.int64)
        row = np.floor((z[..., 1] + self.radius) / h).astype(np.int64)
        on = (col >= 0) & (col < self.resolution) & (row >= 0) & (row < self.resolution)
        out = np.full(col.shape, self.outside, dtype=np.int64)
        out[on] = self.labels[row[on], col[on]]
        return out

    def rectangles(self) -> list:
        h = 2 * self.radius / self.resolution
        out = []
        for r in range(self.resolution):
            row = self.labels[r]
            start = 0
            for c in range(1, self.resolution + 1):
                if c == self.resolution or row[c] != row[start]:
                    out.append(Rect(-self.radius + start * h, -self.radius + c * h,
                                    -self.radius + r * h, -self.radius + (r + 1) * h, int(row[start])))
                    start = c
        return out

    def to_json(self) -> dict:
        return {"radius": self.radius, "resolution": self.resolution, "labels": self.labels.tolist()}

    @classmethod
    def from_json(cls, doc) -> "RectangleGrid":
        return cls(float(doc["radius"]), int(doc["resolution"]), np.asarray(doc["labels"]))


def rectangle_approximate(p, resolution: int, radius: float = 8.0) -> RectangleGrid:
    """Label every grid cell of [-radius, radius]^2 by the partition at its centre."""
    if p.n != 2:
        raise DomainError("rectangle approximation is planar")
    if resolution < 16:
        raise DomainError("resolution must be at least 16")
    h = 2 * radius / resolution
    c = -radius + h * (np.arange(resolution) + 0.5)
    gx, gy = np.meshgrid(c, c)
    lab = p.labels(np.column_stack([gx.ravel(), gy.ravel()])).reshape(resolution, resolution) + 1
    return RectangleGrid(radius, resolution, lab)


# --- voting functions ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VotingFunction:
    """A symmetric election rule, evaluated from vote counts.

    ``plurality``: most votes, ties to the lowest index. ``rectangle``: label of the
    whitened statistic from ``grid`` or the disjoint ``rects``; points covered by
    neither get ``default`` (a label, or "plurality" to fall back to plurality).
    """

    kind: str
    embedding: Optional[StatisticEmbedding] = None
    rects: tuple = ()
    grid: Optional[RectangleGrid] = None
    default: object = 1

    def __post_init__(self):
        if self.kind not in ("plurality", "rectangle"):
            raise DomainError(f"unknown voting function kind {self.kind!r}")
        if self.kind == "rectangle":
            if self.embedding is None:
                raise DomainError("rectangle rules need a statistic embedding")
            if self.default != "plurality" and self.default not in LABELS:
                raise DomainError("default must be a label or 'plurality'")
            object.__setattr__(self, "rects", tuple(self.rects))
            _check_disjoint(self.rects)

    @property
    def n(self) -> Optional[int]:
        return None if self.embedding is None else self.embedding.n

    def from_counts(self, counts) -> np.ndarray:
        counts = np.asarray(counts)
        if self.kind == "plurality":
            return plurality_from_counts(counts)
        if self.n is not None and np.any(counts.sum(axis=-1) != self.n):
            raise DomainError(f"this rule is defined for n = {self.n} voters")
        z = self.embedding.whiten(counts)
        if self.default == "plurality":
            out = plurality_from_counts(counts)
        else:
            out = np.full(z.shape[:-1], self.default, dtype=np.int64)
        if self.grid is not None:
            on = np.all(np.abs(z) < self.grid.radius, axis=-1)
            out = np.where(on, self.grid.classify(z), out)
        for r in self.rects:
            out = np.where(r.contains(z), r.label, out)
        return out

    def __call__(self, votes):
        lab = self.from_counts(vote_counts(votes))
        return int(lab) if np.ndim(lab) == 0 else lab

    def to_json(self) -> dict:
        doc = {"kind": self.kind}
        if self.kind == "rectangle":
            e = self.embedding
            doc.update({"n": e.n, "alpha": e.alpha, "beta": e.beta, "default": self.default,
                        "rects": [r.to_json() for r in self.rects],
                        "grid": None if self.grid is None else self.grid.to_json()})
        return doc


PLURALITY = VotingFunction("plurality")


def constant_function(label: int, n: int) -> VotingFunction:
    return VotingFunction("rectangle", StatisticEmbedding(n), default=label)


def build_competitor(B, n: int, alpha: float = 0.0, beta: float = 0.0) -> VotingFunction:
    """Rule that outputs the label of the rectangle set B containing the whitened statistic.

    ``B`` is a :class:`RectangleGrid` or a sequence of disjoint :class:`Rect`
    (uncovered points get label 1).
    """
    emb = StatisticEmbedding(n, alpha, beta)
    if isinstance(B, RectangleGrid):
        return VotingFunction("rectangle", emb, grid=B, default=B.outside)
    return VotingFunction("rectangle", emb, rects=tuple(B), default=1)


# --- lattice overrides: competitor realised exactly on the count lattice -------------------

def count_logpmf(counts, q) -> np.ndarray:
    c = np.asarray(counts, dtype=float)
    n = c.sum(axis=-1)
    return gammaln(n + 1) - gammaln(c + 1).sum(axis=-1) + (c * np.log(q)).sum(axis=-1)


def lattice_points(emb: StatisticEmbedding, lo, hi) -> np.ndarray:
    """All count vectors whose whitened statistic lies in the box [lo, hi] (z coordinates)."""
    corners = np.array([[lo[0], lo[1]], [lo[0], hi[1]], [hi[0], lo[1]], [hi[0], hi[1]]])
    x = emb.unwhiten(corners)
    n = emb.n
    # X_i = (3 N_i - n) / (3 sqrt n)
    nlo = np.floor((3 * math.sqrt(n) * x.min(axis=0) + n) / 3).astype(int) - 1
    nhi = np.ceil((3 * math.sqrt(n) * x.max(axis=0) + n) / 3).astype(int) + 1
    n1 = np.arange(max(nlo[0], 0), min(nhi[0], n) + 1)
    n2 = np.arange(max(nlo[1], 0), min(nhi[1], n) + 1)
    g1, g2 = np.meshgrid(n1, n2, indexing="ij")
    c = np.column_stack([g1.ravel(), g2.ravel(), n - g1.ravel() - g2.ravel()])
    c = c[c[:, 2] >= 0]
    z = emb.whiten(c)
    keep = np.all((z >= lo) & (z <= hi), axis=1)
    return c[keep]


@dataclass
class LatticeOverride:
    """Competitor equal to plurality except on listed count vectors.

    ``gained[m]`` lists the counts whose label changes to ``labels[m]``.
    """

    function: VotingFunction
    counts: np.ndarray
    new_labels: np.ndarray
    old_labels: np.ndarray
    masses: np.ndarray
    volume_shift: np.ndarray


def _patch_lattice(base_region_fn, emb, frame, patch, plurality_src):
    (t0, t1) = patch.support
    s_hi = patch.height
    pts = np.array([frame.point(t, s) for t in (t0, t1) for s in ((0.0, s_hi) if patch.sign > 0 else (-s_hi, 0.0))])
    pad = 1e-9
    c = lattice_points(emb, pts.min(axis=0) - pad, pts.max(axis=0) + pad)
    if len(c) == 0:
        return c, np.zeros(0), np.zeros(0)
    z = emb.whiten(c)
    t, s = frame.local(z)
    prof = patch.shape(t) / patch.height
    inside = (t > t0) & (t < t1) & (patch.sign * s >= 0) & (prof > 0)
    inside &= plurality_from_counts(c) == plurality_src
    c, s, prof = c[inside], np.abs(s[inside]), prof[inside]
    # height at which each point enters the bump region
    return c, s / prof, prof


def override_competitor(p: PerturbedPartition, law_or_measure) -> LatticeOverride:
    """Realise the patches of ``p`` (built on the plurality limit partition) on the count lattice.

    Each patch flips the lattice points inside its region whose plurality label is
    the patch's source cell. For every facet the height of the last patch is re-chosen
    among the heights where lattice points enter so that the exact multinomial masses
    moved in the two directions agree as closely as the lattice allows.
    """
    meas = law_or_measure.base if isinstance(law_or_measure, CorrelatedPairLaw) else law_or_measure
    emb = StatisticEmbedding(meas.n, meas.alpha, meas.beta)
    q = meas.q
    chosen = []
    for facet in sorted({pt.facet for pt in p.patches}):
        frame = p.frame(facet)
        patches = [pt for pt in p.patches if pt.facet == facet]
        sets = []
        for pt in patches:
            i, j = pt.facet
            src = (j if pt.sign > 0 else i) + 1
            c, enter, _ = _patch_lattice(None, emb, frame, pt, src)
            order = np.argsort(enter, kind="stable")
            c, enter = c[order], enter[order]
            mass = np.exp(count_logpmf(c, q)) if len(c) else np.zeros(0)
            sets.append((pt, c, enter, mass))
        # net mass moved into cell i must vanish: trim the first sets slightly and pick
        # the prefix of the last set whose mass balances best
        pt_last, c_last, enter_last, mass_last = sets[-1]
        cum = np.concatenate([[0.0], np.cumsum(mass_last)])
        best = None
        nominal = [int(np.count_nonzero(e <= pt.height)) for pt, _, e, _ in sets[:-1]]
        for drop in range(0, 6):
            ks = [max(k - drop, min(k, 1)) if m == 0 else k for m, k in enumerate(nominal)]
            net = sum(pt.sign * ms[:k].sum() for (pt, _, _, ms), k in zip(sets[:-1], ks))
            resid = np.abs(net + pt_last.sign * cum)
            k = int(np.argmin(resid))
            if best is None or resid[k] < best[0]:
                best = (resid[k], ks, k)
        _, ks, k = best
        for (pt, c, _, ms), kk in zip(sets[:-1], ks):
            chosen.append((pt, c[:kk], ms[:kk]))
        chosen.append((pt_last, c_last[:k], mass_last[:k]))
    counts, new, old, masses = [], [], [], []
    for pt, c, m in chosen:
        i, j = pt.facet
        src, dst = ((j, i) if pt.sign > 0 else (i, j))
        counts.append(c)
        new.append(np.full(len(c), dst + 1))
        old.append(np.full(len(c), src + 1))
        masses.append(m)
    counts = np.concatenate(counts) if counts else np.zeros((0, 3), dtype=int)
    new = np.concatenate(new).astype(int)
    old = np.concatenate(old).astype(int)
    masses = np.concatenate(masses)
    z = emb.whiten(counts)
    half = 0.25 / math.sqrt(meas.n)  # well below the lattice spacing in z
    rects = tuple(Rect(a - half, a + half, b - half, b + half, int(lab)) for (a, b), lab in zip(z, new))
    fn = VotingFunction("rectangle", emb, rects=rects, default="plurality")
    shift = np.zeros(3)
    np.add.at(shift, new - 1, masses)
    np.add.at(shift, old - 1, -masses)
    return LatticeOverride(fn, counts, new, old, masses, shift)


# --- sampling ---------------------------------------------------------------------

def sample_pair(law: CorrelatedPairLaw, rng: RngStream, size: Optional[int] = None, chunk: int = 0):
    """Correlated vote words: y_j copies x_j with probability rho, else is a fresh draw."""
    g = rng.generator(chunk)
    m = 1 if size is None else int(size)
    n = law.n
    q = law.base.q
    x = g.choice(3, size=(m, n), p=q) + 1
    keep = g.random((m, n)) < law.rho
    fresh = g.choice(3, size=(m, n), p=q) + 1
    y = np.where(keep, x, fresh)
    if size is None:
        return x[0], y[0]
    return x, y


def _sample_counts(law: CorrelatedPairLaw, gen: np.random.Generator, size: int):
    q = law.base.q
    n = law.n
    x = gen.multinomial(n, q, size=size)
    kept = gen.binomial(x, law.rho)
    y = kept + gen.multinomial(n - kept.sum(axis=1), q)
    return x, y


def _resample_counts_given(x_counts, law: CorrelatedPairLaw, gen, size: int):
    q = law.base.q
    kept = gen.binomial(np.broadcast_to(x_counts, (size, 3)), law.rho)
    return kept + gen.multinomial(law.n - kept.sum(axis=1), q)


@dataclass(frozen=True)
class DiscreteEstimate:
    value: float
    std_error: float
    method: str
    samples: int

    def to_json(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "method": self.method, "samples": self.samples}


@lru_cache(maxsize=16)
def _compositions(n: int, parts: int) -> np.ndarray:
    out = []
    for bars in itertools.combinations(range(n + parts - 1), parts - 1):
        prev, row = -1, []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(n + parts - 2 - prev)
        out.append(row)
    return np.array(out, dtype=np.int64)


def _log_multinomial_coef(c) -> np.ndarray:
    c = np.asarray(c)
    return gammaln(c.sum(axis=-1) + 1) - gammaln(c + 1).sum(axis=-1)


def discrete_stability(f: VotingFunction, law: CorrelatedPairLaw, samples: int = 10**5,
                       rng: Optional[RngStream] = None, method: str = "mc") -> DiscreteEstimate:
    """P[f(x) = f(y)] for (x, y) ~ law^n. ``exact`` enumerates pair-type counts (n <= 8)."""
    if f.n is not None and f.n != law.n:
        raise DomainError("function and law disagree on n")
    if method == "exact":
        if law.n > MAX_EXACT_N:
            raise DomainError(f"exact enumeration is limited to n <= {MAX_EXACT_N}")
        comp = _compositions(law.n, 9)
        tab = law.table.ravel()
        with np.errstate(divide="ignore"):
            logw = _log_multinomial_coef(comp) + (comp * np.log(tab)).sum(axis=1)
        c = comp.reshape(-1, 3, 3)
        fx = f.from_counts(c.sum(axis=2))
        fy = f.from_counts(c.sum(axis=1))
        return DiscreteEstimate(float(np.sum(np.exp(logw) * (fx == fy))), 0.0, "exact", len(comp))
    if method != "mc":
        raise DomainError(f"unknown method {method!r}")
    if samples < 1000:
        raise DomainError("Monte Carlo estimates need at least 1000 samples")
    rng = rng or RngStream(0)

    def work(size, gen):
        x, y = _sample_counts(law, gen, size)
        return int(np.count_nonzero(f.from_counts(x) == f.from_counts(y)))

    v = sum(_mc.run_chunks(work, samples, rng)) / samples
    return DiscreteEstimate(v, math.sqrt(v * (1 - v) / samples), "mc", samples)


@dataclass
class DiscreteComparison:
    stabilities: np.ndarray
    std_errors: np.ndarray
    diff: float
    diff_std_error: float
    frequencies: np.ndarray  # [function, label]
    frequency_std_errors: np.ndarray
    samples: int


def compare_discrete(f: VotingFunction, g: VotingFunction, law: CorrelatedPairLaw, samples: int,
                     rng: RngStream) -> DiscreteComparison:
    """Stabilities and output frequencies of f and g on shared vote pairs; diff = S(g) - S(f)."""
    if samples < 1000:
        raise DomainError("Monte Carlo estimates need at least 1000 samples")

    def work(size, gen):
        x, y = _sample_counts(law, gen, size)
        fx, fy, gx, gy = f.from_counts(x), f.from_counts(y), g.from_counts(x), g.from_counts(y)
        a = (fx == fy).astype(np.int64)
        b = (gx == gy).astype(np.int64)
        d = b - a
        freq = np.array([[np.count_nonzero(fx == lab) for lab in LABELS],
                         [np.count_nonzero(gx == lab) for lab in LABELS]])
        return np.array([a.sum(), b.sum()]), d.sum(), (d * d).sum(), freq

    parts = _mc.run_chunks(work, samples, rng)
    hits = np.sum([r[0] for r in parts], axis=0)
    dsum = sum(r[1] for r in parts)
    d2 = sum(r[2] for r in parts)
    freq = np.sum([r[3] for r in parts], axis=0) / samples
    v = hits / samples
    dm = dsum / samples
    return DiscreteComparison(v, np.sqrt(v * (1 - v) / samples), float(dm),
                              float(math.sqrt(max(d2 / samples - dm * dm, 0.0) / samples)),
                              freq, np.sqrt(freq * (1 - freq) / samples), samples)


def override_difference(ov: LatticeOverride, law: CorrelatedPairLaw, samples_per_point: int,
                        rng: RngStream) -> tuple:
    """S(competitor) - S(plurality) localised to the overridden count vectors.

    Uses E[D] = E[1_F(x) D (2 - 1_F(y))] with F the overridden set: x runs over F
    with exact multinomial weights and y is sampled given x, shared by both rules.
    Returns (value, standard error).
    """
    if len(ov.counts) == 0:
        return 0.0, 0.0
    if samples_per_point < 100:
        raise DomainError("need at least 100 samples per lattice point")
    g = ov.function
    base = law.n + 1
    keys = ov.counts[:, 0] * base + ov.counts[:, 1]
    chunks = _mc.chunk_sizes(samples_per_point, 1 << 16)

    def one(m):
        x = ov.counts[m]
        fx, gx = int(ov.old_labels[m]), int(ov.new_labels[m])
        tot = tot2 = 0.0
        for j, size in enumerate(chunks):
            gen = rng.generator(m * len(chunks) + j)
            y = _resample_counts_given(x, law, gen, size)
            fy = plurality_from_counts(y)
            gy = g.from_counts(y)
            in_f = np.isin(y[:, 0] * base + y[:, 1], keys)
            term = ((gy == gx).astype(float) - (fy == fx)) * (2.0 - in_f)
            tot += term.sum()
            tot2 += (term * term).sum()
        mean = tot / samples_per_point
        var = max(tot2 / samples_per_point - mean * mean, 0.0) / samples_per_point
        return mean, var

    res = [one(m) for m in range(len(ov.counts))]
    val = float(np.sum(ov.masses * np.array([r[0] for r in res])))
    se = float(math.sqrt(np.sum(ov.masses ** 2 * np.array([r[1] for r in res]))))
    return val, se


# --- influence --------------------------------------------------------------------------

def influence(f: VotingFunction, q: BiasedMeasure, i: int, method: str = "exact", samples: int = 10**5,
              rng: Optional[RngStream] = None) -> DiscreteEstimate:
    """P[f(x) != f(x with vote i redrawn)] for x ~ q^n (coordinates are 0-based)."""
    n = q.n
    if not (0 <= i < n):
        raise DomainError(f"coordinate {i} out of range for n = {n}")
    if f.n is not None and f.n != n:
        raise DomainError("function and measure disagree on n")
    qq = q.q
    unit = np.eye(3, dtype=np.int64)
    # the rules are symmetric, so only the other voters' counts matter
    if method == "exact":
        if n > MAX_EXACT_N:
            raise DomainError(f"exact enumeration is limited to n <= {MAX_EXACT_N}")
        comp = _compositions(n - 1, 3)
        w = np.exp(_log_multinomial_coef(comp) + (comp * np.log(qq)).sum(axis=1))
        total = 0.0
        for a in range(3):
            for b in range(3):
                if a == b:
                    continue
                differ = f.from_counts(comp + unit[a]) != f.from_counts(comp + unit[b])
                total += qq[a] * qq[b] * np.sum(w * differ)
        return DiscreteEstimate(float(total), 0.0, "exact", len(comp))
    if samples < 1000:
        raise DomainError("Monte Carlo estimates need at least 1000 samples")
    rng = rng or RngStream(0)

    def work(size, gen):
        c = gen.multinomial(n - 1, qq, size=size)
        a = gen.choice(3, size=size, p=qq)
        b = gen.choice(3, size=size, p=qq)
        return int(np.count_nonzero(f.from_counts(c + unit[a]) != f.from_counts(c + unit[b])))

    v = sum(_mc.run_chunks(work, samples, rng)) / samples
    return DiscreteEstimate(v, math.sqrt(v * (1 - v) / samples), "mc", samples)


# --- compact vote-word format --------------------------------------------------------------

_HEADER = struct.Struct("<QQ")


def encode_words(words) -> bytes:
    """Header (n, count) as little-endian u64, then each word at 2 bits per vote, zero-padded to a byte."""
    w = _check_words(np.atleast_2d(words))
    count, n = w.shape
    bits = np.zeros((count, n, 2), dtype=np.uint8)
    code = (w - 1).astype(np.uint8)
    bits[..., 0] = code >> 1
    bits[..., 1] = code & 1
    payload = np.packbits(bits.reshape(count, 2 * n), axis=1)
    return _HEADER.pack(n, count) + payload.tobytes()


def decode_words(blob: bytes) -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise DomainError("truncated vote-word header")
    n, count = _HEADER.unpack_from(blob)
    per = (2 * n + 7) // 8
    body = np.frombuffer(blob, dtype=np.uint8, offset=_HEADER.size)
    if body.size != per * count:
        raise DomainError("vote-word payload has the wrong length")
    bits = np.unpackbits(body.reshape(count, per), axis=1)[:, : 2 * n].reshape(count, n, 2)
    code = (bits[..., 0] << 1) | bits[..., 1]
    if np.any(code > 2):
        raise DomainError("invalid vote code in payload")
    return code.astype(np.int64) + 1
