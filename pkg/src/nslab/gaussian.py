"""Gaussian primitives: normal CDFs, quadrature rules and reproducible correlated sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

SQRT2 = math.sqrt(2.0)
SQRT2PI = math.sqrt(2.0 * math.pi)
MAX_GH_ORDER = 200


class DomainError(ValueError):
    """Raised when an input lies outside the domain an operation is defined on."""


@dataclass(frozen=True)
class CorrelatedGaussianModel:
    """Pair (X, Y) of standard Gaussians in R^n with E[X_i Y_j] = rho * 1{i=j}."""

    n: int
    rho: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.n!r}")
        if not (-1.0 < self.rho < 1.0):
            raise DomainError(f"rho must lie strictly inside (-1, 1), got {self.rho!r}")

    @property
    def noise_scale(self) -> float:
        return math.sqrt(1.0 - self.rho * self.rho)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    truncation_radius: float = math.inf

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True)
class RngStream:
    """Immutable descriptor of a counter-based (Philox) random stream.

    The same (seed, stream_id) always reproduces the same numbers. Large Monte Carlo
    jobs are cut into chunks, and chunk ``j`` draws from ``generator(j)``, so the
    result does not depend on how chunks are spread over workers.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if int(v) != v or not (0 <= v < 2**64):
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {v!r}")

    def generator(self, chunk: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, chunk))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    def to_json(self) -> dict:
        return {"seed": int(self.seed), "stream_id": int(self.stream_id)}


def std_normal_cdf(z):
    """Standard normal CDF, accurate to ~1e-16 absolute.

    Uses the complementary error function so that both tails keep full relative
    precision. Accepts scalars or arrays; non-finite input raises DomainError.
    """
    arr = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    out = 0.5 * special.erfc(-arr / SQRT2)
    return float(out) if out.ndim == 0 else out


def _ndtr(z):
    # internal: tolerates +-inf
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / SQRT2)


def std_normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / SQRT2PI


def std_normal_ppf(p):
    return special.ndtri(p)


# Gauss-Legendre rules used by the Drezner-Wesolowsky / Genz scheme.
_GL = {m: np.polynomial.legendre.leggauss(m) for m in (6, 12, 20)}


def _bvn_upper(h, k, r):
    """P(X > h, Y > k) for the standard bivariate normal, after Genz (2004).

    Vectorised over broadcast arrays of finite h, k and |r| < 1.
    """
    h, k, r = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float), np.asarray(r, float))
    out = np.empty(h.shape)
    absr = np.abs(r)

    small = absr < 0.925
    if np.any(small):
        hs, ks, rs = h[small], k[small], r[small]
        m = np.where(np.abs(rs) < 0.3, 6, np.where(np.abs(rs) < 0.75, 12, 20))
        val = np.empty(hs.shape)
        for order in (6, 12, 20):
            sel = m == order
            if not np.any(sel):
                continue
            x, w = _GL[order]
            hh, kk, rr = hs[sel], ks[sel], rs[sel]
            hk = hh * kk
            half = (hh * hh + kk * kk) / 2.0
            asr = np.arcsin(rr)
            sn = np.sin(asr[:, None] * (x[None, :] + 1.0) / 2.0)
            terms = w[None, :] * np.exp((sn * hk[:, None] - half[:, None]) / (1.0 - sn * sn))
            val[sel] = terms.sum(axis=1) * asr / (4.0 * math.pi) + _ndtr(-hh) * _ndtr(-kk)
        out[small] = val

    big = ~small
    if np.any(big):
        x, w = _GL[20]
        hh, kk, rr = h[big], k[big].copy(), r[big]
        neg = rr < 0
        kk[neg] = -kk[neg]
        hk = hh * kk
        a2 = (1.0 - rr) * (1.0 + rr)
        a = np.sqrt(a2)
        bs = (hh - kk) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        asr = -(bs / a2 + hk) / 2.0
        with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
            bvn = np.where(
                asr > -100.0,
                a * np.exp(asr) * (1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a2 * a2 / 5.0),
                0.0,
            )
            b = np.sqrt(bs)
            corr = np.exp(-hk / 2.0) * SQRT2PI * _ndtr(-b / a) * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
            bvn = bvn - np.where(-hk < 100.0, corr, 0.0)
            ah = a / 2.0
            xs = (ah[:, None] * (x[None, :] + 1.0)) ** 2
            rs = np.sqrt(1.0 - xs)
            asr2 = -(bs[:, None] / xs + hk[:, None]) / 2.0
            inner = ah[:, None] * w[None, :] * np.exp(asr2) * (
                np.exp(-hk[:, None] * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                - (1.0 + c[:, None] * xs * (1.0 + d[:, None] * xs))
            )
            inner = np.where(asr2 > -100.0, inner, 0.0)
        bvn = -(bvn + inner.sum(axis=1)) / (2.0 * math.pi)
        res = np.where(rr > 0, bvn + _ndtr(-np.maximum(hh, kk)), 0.0)
        # negative correlation branch (k already reflected)
        lo = np.where(hh < 0, _ndtr(kk) - _ndtr(hh), _ndtr(-hh) - _ndtr(-kk))
        res = np.where(rr > 0, res, np.where(hh >= kk, -bvn, lo - bvn))
        out[big] = res
    return np.clip(out, 0.0, 1.0)


def bivariate_normal_cdf(h, k, rho):
    """P(X <= h, Y <= k) for standard normals with correlation ``rho``.

    ``h`` and ``k`` may be +-inf. Vectorised; returns a float for scalar input.
    """
    h, k, rho = np.broadcast_arrays(np.asarray(h, float), np.asarray(k, float), np.asarray(rho, float))
    if np.any(np.isnan(h)) or np.any(np.isnan(k)):
        raise DomainError("bivariate_normal_cdf: NaN limit")
    if np.any(np.abs(rho) >= 1.0) or np.any(np.isnan(rho)):
        raise DomainError("bivariate_normal_cdf requires |rho| < 1")
    out = np.zeros(h.shape)
    finite = np.isfinite(h) & np.isfinite(k)
    if np.any(finite):
        out[finite] = _bvn_upper(-h[finite], -k[finite], rho[finite])
    hinf = (h == np.inf)
    kinf = (k == np.inf)
    out[hinf & ~(k == -np.inf)] = _ndtr(k[hinf & ~(k == -np.inf)])
    out[kinf & ~(h == -np.inf)] = _ndtr(h[kinf & ~(h == -np.inf)])
    out[(h == -np.inf) | (k == -np.inf)] = 0.0
    return float(out) if out.ndim == 0 else out


def gauss_hermite_rule(order: int) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule normalised to integrate against dgamma_1."""
    if int(order) != order or order < 1:
        raise DomainError(f"order must be a positive integer, got {order!r}")
    if order > MAX_GH_ORDER:
        raise DomainError(f"Gauss-Hermite order {order} > {MAX_GH_ORDER} is not supported")
    x, w = np.polynomial.hermite_e.hermegauss(int(order))
    w = w / SQRT2PI
    return QuadratureRule(nodes=x, weights=w, kind="gauss-hermite-probabilist")


def truncated_trapezoid_rule(radius: float, step: float) -> QuadratureRule:
    """Trapezoid rule for dgamma_1 on [-radius, radius]; mass outside is dropped."""
    m = int(round(2 * radius / step))
    x = np.linspace(-radius, radius, m + 1)
    w = np.full(m + 1, 2 * radius / m)
    w[0] *= 0.5
    w[-1] *= 0.5
    return QuadratureRule(nodes=x, weights=w * std_normal_pdf(x), kind="truncated-trapezoid",
                          truncation_radius=radius)


def gauss_legendre_panels(a, b, order: int, panels: int = 1):
    """Composite Gauss-Legendre nodes/weights on [a, b] (arrays broadcast over leading dims).

    Returns (nodes, weights) with a trailing axis of length ``order * panels``.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    a = np.asarray(a, float)[..., None]
    b = np.asarray(b, float)[..., None]
    edges = np.linspace(0.0, 1.0, panels + 1)
    u = (edges[:-1, None] + (edges[1:, None] - edges[:-1, None]) * (x[None, :] + 1) / 2).ravel()
    wu = np.tile(w / (2.0 * panels), panels)
    nodes = a + (b - a) * u
    weights = (b - a) * wu
    return nodes, weights


def sample_correlated_pair(model: CorrelatedGaussianModel, rng: RngStream, size: Optional[int] = None,
                           chunk: int = 0):
    """Draw (X, Y) with X ~ gamma_n and Y = rho X + sqrt(1 - rho^2) Z.

    With ``size=None`` a single pair of length-n vectors is returned, otherwise two
    arrays of shape (size, n).
    """
    g = rng.generator(chunk)
    m = 1 if size is None else int(size)
    xz = g.standard_normal((m, 2 * model.n))
    x = xz[:, : model.n]
    y = model.rho * x + model.noise_scale * xz[:, model.n:]
    if size is None:
        return x[0], y[0]
    return x, y
