"""Acceptance criteria 1-10. Each test records one PASS/FAIL line, printed in the terminal summary."""

import json
import math

import numpy as np
import pytest

from nslab import (
    BiasedMeasure,
    CorrelatedGaussianModel,
    CorrelatedPairLaw,
    FlatPartition,
    RngStream,
    SlabPartition,
    StandardSimplexSpec,
    bivariate_normal_cdf,
    build_perturbation,
    complex_line_eval,
    cone_cell,
    discrete_stability,
    estimate_volumes,
    exact_volumes,
    find_improving_facet,
    first_variation,
    improve,
    influence,
    line_difference,
    line_restriction,
    make_standard_simplex,
    shifted_simplex,
    stability_bilinear,
    std_normal_cdf,
    t_rho_halfspace,
)
from nslab.cli import main
from nslab.gaussian import std_normal_ppf
from nslab.ou import growth_constant
from nslab.perturbation import matched_unit_bumps
from nslab.stability import stability_difference_local
from nslab.voting import (
    PLURALITY,
    RectangleGrid,
    build_competitor,
    compare_discrete,
    override_competitor,
    override_difference,
    plurality_limit_partition,
)

from conftest import simpson_bvn

RESULTS = []
CENTRED = make_standard_simplex(StandardSimplexSpec(2))


def report(num, ok, detail):
    RESULTS.append(f"C{num} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def model(rho):
    return CorrelatedGaussianModel(2, rho)


def facet_shifted(c):
    n = CENTRED.directions[1] - CENTRED.directions[0]
    return FlatPartition(c * n / np.linalg.norm(n), CENTRED.directions)


def test_c1_closed_form_concordance():
    gen = np.random.default_rng(101)
    rng = RngStream(101)
    worst_se = 0.0
    for m in range(20):
        a = gen.uniform(-2, 2)
        rho = gen.uniform(-0.95, 0.95)
        x = gen.normal(size=2) * 1.5
        th = gen.uniform(0, 2 * math.pi)
        u = np.array([math.cos(th), math.sin(th)])
        z = rng.generator(m).standard_normal((10**6, 2))
        hit = (rho * x + math.sqrt(1 - rho * rho) * z) @ u <= a
        exact = t_rho_halfspace(a, u, rho, x)
        se = math.sqrt(exact * (1 - exact) / 1e6)
        diff = abs(exact - hit.mean())
        worst_se = max(worst_se, diff / se if se > 0 else (0.0 if diff == 0 else math.inf))
    worst_cdf = 0.0
    for h in np.linspace(-2, 2, 5):
        for k in np.linspace(-2, 2, 5):
            for rho in np.linspace(-0.9, 0.9, 5):
                worst_cdf = max(worst_cdf, abs(bivariate_normal_cdf(h, k, rho) - simpson_bvn(h, k, rho)))
    report(1, worst_se <= 4 and worst_cdf <= 1e-7,
           f"halfspace vs MC worst {worst_se:.2f} SE over 20 points; bivariate CDF worst {worst_cdf:.1e} over 125 points")


def test_c2_plateau_limits():
    worst_hi = worst_lo = 0.0
    for c in (0.5, 1.0, 2.0):
        for rho in (0.3, 0.5, 0.8):
            p = facet_shifted(c)
            lo, hi = line_difference(p, line_restriction(p, 0, 1), rho, np.array([-50.0, 50.0]))
            target = 2 * math.copysign(1, c) * (std_normal_cdf(abs(c) * (1 - rho) / math.sqrt(1 - rho * rho)) - 0.5)
            worst_hi = max(worst_hi, abs(hi - target))
            worst_lo = max(worst_lo, abs(lo))
    worst_zero = 0.0
    for rho in (0.3, 0.5, 0.8):
        for pair in ((0, 1), (0, 2), (1, 2)):
            vals = line_difference(CENTRED, line_restriction(CENTRED, *pair), rho, np.array([-50.0, 50.0]))
            worst_zero = max(worst_zero, float(np.max(np.abs(vals))))
    report(2, worst_hi <= 1e-4 and worst_lo <= 1e-5 and worst_zero <= 1e-5,
           f"t=+50 error {worst_hi:.1e}; t=-50 magnitude {worst_lo:.1e}; c=0 plateaus {worst_zero:.1e}")


def test_c3_holomorphy():
    p = shifted_simplex(0.4)
    gen = np.random.default_rng(103)
    pts = gen.uniform(-3, 3, 20) + 1j * gen.uniform(-2, 2, 20)
    h = 1e-4
    worst_cr = 0.0
    growth_ok = True
    for pair in ((0, 1), (1, 2)):
        lr = line_restriction(p, *pair)
        for idx in pair:
            cell = cone_cell(p, idx)
            for rho in (0.5, -0.5):
                cc = growth_constant(cell, rho, lr)

                def f(w):
                    return complex_line_eval(cell, rho, lr, w)

                for z in pts:
                    dx = (f(z + h) - f(z - h)) / (2 * h)
                    dy = (f(z + 1j * h) - f(z - 1j * h)) / (2 * h)
                    worst_cr = max(worst_cr, abs(dy - 1j * dx))
                    y = z.imag
                    growth_ok &= abs(f(z)) <= 1 + cc * abs(y) * math.exp(cc * y * y / 2) + 1e-12
    report(3, worst_cr <= 1e-5 and growth_ok,
           f"Cauchy-Riemann residual {worst_cr:.1e} at 20 points; growth bound {'holds' if growth_ok else 'violated'}")


def test_c4_first_variation():
    gen = np.random.default_rng(104)
    rng = RngStream(104)
    d = 0.02
    rel, signs = [], []
    while len(rel) < 10:
        p = FlatPartition(gen.uniform(-0.5, 0.5, 2), CENTRED.directions)
        rho = float(gen.uniform(0.3, 0.7))
        w = find_improving_facet(p, rho)
        if w is None or abs(w.line.c) < 0.05:
            continue
        f1, f2 = matched_unit_bumps(p, w.facet, w.t1, w.t2)
        fv = first_variation(p, w.line, f1, f2, rho)
        up = build_perturbation(p, w.facet, w.t1, w.t2, d)
        down = build_perturbation(p, w.facet, w.t1, w.t2, -d)
        # the same stream for both signs gives common random numbers
        m = len(rel)
        a, _ = stability_difference_local(p, up, model(rho), 10**6, rng.child(m))
        b, _ = stability_difference_local(p, down, model(rho), 10**6, rng.child(m))
        fd = (a - b) / (2 * d)
        rel.append(abs(fd - fv) / abs(fv))
        signs.append(fv > 0)
    report(4, max(rel) <= 0.10 and all(signs),
           f"worst relative error {max(rel):.3f} over 10 configurations; positive sign {sum(signs)}/10")


@pytest.mark.parametrize("rho", [0.5, -0.5])
def test_c5_improvement_at_desk_scale(rho):
    base = shifted_simplex(0.4)
    out, rep = improve(base, rho, samples=10**7, rng=RngStream(105))
    b = rep.best
    margin = 0.0 if b is None else math.copysign(1, rho) * b.value / b.std_error
    vols, se = estimate_volumes(out, model(0.0), 10**7, RngStream(205))
    vol_dev = float(np.max(np.abs(vols - exact_volumes(base)) / se))
    verb = "increases" if rho > 0 else "decreases"
    report(5, margin > 5 and vol_dev <= 4,
           f"rho={rho:+}: perturbation {verb} S_rho by {margin:.1f} SE; volume deviation {vol_dev:.2f} SE")


def test_c6_centred_consistency():
    worst = 0.0
    none = True
    grid = np.linspace(-50, 50, 513)
    for rho in (0.3, 0.5, -0.5, 0.8):
        none &= find_improving_facet(CENTRED, rho) is None
        for pair in ((0, 1), (0, 2), (1, 2)):
            vals = line_difference(CENTRED, line_restriction(CENTRED, *pair), rho, grid)
            worst = max(worst, float(np.ptp(vals)))
    report(6, worst <= 1e-7 and none, f"largest facet spread {worst:.1e}; no improving direction detected")


def _challengers(gen, count):
    a = float(std_normal_ppf(1 / 3))
    for m in range(count):
        th = gen.uniform(0, 2 * math.pi)
        u = np.array([math.cos(th), math.sin(th)])
        if m % 2 == 0:
            A = SlabPartition(u, [a, -a])
        else:
            rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
            A = FlatPartition(np.zeros(2), CENTRED.directions @ rot.T)
        ph = gen.uniform(0, 2 * math.pi)
        B = SlabPartition([math.cos(ph), math.sin(ph)], [0.0, 0.0])
        yield A, B


def test_c7_bilinear_optimum():
    rho = 0.5
    a = float(std_normal_ppf(1 / 3))
    A, B = SlabPartition([1.0, 0.0], [a, -a]), SlabPartition([1.0, 0.0], [0.0, 0.0])
    closed = stability_bilinear(A, B, model(rho), "closed-form").value
    target = 2 * bivariate_normal_cdf(a, 0.0, rho)
    rng = RngStream(107)
    mc = stability_bilinear(A, B, model(rho), "mc", 10**6, rng.child(0))
    z_opt = abs(mc.value - closed) / mc.std_error
    gen = np.random.default_rng(107)
    worst = -math.inf
    for m, (Ac, Bc) in enumerate(_challengers(gen, 20)):
        assert np.allclose(exact_volumes(Ac), 1 / 3, atol=1e-12)
        est = stability_bilinear(Ac, Bc, model(rho), "mc", 10**6, rng.child(1 + m))
        worst = max(worst, (est.value - closed) / est.std_error)
    report(7, abs(closed - target) < 1e-12 and z_opt <= 4 and worst <= 3,
           f"closed form {closed:.8f} vs MC {z_opt:.2f} SE; best challenger excess {worst:+.2f} SE")


def test_c8_plurality_not_stablest():
    n, alpha, beta, rho = 10**4, 1.0, 0.0, 0.5
    rng = RngStream(108)
    B, rep = improve(plurality_limit_partition(alpha, beta), rho, samples=10**6, rng=rng.child(1))
    law = CorrelatedPairLaw(BiasedMeasure(n, alpha, beta), rho)
    ov = override_competitor(B, law)
    gap, se = override_difference(ov, law, 2 * 10**4, rng.child(3))
    cmp_ = compare_discrete(PLURALITY, ov.function, law, 10**6, rng.child(2))
    fse = np.sqrt(cmp_.frequency_std_errors[0] ** 2 + cmp_.frequency_std_errors[1] ** 2)
    freq_dev = float(np.max(np.abs(cmp_.frequencies[1] - cmp_.frequencies[0]) - 4 * fse))
    ns = [101, 401, 1601]
    infl = [influence(PLURALITY, BiasedMeasure(m), 0, "mc", 10**6, rng.child(10 + m)).value for m in ns]
    slope = float(np.polyfit(np.log(ns), np.log(infl), 1)[0])
    report(8, gap > 3 * se and freq_dev <= 0.02 and abs(slope + 0.5) <= 0.1,
           f"stability gap {gap:+.2e} = {gap / se:.1f} SE over {len(ov.counts)} count vectors; "
           f"frequency excess over 4 SE {max(freq_dev, 0.0):.4f}; influence slope {slope:.3f}")


def test_c9_exact_enumeration():
    gen = np.random.default_rng(109)
    rng = RngStream(109)
    worst = 0.0
    cases = 0
    for m in range(21):
        n = 1 + m % 6
        rho = float(gen.uniform(0, 1))
        a, b = (gen.uniform(-0.15, 0.15, 2) if n > 1 else (0.0, 0.0))
        meas = BiasedMeasure(n, a, b)
        law = CorrelatedPairLaw(meas, rho)
        if m == 20:
            f = PLURALITY
        else:
            res = 16
            grid = RectangleGrid(3.0, res, gen.integers(1, 4, size=(res, res)), outside=int(gen.integers(1, 4)))
            f = build_competitor(grid, n, a, b)
        ex = discrete_stability(f, law, method="exact").value
        mc = discrete_stability(f, law, 10**5, rng.child(2 * m))
        worst = max(worst, abs(mc.value - ex) / max(mc.std_error, 1e-12))
        i = int(gen.integers(0, n))
        ie = influence(f, meas, i).value
        im = influence(f, meas, i, "mc", 10**5, rng.child(2 * m + 1))
        worst = max(worst, abs(im.value - ie) / max(im.std_error, 1e-12))
        cases += 2
    report(9, worst <= 4, f"worst MC vs enumeration {worst:.2f} SE over {cases} comparisons (n <= 6)")


def test_c10_reproducibility(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    runs = [
        ["stability", "--samples", "200000", "--seed", "3"],
        ["improve", "--samples", "100000", "--seed", "3"],
        ["plurality", "--samples", "100000", "--seed", "3"],
        ["bilinear", "--samples", "100000", "--seed", "3"],
        ["limits", "--rho", "-0.5"],
    ]
    same = []
    for argv in runs:
        blobs = []
        for r in range(2):
            out = tmp_path / f"{argv[0]}-{r}.json"
            monkeypatch.setenv("NS_LAB_THREADS", str(1 + 2 * r))
            assert main(argv + ["--out", str(out)]) == 0
            blobs.append(out.read_bytes())
        same.append(blobs[0] == blobs[1] and json.loads(blobs[0])["results"])
    report(10, all(same), f"{sum(map(bool, same))}/{len(runs)} commands byte-identical across reruns and thread counts")
