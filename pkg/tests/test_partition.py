import json
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from nslab import (
    BumpPatch,
    CorrelatedGaussianModel,
    DomainError,
    FlatPartition,
    PerturbedPartition,
    SlabPartition,
    StandardSimplexSpec,
    classify,
    estimate_volumes,
    exact_volumes,
    facet_adjacent,
    make_standard_simplex,
    partition_from_json,
    shifted_simplex,
    std_normal_cdf,
)
from nslab.gaussian import std_normal_ppf
from nslab.partition import (
    adjacent_pairs,
    bump_profile,
    facet_frame,
    halfspace_volume,
    patch_area,
    patch_area_first_order,
)

CENTRED = make_standard_simplex(StandardSimplexSpec(2))
MODEL0 = CorrelatedGaussianModel(2, 0.0)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_standard_simplex_geometry(n):
    p = make_standard_simplex(StandardSimplexSpec(n))
    assert p.k == n + 1
    g = p.directions @ p.directions.T
    assert np.allclose(np.diag(g), 1.0, atol=1e-12)
    off = g[~np.eye(p.k, dtype=bool)]
    assert np.allclose(off, -1.0 / n, atol=1e-10)
    if n == 1:
        assert np.allclose(p.directions.ravel(), [1.0, -1.0])


def test_invalid_partitions_rejected():
    with pytest.raises(DomainError):
        FlatPartition(np.zeros(2), [[1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(DomainError):
        FlatPartition(np.zeros(1), [[1.0], [-1.0], [2.0]])
    with pytest.raises(DomainError):
        FlatPartition(np.zeros(2), [[0.0, 0.0], [1.0, 0.0]])


def test_classify_examples():
    assert classify(CENTRED, CENTRED.directions[0]) == 0
    assert classify(CENTRED, 3 * CENTRED.directions[2]) == 2
    # exact two-way ties go to the lower index
    halves = FlatPartition(np.zeros(2), [[1.0, 0.0], [-1.0, 0.0]])
    assert classify(halves, [0.0, 5.0]) == 0
    assert classify(make_standard_simplex(StandardSimplexSpec(1)), [0.0]) == 0
    with pytest.raises(DomainError):
        classify(CENTRED, [np.nan, 0.0])


def test_patch_flips_membership():
    frame = facet_frame(CENTRED, 0, 1)
    patch = BumpPatch((0, 1), 2.0, 0.5, 0.3, +1)
    q = PerturbedPartition(CENTRED, (patch,))
    inside = frame.point(2.0, 0.1)
    assert classify(CENTRED, inside) == 1
    assert classify(q, inside) == 0
    # above the bump height the base label stays
    assert classify(q, frame.point(2.0, 0.4)) == 1
    back = PerturbedPartition(CENTRED, (BumpPatch((0, 1), 2.0, 0.5, 0.3, -1),))
    assert classify(back, frame.point(2.0, -0.1)) == 1


def test_overlapping_patches_rejected():
    a = BumpPatch((0, 1), 2.0, 0.5, 0.1, 1)
    b = BumpPatch((0, 1), 2.6, 0.5, 0.1, -1)
    with pytest.raises(DomainError):
        PerturbedPartition(CENTRED, (a, b))
    with pytest.raises(DomainError):
        BumpPatch((0, 1), 0.0, 0.5, 0.0)


def test_tie_frequency_negligible(rng):
    p = shifted_simplex(0.4)
    x = rng.generator(0).standard_normal((10**6, 2))
    s = np.sort(p.scores(x), axis=1)
    assert np.mean(s[:, -1] - s[:, -2] <= 1e-9) <= 1e-5


@settings(max_examples=200)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(1e-3, 1e3))
def test_centred_cells_are_cones(a, b, lam):
    x = np.array([a, b])
    assume(np.linalg.norm(x) > 1e-100)  # avoid subnormal underflow of lam * x
    assert classify(CENTRED, x) == classify(CENTRED, lam * x)


def test_cone_property_bulk(rng):
    g = rng.generator(1)
    x = g.standard_normal((10**4, 3))
    lam = g.exponential(size=(10**4, 1)) + 1e-3
    p = make_standard_simplex(StandardSimplexSpec(3))
    assert np.array_equal(classify(p, x), classify(p, lam * x))


@given(st.permutations([0, 1, 2]))
def test_relabelling_permutes_labels(perm):
    x = np.random.default_rng(1).standard_normal((500, 2))
    p = shifted_simplex(0.35)
    q = FlatPartition(p.shift, p.directions[list(perm)])
    assert np.array_equal(np.asarray(perm)[classify(q, x)], classify(p, x))


def test_shift_equals_translation(rng):
    x = rng.generator(2).standard_normal((2000, 2))
    p = shifted_simplex(0.25)
    assert np.array_equal(classify(p, x), classify(CENTRED, x - p.shift))


def test_centred_volumes(rng):
    a, se = estimate_volumes(CENTRED, MODEL0, 10**6, rng)
    assert a.sum() == 1.0
    assert np.all(np.abs(a - 1 / 3) <= 4 * se)
    assert np.allclose(exact_volumes(CENTRED), 1 / 3, atol=1e-14)


def test_halfplane_volumes(rng):
    u = np.array([0.6, 0.8])
    s = 0.7
    p = FlatPartition(s * u, [u, -u])
    a, se = estimate_volumes(p, MODEL0, 10**6, rng)
    assert np.all(np.abs(a - [std_normal_cdf(-s), std_normal_cdf(s)]) <= 4 * se)
    assert np.allclose(exact_volumes(p), [std_normal_cdf(-s), std_normal_cdf(s)], atol=1e-14)


def test_halfspace_volume(rng):
    assert halfspace_volume(0.0) == 0.5
    assert abs(halfspace_volume(std_normal_ppf(1 / 3)) - 1 / 3) < 1e-10
    z = rng.generator(3).standard_normal(10**6)
    v = np.mean(z <= 1.0)
    assert abs(halfspace_volume(1.0) - v) <= 4 * math.sqrt(v * (1 - v) / 1e6)


def test_shifted_simplex_volumes(rng):
    for v in (0.1, 0.4, 0.6):
        vols = exact_volumes(shifted_simplex(v))
        assert abs(vols[0] - v) < 1e-12 and abs(vols[1] - vols[2]) < 1e-12
    a, se = estimate_volumes(shifted_simplex(0.4), MODEL0, 10**6, rng)
    assert np.all(np.abs(a - [0.4, 0.3, 0.3]) <= 4 * se)


def test_facet_adjacency():
    assert adjacent_pairs(CENTRED) == [(0, 1), (0, 2), (1, 2)]
    # three planar directions in general position always meet pairwise
    assert adjacent_pairs(FlatPartition(np.zeros(2), [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])) == [(0, 1), (0, 2), (1, 2)]
    # y_1 the midpoint of y_0 and y_2: cell 1 has empty interior
    p = FlatPartition(np.zeros(2), [[1.0, 0.0], [0.0, 0.5], [-1.0, 1.0]])
    assert not facet_adjacent(p, 0, 1) and not facet_adjacent(p, 1, 2)
    with pytest.raises(DomainError):
        facet_frame(p, 0, 1)


def test_facet_frame_lies_on_shared_boundary():
    p = shifted_simplex(0.4)
    for i, j in adjacent_pairs(p):
        f = facet_frame(p, i, j)
        t0 = f.t_apex if math.isfinite(f.t_apex) else -3.0
        for t in t0 + np.array([0.5, 1.0, 5.0]):
            s = p.scores(f.point(t))
            assert abs(s[i] - s[j]) < 1e-12 and s[i] >= s.max() - 1e-12
            assert classify(p, f.point(t, 1e-6)) == j
            assert classify(p, f.point(t, -1e-6)) == i


def test_bump_profile_shape():
    u = np.linspace(-1.5, 1.5, 301)
    b = bump_profile(u)
    assert b[np.abs(u) >= 1].max() == 0.0
    assert abs(bump_profile(0.0) - 1.0) < 1e-15
    assert np.all(b >= 0)


def test_patch_area_matches_monte_carlo(rng):
    p = shifted_simplex(0.4)
    patch = BumpPatch((0, 1), 0.8, 0.25, 0.3, 1)
    q = PerturbedPartition(p, (patch,))
    x = rng.generator(4).standard_normal((4 * 10**6, 2))
    hit = q.patch_mask(patch, x)
    v = hit.mean()
    se = math.sqrt(v * (1 - v) / len(x))
    assert abs(v - patch_area(q.frame((0, 1)), patch)) <= 4 * se
    small = BumpPatch((0, 1), 0.8, 0.25, 1e-6, 1)
    f = q.frame((0, 1))
    assert abs(patch_area(f, small) / patch_area_first_order(f, small) - 1) < 1e-5


def test_json_round_trip():
    patch = BumpPatch((0, 2), 1.0, 0.25, 0.05, -1)
    p = PerturbedPartition(shifted_simplex(0.4), (patch,))
    doc = json.loads(json.dumps(p.to_json()))
    assert set(doc) == {"n", "k", "shift", "directions", "patches"}
    q = partition_from_json(doc)
    x = np.random.default_rng(0).standard_normal((5000, 2))
    assert np.array_equal(q.labels(x), p.labels(x))
    s = SlabPartition([0.0, 2.0], [-0.5, 0.5])
    s2 = partition_from_json(json.dumps(s.to_json()))
    assert np.array_equal(s2.labels(x), s.labels(x))
    with pytest.raises(DomainError):
        partition_from_json({"n": 3, "shift": [0, 0], "directions": [[1, 0], [-1, 0]]})


def test_slab_volumes(rng):
    s = SlabPartition([0.6, 0.8], [-0.5, 0.0, 0.0, 1.2])
    v = exact_volumes(s)
    assert v[2] == 0.0 and abs(v.sum() - 1) < 1e-15
    a, se = estimate_volumes(s, MODEL0, 10**6, rng)
    assert np.all(np.abs(a - v) <= 4 * se + 1e-15)
