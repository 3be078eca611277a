import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsalab.fields import FieldSpec, Region, SpaceTimePoint
from rsalab.limits import (FINITE, INFINITE, anderson_darling_normal, boundary_processes,
                           boundary_split, center_counts, cone_tail, default_beta,
                           gaussianity_matrix, gaussianity_report, lilliefors_pvalue,
                           raw_counts, rescaled_family, rescaled_sample, standard_boxes,
                           escape_curve)
from rsalab.stats import ScalingFit

P = SpaceTimePoint
SPEC = FieldSpec(1, tau=1.0)


def test_standard_boxes_overlap_structure():
    b = standard_boxes(2)
    vols = [[x.intersection_volume(y) for y in b] for x in b]
    assert vols == [[1.0, 0.0, 0.5], [0.0, 1.0, 0.0], [0.5, 0.0, 1.0]]


def test_empty_realization_centering():
    s = center_counts(np.zeros((1, 2)), 16.0, standard_boxes(1)[:2], INFINITE, [0], 1,
                      means=np.array([3.0, 5.0]))[0]
    assert s.centered_scaled.tolist() == [-3.0 / 4.0, -5.0 / 4.0]


def test_recompute_matches_stored():
    fam = rescaled_family(SPEC, 1, 20, 16.0, standard_boxes(1))
    for s in fam:
        assert np.allclose(s.recompute(), s.centered_scaled)


def test_pooled_mean_single_replicate():
    fam = rescaled_family(SPEC, 1, 20, 16.0, standard_boxes(1))
    one = rescaled_sample(SPEC, fam[3].replicate_seed, 16.0, standard_boxes(1), fam[0].means)
    assert np.array_equal(one.centered_scaled, fam[3].centered_scaled)


def test_finite_and_infinite_agree_deep_inside():
    boxes = [Region.box([0.0], [1.0])]
    A = Region.box([-3.0], [4.0])
    seeds = list(range(20))
    inf = raw_counts(SPEC, seeds, 32.0, boxes, INFINITE)
    fin = raw_counts(SPEC, seeds, 32.0, boxes, FINITE, A)
    assert np.array_equal(inf, fin)


def test_box_outside_house_rejected():
    with pytest.raises(ValueError):
        raw_counts(SPEC, [1], 8.0, standard_boxes(1), FINITE, Region.box([0.0], [1.5]))


def test_far_boxes_are_uncorrelated():
    boxes = [Region.box([0.0], [1.0]), Region.box([5.0], [6.0])]
    z = np.stack([s.centered_scaled for s in rescaled_family(SPEC, 2, 1000, 16.0, boxes)])
    r = np.corrcoef(z.T)[0, 1]
    assert abs(r) < 3 / np.sqrt(1000)


def test_null_calibration_with_normal_vectors():
    z = np.random.default_rng(0).standard_normal((1000, 3))
    rep = gaussianity_matrix(z, 1.0, standard_boxes(1))
    assert np.all(np.abs(rep.skewness) < 0.25)
    assert np.all(rep.ad_pvalue > 0.001) and np.all(rep.ks_pvalue > 0.001)
    assert np.allclose(rep.empirical_cov, rep.empirical_cov.T)


def test_ad_rejects_uniform():
    x = np.random.default_rng(1).uniform(size=1000)
    assert anderson_darling_normal(x)[1] < 0.01
    assert lilliefors_pvalue(x)[1] < 0.01


def test_ad_pvalues_roughly_uniform_under_null():
    g = np.random.default_rng(2)
    ps = np.array([anderson_darling_normal(g.standard_normal(200))[1] for _ in range(400)])
    assert 0.03 < (ps < 0.1).mean() < 0.17


def test_degenerate_box_flagged():
    z = np.random.default_rng(3).standard_normal((300, 2))
    z[:, 1] = 0.0
    with pytest.warns(UserWarning):
        rep = gaussianity_matrix(z, 1.0, standard_boxes(1)[:2])
    assert rep.degenerate.tolist() == [False, True]
    assert not rep.passes()


def test_too_few_replicates_rejected():
    with pytest.raises(ValueError):
        gaussianity_matrix(np.zeros((50, 1)), 1.0, standard_boxes(1)[:1])


def test_report_detects_counts_and_records_raw_pvalues():
    fam = rescaled_family(SPEC, 3, 300, 16.0, standard_boxes(1))
    rep = gaussianity_report(fam, 0.036)
    assert rep.lattice_step == pytest.approx(0.25)
    assert rep.ad_pvalue_raw is not None
    d = rep.to_dict()
    assert set(d["checks"]) >= {"skewness", "kurtosis", "anderson_darling"}


def test_boundary_locality_fixture():
    # isolated points far from the boundary: no boundary points at all
    pts = [P((float(x),), 0.1 * (i + 1) % 1.0) for i, x in enumerate([10, 20, 30])]
    out = boundary_split(pts, Region.box([0.0], [40.0]))
    assert (out.plus, out.minus) == (0, 0)


def test_boundary_chain_fixture():
    # outside point b blocks a at the edge; inside, a is accepted only in finite volume
    b = P((-1.0,), 0.1)
    a = P((0.5,), 0.2)
    c = P((2.0,), 0.3)
    out = boundary_split([b, a, c], Region.box([0.0], [10.0]))
    assert (out.plus, out.minus) == (1, 1)
    b2 = P((-1.5,), 0.1)
    out = boundary_split([b2, P((0.4,), 0.2), P((4.0,), 0.3)], Region.box([0.0], [10.0]))
    assert (out.plus, out.minus) == (1, 0)


def test_boundary_fixture_engine_matches_lazy():
    fld_spec = FieldSpec(1, tau=1.0)
    A = Region.box([0.0], [1.0])
    for seed in range(5):
        lazy = boundary_processes(fld_spec, seed, 30.0, A)
        from rsalab.fields import sample_window
        pts = sample_window(fld_spec.make(seed), Region.box([-60.0], [90.0]))
        explicit = boundary_split(pts, A.scaled(30.0))
        assert (lazy.plus, lazy.minus) == (explicit.plus, explicit.minus)


def test_boundary_distances_near_edge():
    out = boundary_processes(FieldSpec(2, tau=1.0), 4, 16.0, Region.cube(2, 1.0))
    assert np.all(out.plus_distances < 8.0) and np.all(out.minus_distances < 8.0)


def test_scaling_fit_needs_three_points():
    with pytest.raises(ValueError):
        ScalingFit.fit([1.0, 2.0], [1.0, 2.0])
    f = ScalingFit.fit([1.0, 2.0, 4.0], [3.0, 6.0, 12.0])
    assert f.slope == pytest.approx(1.0) and f.r_squared == pytest.approx(1.0)


def test_cone_tail_basics():
    ct = cone_tail(SPEC, np.arange(2.0, 8.5, 1.0), n_samples=2000, seed=1)
    assert ct.beta == default_beta(1.0) == 4.0
    assert np.all(np.diff(ct.escape) <= 0)
    huge = escape_curve(ct.excess, [ct.excess.max() + 1.0], ct.beta)
    assert huge.escape[0] == 0.0 and huge.censored[0]


def test_cone_tail_rejects_bad_inputs():
    with pytest.raises(ValueError):
        cone_tail(SPEC, [3.0, 2.0], n_samples=10)
    with pytest.raises(ValueError):
        cone_tail(SPEC, [2.0, 3.0], beta=-1.0, n_samples=10)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=30))
def test_escape_probability_nonincreasing(excess):
    ct = escape_curve(np.array(excess), np.linspace(-6, 6, 13), 4.0)
    assert np.all(np.diff(ct.escape) <= 0)
