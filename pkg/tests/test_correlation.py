import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsalab.correlation import (BinnedCorrelation, ProbabilityEstimate, R1Profile,
                                VarianceSeries, covariogram, estimate_C, estimate_rbar,
                                free_fraction_1d, moments_from_correlations, r1_profile,
                                rbar_indicators, spatial_pair_correlation, clustering_gap,
                                lattice_r1_decay)
from rsalab.fields import LATTICE, UNBOUNDED, FieldSpec, Region, SpaceTimePoint
from rsalab.oracles import brute_force_sigma_oracle, renyi_insertion_probability
from rsalab.packing import pack_windows_infinite

P = SpaceTimePoint
SPEC = FieldSpec(1, tau=1.0)


def test_probability_estimate_invariants():
    est = ProbabilityEstimate.from_indicators(np.array([1, 0, 1, 1]))
    assert est.value == 0.75 and est.n_samples == 4
    lo, hi = est.interval()
    assert 0 <= lo <= hi <= 1
    with pytest.raises(ValueError):
        ProbabilityEstimate(0.5, 0.1, 0)


def test_time_zero_point_always_packed():
    assert estimate_rbar([P((0.0,), 0.0)], SPEC, 200).value == 1.0


def test_overlapping_pair_with_joint_blocking_is_zero():
    est = estimate_rbar([P((0.0,), 0.3), P((1.0,), 0.6)], SPEC, 100)
    assert est.value == 0.0 and est.standard_error == 0.0 and est.degenerate


def test_rbar_matches_brute_force_insertion():
    w = P((0.0,), 0.5)
    est = estimate_rbar([w], SPEC, 2000, seed=5)
    ind = rbar_indicators([w], SPEC, 400, True, seed=5)
    from rsalab.correlation import _TAG_RBAR
    from rsalab import rng
    seeds = rng.derive_seeds(5, 400, _TAG_RBAR)
    brute = np.array([brute_force_sigma_oracle(10.0, 20.0, w, int(s)) for s in seeds])
    assert np.array_equal(ind.astype(bool), brute.astype(bool))
    assert abs(est.value - renyi_insertion_probability(0.5)) <= 3 * est.standard_error


def test_joint_insertion_can_rescue_a_test_point():
    # w2 blocks the field point that alone would block w1: joint acceptance exceeds
    # the separate product on this configuration
    from rsalab.packing import pack_sequential
    field_pt, w1, w2 = P((1.5,), 0.5), P((0.0,), 0.7), P((3.0,), 0.4)
    alone = pack_sequential([field_pt, w1])
    assert not alone.accepted[1]
    joint = pack_sequential([w2, field_pt, w1])
    assert joint.accepted.tolist() == [True, False, True]


def test_joint_equals_separate_for_distant_points():
    pts = [P((0.0,), 0.7), P((60.0,), 0.4)]
    joint = rbar_indicators(pts, SPEC, 300, True, seed=2)
    sep = rbar_indicators(pts, SPEC, 300, False, seed=2)
    assert np.array_equal(joint, sep)


def test_profile_vanishes_after_tau_and_decreases():
    prof = r1_profile(SPEC, [0.0, 0.25, 0.5, 0.75, 1.0, 1.5], 40, seed=1, window_side=256)
    assert prof.values[-1] == 0.0
    assert prof.values[0] == 1.0
    diffs = np.diff(prof.values[:-1])
    assert np.all(diffs <= 3 * prof.standard_errors[1:-1])


def test_profile_matches_insertion_formula():
    t = np.array([0.25, 0.5, 1.0])
    prof = r1_profile(SPEC, t, 60, seed=4, window_side=512)
    exact = np.array([renyi_insertion_probability(v) for v in t])
    assert np.all(np.abs(prof.values - exact) <= 3 * prof.standard_errors + 1e-12)


def test_window_and_insertion_methods_agree():
    t = [0.6]
    a = r1_profile(SPEC, t, 2000, seed=3, method="insertion")
    b = r1_profile(SPEC, t, 40, seed=3, window_side=256)
    se = np.hypot(a.standard_errors, b.standard_errors)
    assert abs(a.values[0] - b.values[0]) <= 3 * se[0]


def test_free_fraction_simple():
    # one accepted ball at 5 born at t=0.2 blocks (3, 7) from time 0.2
    f = free_fraction_1d(np.array([[5.0]]), np.array([0.2]), 0.0, 10.0, np.array([0.1, 0.5]))
    assert np.allclose(f, [1.0, 0.6])


def test_lattice_profile_starts_at_one_and_decays():
    spec = FieldSpec(1, LATTICE, UNBOUNDED)
    fit, prof = lattice_r1_decay(spec, np.arange(0.0, 6.5, 1.0), 100, seed=1, window_side=128)
    assert prof.values[0] == 1.0
    assert fit.rate > 0
    assert np.all(prof.values <= np.exp(-prof.t) + 3 * prof.standard_errors + 1e-12)


def _corr_samples(n=60, side=256.0, seed=0):
    return pack_windows_infinite(SPEC.fields(seed, n), Region.cube(1, side))


def test_hard_core_bins_are_exactly_zero():
    bc = spatial_pair_correlation(_corr_samples(20), np.arange(0.0, 6.01, 0.5))
    assert np.all(bc.estimates[bc.bin_edges[1:] <= 2.0] == 0.0)
    assert np.all(bc.estimates[np.isfinite(bc.estimates)] >= 0)


def test_far_bins_approach_intensity_squared():
    bc = spatial_pair_correlation(_corr_samples(), np.arange(0.0, 16.01, 1.0))
    far = bc.centers > 10
    r1sq = bc.intensity_estimate ** 2
    assert np.all(np.abs(bc.estimates[far] - r1sq) <= 3 * bc.standard_errors[far] + 0.002)


def test_window_doubling_is_consistent():
    edges = np.arange(2.0, 8.01, 1.0)
    a = spatial_pair_correlation(_corr_samples(40, 256.0, 1), edges)
    b = spatial_pair_correlation(_corr_samples(40, 512.0, 2), edges)
    se = np.hypot(a.standard_errors, b.standard_errors)
    assert np.all(np.abs(a.estimates - b.estimates) <= 3.5 * se)


def test_empty_bins_are_flagged():
    with pytest.warns(UserWarning):
        bc = spatial_pair_correlation(_corr_samples(2, 8.0), np.array([0.0, 2.0, 30.0]))
    assert bc.empty[-1] and np.isnan(bc.estimates[-1])


def test_independent_process_gives_poisson_constant():
    edges = np.arange(0.0, 10.01, 0.5)
    r1 = 0.3
    table = BinnedCorrelation.from_values(edges, np.full(edges.size - 1, r1 ** 2), r1)
    est = estimate_C(table, method="corr")
    assert est.value == pytest.approx(r1)


def test_var_method_is_variance_over_volume():
    counts = np.array([[3.0], [5.0], [4.0], [8.0]])
    est = estimate_C(VarianceSeries(np.array([2.0]), counts, 1.0, 1), method="var")
    assert est.value == pytest.approx(counts.var(ddof=1) / 2.0)


def test_zero_volume_moments():
    table = BinnedCorrelation.from_values(np.array([0.0, 1.0]), np.array([0.0]), 0.3)
    prof = R1Profile(np.array([0.0, 1.0]), np.array([1.0, 0.5]), np.zeros(2),
                     np.zeros((1, 2)), "window", 1.0)
    assert tuple(moments_from_correlations(prof, table, Region())) == (0.0, 0.0)


def test_poisson_like_variance_equals_mean():
    r1 = 0.4
    edges = np.arange(0.0, 5.01, 0.5)
    table = BinnedCorrelation.from_values(edges, np.full(edges.size - 1, r1 ** 2), r1)
    prof = R1Profile(np.array([0.0, 1.0]), np.array([r1, r1]), np.zeros(2),
                     np.zeros((1, 2)), "window", 1.0)
    mean, var = moments_from_correlations(prof, table, Region.box([0.0], [20.0]))
    assert var == pytest.approx(mean)


def test_covariogram_of_interval():
    region = Region.box([0.0], [5.0])
    assert covariogram(region, np.array([[0.0], [2.0], [6.0]])).tolist() == [5.0, 3.0, 0.0]


def test_moment_prediction_matches_counts():
    samples = pack_windows_infinite(SPEC.fields(8, 200), Region.cube(1, 64.0))
    counts = np.array([s.n_accepted for s in samples], dtype=float)
    bc = spatial_pair_correlation(samples, np.arange(0.0, 20.01, 0.25))
    prof = r1_profile(SPEC, np.linspace(0.0, 1.0, 41), 40, seed=9, window_side=512)
    pred = moments_from_correlations(prof, bc, Region.cube(1, 64.0))
    se = np.hypot(counts.std(ddof=1) / np.sqrt(counts.size), pred.mean_se)
    assert abs(pred.mean - counts.mean()) <= 3 * se


def test_overlapping_tuples_have_large_gap():
    gap = clustering_gap([P((0.0,), 0.1)], [P((0.0,), 0.1)], [0.5], 2000, SPEC, seed=1)
    # joint probability is zero, so the gap is minus the product of marginals
    assert gap.rbar_joint[0] == 0.0
    assert gap.gap[0] < -0.4
    prod = gap.rbar_first[0] * gap.rbar_second[0]
    assert abs(gap.gap[0] + prod) <= 3 * gap.gap_se[0] + 0.02


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=200))
def test_estimates_are_probabilities(bits):
    est = ProbabilityEstimate.from_indicators(np.array(bits))
    assert 0 <= est.value <= 1 and est.standard_error >= 0


def test_standard_error_scales_with_sample_size():
    w = [P((0.0,), 0.8)]
    a = estimate_rbar(w, SPEC, 1000, seed=1)
    b = estimate_rbar(w, SPEC, 4000, seed=2)
    assert 1.6 < a.standard_error / b.standard_error < 2.5
