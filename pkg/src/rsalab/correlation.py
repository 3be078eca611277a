"""Estimators for acceptance probabilities, correlation functions and the covariance constant."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special
from scipy.spatial import cKDTree

from rsalab.fields import LATTICE, FieldSpec, Region, SpaceTimePoint, SplitField
from rsalab.packing import DIAMETER, PackedSample, explore, pack_windows_infinite
from rsalab.stats import (
    DecayFit,
    InsufficientDataError,
    ScalingFit,
    fit_exponential,
    jackknife,
    mean_se,
    variance_se,
)

# sub-stream tags for derived seeds, so experiments never share randomness
_TAG_RBAR = 11
_TAG_PROFILE = 12
_TAG_GAP = 13
_TAG_GAP_COPY = 14
_TAG_PROBES = 15

_CHUNK = 4096


@dataclass(frozen=True)
class ProbabilityEstimate:
    value: float
    standard_error: float
    n_samples: int
    degenerate: bool = False

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("n_samples must be positive")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"probability {self.value} outside [0, 1]")

    @classmethod
    def from_indicators(cls, ind) -> "ProbabilityEstimate":
        ind = np.asarray(ind, dtype=float)
        m, se = mean_se(ind)
        return cls(float(m), float(se), int(ind.size))

    def interval(self, k: float = 3.0) -> tuple[float, float]:
        return (max(0.0, self.value - k * self.standard_error),
                min(1.0, self.value + k * self.standard_error))


def _unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def _test_arrays(test_points: Sequence[SpaceTimePoint]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.array([p.x for p in test_points], dtype=float)
    ts = np.array([p.t for p in test_points], dtype=float)
    if len({(tuple(x), t) for x, t in zip(map(tuple, xs), ts)}) != len(ts):
        raise ValueError("test points must be pairwise distinct")
    return xs, ts


def _batched_flags(sources, xs, ts, cap=None) -> np.ndarray:
    """Flags of the test points inserted jointly into each source, ``(n, k)``."""
    out = []
    lo, hi = xs.min(axis=0), xs.max(axis=0)
    for start in range(0, len(sources), _CHUNK):
        part = sources[start:start + _CHUNK]
        n = len(part)
        ex = explore(part, np.repeat(lo[None], n, 0), np.repeat(hi[None], n, 0),
                     inserted=[(xs, ts)] * n, cap=cap)
        out.append(ex.inserted_flags(len(ts)))
    return np.concatenate(out)


def rbar_indicators(test_points: Sequence[SpaceTimePoint], spec: FieldSpec, n_samples: int,
                    joint_blocking: bool = True, seed: int = 0) -> np.ndarray:
    """Per-sample indicator that every test point is packed."""
    xs, ts = _test_arrays(test_points)
    fields = spec.fields(seed, n_samples, _TAG_RBAR)
    if joint_blocking:
        return _batched_flags(fields, xs, ts).all(axis=1)
    flags = np.ones(n_samples, dtype=bool)
    for k in range(len(ts)):
        flags &= _batched_flags(fields, xs[k:k + 1], ts[k:k + 1])[:, 0]
    return flags


def _mutually_exclusive(xs: np.ndarray) -> bool:
    if xs.shape[0] < 2:
        return False
    diff = xs[:, None, :] - xs[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    np.fill_diagonal(dist, np.inf)
    return bool((dist < DIAMETER).any())


def estimate_rbar(test_points: Sequence[SpaceTimePoint], spec: FieldSpec, n_samples: int,
                  joint_blocking: bool = True, seed: int = 0) -> ProbabilityEstimate:
    """Probability that all test points are packed against an independent input sample.

    With ``joint_blocking`` the test points are inserted together and may block
    each other; otherwise each is decided against the input alone.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    xs, _ = _test_arrays(test_points)
    if joint_blocking and _mutually_exclusive(xs):
        # two overlapping balls can never both be packed
        return ProbabilityEstimate(0.0, 0.0, n_samples, degenerate=True)
    ind = rbar_indicators(test_points, spec, n_samples, joint_blocking, seed)
    return ProbabilityEstimate.from_indicators(ind)


# -- one-point profile ---------------------------------------------------------


@dataclass
class R1Profile:
    t: np.ndarray
    values: np.ndarray
    standard_errors: np.ndarray
    per_sample: np.ndarray  # (n_samples, len(t))
    method: str
    tau: float

    @property
    def estimates(self) -> list[ProbabilityEstimate]:
        n = self.per_sample.shape[0]
        return [ProbabilityEstimate(float(v), float(s), n) for v, s in
                zip(self.values, self.standard_errors)]

    def integral(self) -> tuple[float, float]:
        """Trapezoid integral over the grid with its standard error."""
        per = np.trapezoid(self.per_sample, self.t, axis=1)
        m, se = mean_se(per)
        return float(m), float(se)

    def loglog_slope(self, t_lo: float, t_hi: float) -> ScalingFit:
        sel = (self.t >= t_lo) & (self.t <= t_hi) & (self.values > 0)
        return ScalingFit.fit(self.t[sel], self.values[sel])


def first_block_times(acc_x: np.ndarray, acc_t: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Earliest arrival among accepted balls overlapping each probe (``inf`` if none)."""
    out = np.full(probes.shape[0], np.inf)
    if acc_x.shape[0] == 0 or probes.shape[0] == 0:
        return out
    pairs = cKDTree(probes).sparse_distance_matrix(cKDTree(acc_x), DIAMETER,
                                                   output_type="ndarray")
    pairs = pairs[pairs["v"] < DIAMETER]
    np.minimum.at(out, pairs["i"], acc_t[pairs["j"]])
    return out


def free_fraction_1d(acc_x: np.ndarray, acc_t: np.ndarray, lo: float, hi: float,
                     t_grid: np.ndarray) -> np.ndarray:
    """Exact fraction of ``[lo, hi)`` where a ball arriving at each ``t`` fits (d = 1)."""
    x = acc_x.ravel()
    order = np.argsort(x)
    x, at = x[order], acc_t[order]
    out = np.empty(len(t_grid))
    for k, t in enumerate(t_grid):
        c = x[at < t]
        a = np.clip(c - DIAMETER, lo, hi)
        b = np.clip(c + DIAMETER, lo, hi)
        # sorted centres give sorted interval starts; merge by running maximum of ends
        if a.size:
            run_end = np.maximum.accumulate(b)
            prev_end = np.concatenate([[lo], run_end[:-1]])
            covered = np.clip(b - np.maximum(a, prev_end), 0, None).sum()
        else:
            covered = 0.0
        out[k] = 1.0 - covered / (hi - lo)
    return out


def _window_probes(spec: FieldSpec, window: Region, fld, probe_density: float) -> np.ndarray:
    lo, hi = window.bounds
    if spec.mode == LATTICE:
        axes = [np.arange(math.ceil(a), math.ceil(b)) for a, b in zip(lo, hi)]
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=1).astype(float)
    n = max(1, int(math.ceil(probe_density * window.volume)))
    u = fld.probe_uniforms(n * spec.dimension, _TAG_PROBES).reshape(n, spec.dimension)
    return lo + u * (hi - lo)


def r1_profile(spec: FieldSpec, t_grid, n_samples: int, seed: int = 0, method: str = "window",
               window_side: float = 64.0, probe_density: float = 8.0) -> R1Profile:
    """Probability that a test ball arriving at time ``t`` is packed, on a grid of ``t``.

    ``window`` (default) packs ``n_samples`` independent windows exactly and
    averages the insertion indicator over probes in each window; ``insertion``
    inserts one test point at the origin per sample.
    """
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly ascending")
    h = (t >= 0) & (t <= spec.tau)  # time-window indicator
    per = np.zeros((n_samples, t.size))
    live = np.flatnonzero(h)
    if method == "insertion":
        origin = (0.0,) * spec.dimension
        for k in live:
            per[:, k] = rbar_indicators([SpaceTimePoint(origin, float(t[k]))], spec, n_samples,
                                        True, seed)
    elif method == "window":
        window = Region.cube(spec.dimension, window_side)
        padded = window.eroded_box(-DIAMETER)
        fields = spec.fields(seed, n_samples, _TAG_PROFILE)
        samples = pack_windows_infinite(fields, padded)
        exact_1d = spec.dimension == 1 and spec.mode != LATTICE
        for s, (fld, sample) in enumerate(zip(fields, samples)):
            if exact_1d:
                per[s, live] = free_fraction_1d(sample.accepted_x, sample.t[sample.accepted],
                                                0.0, window_side, t[live])
                continue
            probes = _window_probes(spec, window, fld, probe_density)
            tstar = first_block_times(sample.accepted_x, sample.t[sample.accepted], probes)
            per[s, live] = (tstar[:, None] >= t[live][None, :]).mean(axis=0)
    else:
        raise ValueError(f"unknown method {method!r}")
    m, se = mean_se(per)
    return R1Profile(t, m, se, per, method, spec.tau)


def lattice_r1_decay(spec: FieldSpec, t_grid, n_samples: int, seed: int = 0,
                     **kwargs) -> tuple[DecayFit, R1Profile]:
    """Exponential fit to the lattice insertion probability ``r1(t)``."""
    if spec.mode != LATTICE:
        raise ValueError("lattice_r1_decay needs a lattice field")
    prof = r1_profile(spec, t_grid, n_samples, seed, **kwargs)
    fit = fit_exponential(prof.t, prof.values, prof.standard_errors)
    return fit, prof


# -- spatial pair correlation ---------------------------------------------------


@dataclass
class BinnedCorrelation:
    """Radial pair-correlation estimates of the accepted configuration."""

    bin_edges: np.ndarray
    estimates: np.ndarray
    standard_errors: np.ndarray
    pair_counts: np.ndarray
    reference_counts: np.ndarray
    intensity_estimate: float
    intensity_se: float
    dimension: int
    empty: np.ndarray
    sample_pairs: Optional[np.ndarray] = None  # (n_samples, n_bins)
    sample_refs: Optional[np.ndarray] = None
    sample_counts: Optional[np.ndarray] = None
    volume: float = float("nan")

    def __post_init__(self):
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly ascending")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def shell_volumes(self) -> np.ndarray:
        w = _unit_ball_volume(self.dimension)
        return w * (self.bin_edges[1:] ** self.dimension - self.bin_edges[:-1] ** self.dimension)

    @property
    def n_samples(self) -> int:
        return 0 if self.sample_counts is None else self.sample_counts.size

    @classmethod
    def from_values(cls, bin_edges, estimates, intensity: float, dimension: int = 1,
                    standard_errors=None) -> "BinnedCorrelation":
        """Tabulated correlation without underlying samples (for prediction and tests)."""
        est = np.asarray(estimates, dtype=float)
        se = np.zeros_like(est) if standard_errors is None else np.asarray(standard_errors, float)
        zeros = np.zeros(est.size, dtype=np.int64)
        return cls(np.asarray(bin_edges, dtype=float), est, se, zeros, zeros, float(intensity),
                   0.0, dimension, np.zeros(est.size, dtype=bool))


def _region_of(sample: PackedSample) -> Region:
    return Region(tuple(sample.provenance["region"]))


def _pair_statistics(samples: Sequence[PackedSample], edges: np.ndarray, region: Region):
    n_bins = edges.size - 1
    pairs = np.zeros((len(samples), n_bins))
    refs = np.zeros((len(samples), n_bins))
    counts = np.zeros(len(samples))
    for s, sample in enumerate(samples):
        x = sample.accepted_x
        inside = region.contains(x) if x.shape[0] else np.zeros(0, dtype=bool)
        x = x[inside]
        counts[s] = x.shape[0]
        if x.shape[0] == 0:
            continue
        bd = region.distance_to_boundary(x)
        # reference i is usable for a bin when its ball of the bin's outer radius fits
        usable = bd[:, None] >= edges[None, 1:]
        refs[s] = usable.sum(axis=0)
        if x.shape[0] < 2:
            continue
        tree = cKDTree(x)
        sdm = tree.sparse_distance_matrix(tree, edges[-1], output_type="ndarray")
        sdm = sdm[sdm["i"] != sdm["j"]]
        b = np.searchsorted(edges, sdm["v"], side="right") - 1
        ok = (b >= 0) & (b < n_bins) & (sdm["v"] < edges[-1])
        b, i = b[ok], sdm["i"][ok]
        ok = usable[i, b]
        pairs[s] = np.bincount(b[ok], minlength=n_bins)
    return pairs, refs, counts


def spatial_pair_correlation(samples: Sequence[PackedSample], bin_edges,
                             region: Optional[Region] = None) -> BinnedCorrelation:
    """Pair correlation ``r2(s)`` of accepted points with minus-sampling edge correction.

    For a bin with outer radius ``b`` only reference points at distance at least
    ``b`` from the window boundary are used, so every shell is fully observed.
    Standard errors are leave-one-sample-out jackknife.
    """
    if not samples:
        raise ValueError("need at least one sample")
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ValueError("bin_edges must be ascending, nonnegative, with at least two entries")
    region = region or _region_of(samples[0])
    d = region.dimension
    vol = region.volume
    pairs, refs, counts = _pair_statistics(samples, edges, region)
    shell = _unit_ball_volume(d) * (edges[1:] ** d - edges[:-1] ** d)

    def stat(keep):
        r1 = counts[keep].sum() / (keep.sum() * vol)
        n_ref = refs[keep].sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            r2 = r1 * pairs[keep].sum(axis=0) / (n_ref * shell)
        return np.concatenate([[r1], r2])

    full, se = jackknife(stat, len(samples))
    empty = refs.sum(axis=0) == 0
    if empty.any():
        warnings.warn(f"{int(empty.sum())} bin(s) have no usable reference points", stacklevel=2)
    est = full[1:]
    est[empty] = np.nan
    return BinnedCorrelation(
        bin_edges=edges, estimates=est, standard_errors=se[1:],
        pair_counts=pairs.sum(axis=0).astype(np.int64),
        reference_counts=refs.sum(axis=0).astype(np.int64),
        intensity_estimate=float(full[0]), intensity_se=float(se[0]), dimension=d, empty=empty,
        sample_pairs=pairs, sample_refs=refs, sample_counts=counts, volume=vol,
    )


# -- covariance constant ----------------------------------------------------------


@dataclass
class CEstimate:
    value: float
    standard_error: float
    method: str
    truncation_error: float = float("nan")
    series: Optional[dict] = None
    tail_fit: Optional[DecayFit] = None

    def __float__(self) -> float:
        return float(self.value)


@dataclass
class VarianceSeries:
    """Accepted counts in ``lambda * B`` across replicates, one column per ``lambda``."""

    lambdas: np.ndarray
    counts: np.ndarray  # (replicates, len(lambdas))
    box_volume: float
    dimension: int


def _tail_bound(fit: DecayFit, radius: float, d: int) -> float:
    """Bound on the radial integral of ``amplitude * exp(-rate s)`` beyond ``radius``."""
    a = fit.rate
    if not a > 0:
        return float("inf")
    surface = d * _unit_ball_volume(d)
    upper = special.gammaincc(d, a * radius) * math.gamma(d)
    return float(surface * fit.amplitude * upper / a ** d)


def _c_from_table(r1: float, r2: np.ndarray, shell: np.ndarray, valid: np.ndarray) -> float:
    return float(r1 + ((r2[valid] - r1 ** 2) * shell[valid]).sum())


def estimate_C(source, method: str = "corr") -> CEstimate:
    """Covariance constant ``C = int (r2 - r1^2) + r1``.

    ``corr``: midpoint quadrature of a BinnedCorrelation whose first edge is 0,
    with an exponential tail bound beyond the last bin. ``var``: the count
    variance divided by ``lambda^d vol(B)`` at the largest ``lambda`` of a
    VarianceSeries (or a raw count array with ``lambda = 1``).
    """
    if method == "corr":
        bc: BinnedCorrelation = source
        if bc.bin_edges[0] != 0:
            raise ValueError("correlation quadrature needs bins starting at distance 0")
        shell = bc.shell_volumes
        valid = ~bc.empty
        value = _c_from_table(bc.intensity_estimate, bc.estimates, shell, valid)
        if bc.sample_pairs is not None and bc.n_samples > 1:
            counts, pairs, refs = bc.sample_counts, bc.sample_pairs, bc.sample_refs

            def stat(keep):
                r1 = counts[keep].sum() / (keep.sum() * bc.volume)
                with np.errstate(invalid="ignore", divide="ignore"):
                    r2 = r1 * pairs[keep].sum(axis=0) / (refs[keep].sum(axis=0) * shell)
                return np.array([_c_from_table(r1, r2, shell, valid & np.isfinite(r2))])

            _, se = jackknife(stat, bc.n_samples)
            se = float(se[0])
        else:
            se = float(np.sqrt(((bc.standard_errors[valid] * shell[valid]) ** 2).sum()))
        dev = np.abs(bc.estimates - bc.intensity_estimate ** 2)
        beyond = valid & (bc.bin_edges[:-1] >= DIAMETER)
        trunc, fit = float("nan"), None
        try:
            fit = fit_exponential(bc.centers[beyond], dev[beyond], bc.standard_errors[beyond],
                                  drop_sigma=3.0)
            trunc = _tail_bound(fit, float(bc.bin_edges[-1]), bc.dimension)
        except InsufficientDataError:
            # correlations already at the noise floor inside the table
            trunc = 0.0
        return CEstimate(value, se, "corr", trunc, tail_fit=fit)
    if method == "var":
        if isinstance(source, VarianceSeries):
            vs = source
        else:
            counts = np.asarray(source, dtype=float)
            vs = VarianceSeries(np.array([1.0]), counts.reshape(-1, 1), 1.0, 1)
        if vs.counts.shape[0] < 2:
            raise ValueError("variance method needs at least two replicates")
        norms = vs.lambdas ** vs.dimension * vs.box_volume
        ratios, errs = [], []
        for k in range(vs.lambdas.size):
            v, e = variance_se(vs.counts[:, k])
            ratios.append(v / norms[k])
            errs.append(e / norms[k])
        last = int(np.argmax(vs.lambdas))
        return CEstimate(float(ratios[last]), float(errs[last]), "var",
                         series={"lambda": vs.lambdas.tolist(), "ratio": ratios, "se": errs})
    raise ValueError(f"unknown method {method!r}")


# -- moment formulas ---------------------------------------------------------------


@dataclass
class MomentPrediction:
    mean: float
    variance: float
    mean_se: float = 0.0

    def __iter__(self):
        return iter((self.mean, self.variance))


def _box_list(region: Region) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([b[0] for b in region.boxes], dtype=float)
    hi = np.array([b[1] for b in region.boxes], dtype=float)
    return lo, hi


def covariogram(region: Region, v: np.ndarray) -> np.ndarray:
    """``vol(R ∩ (R + v))`` for a union of pairwise disjoint boxes, rows of ``v``."""
    lo, hi = _box_list(region)
    v = np.atleast_2d(v)
    total = np.zeros(v.shape[0])
    for a in range(lo.shape[0]):
        for b in range(lo.shape[0]):
            # overlap of box a with box b shifted by v
            lo_ab = np.maximum(lo[a], lo[b] + v)
            hi_ab = np.minimum(hi[a], hi[b] + v)
            total += np.prod(np.clip(hi_ab - lo_ab, 0, None), axis=1)
    return total


def _directions(d: int, n: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        ang = (np.arange(n) + 0.5) * 2 * np.pi / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if d == 3:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        phi = np.pi * (1 + 5 ** 0.5) * k
        r = np.sqrt(1 - z ** 2)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    raise NotImplementedError("covariogram shells are implemented for d <= 3")


def shell_covariogram_integrals(region: Region, edges: np.ndarray, n_dir: int = 256,
                                n_radial: int = 8) -> np.ndarray:
    """``int_{shell_k} vol(R ∩ (R + v)) dv`` for every radial bin."""
    d = region.dimension
    dirs = _directions(d, n_dir)
    surface = d * _unit_ball_volume(d)
    nodes, weights = np.polynomial.legendre.leggauss(n_radial)
    out = np.zeros(edges.size - 1)
    for k in range(edges.size - 1):
        a, b = edges[k], edges[k + 1]
        s = 0.5 * (b - a) * nodes + 0.5 * (b + a)
        w = 0.5 * (b - a) * weights
        for sk, wk in zip(s, w):
            g = covariogram(region, sk * dirs).mean()
            out[k] += wk * surface * sk ** (d - 1) * g
    return out


def moments_from_correlations(r1_curve: R1Profile, r2_table: BinnedCorrelation, region: Region,
                              intensity: str = "table") -> MomentPrediction:
    """Mean and variance of the accepted count in ``region`` from correlation functions.

    Mean: ``vol(R) * int_0^tau r1(t) dt``. Variance: mean plus
    ``int_{R x R} (r2 - r1 r1)``, evaluated with the covariogram of ``R`` over the
    radial bins of ``r2_table``. The subtracted intensity is the table's own
    (``table``) or the integrated curve (``curve``).
    """
    if region.is_empty or region.volume == 0:
        return MomentPrediction(0.0, 0.0, 0.0)
    if r2_table.dimension != region.dimension:
        raise ValueError("r2 table and region differ in dimension")
    if r2_table.bin_edges[0] != 0:
        raise ValueError("r2 table must start at distance 0")
    t = r1_curve.t
    if math.isfinite(r1_curve.tau) and (t[0] > 0 or t[-1] < r1_curve.tau):
        raise ValueError("r1 curve must cover the whole time window [0, tau]")
    lo, hi = _box_list(region)
    for a in range(lo.shape[0]):
        for b in range(a + 1, lo.shape[0]):
            if np.all(np.minimum(hi[a], hi[b]) > np.maximum(lo[a], lo[b])):
                raise ValueError("region boxes must be pairwise disjoint")
    r1_int, r1_se = r1_curve.integral()
    vol = region.volume
    mean = vol * r1_int
    r1 = r2_table.intensity_estimate if intensity == "table" else r1_int
    valid = ~r2_table.empty & np.isfinite(r2_table.estimates)
    shells = shell_covariogram_integrals(region, r2_table.bin_edges)
    variance = mean + float(((r2_table.estimates[valid] - r1 ** 2) * shells[valid]).sum())
    return MomentPrediction(float(mean), float(variance), float(vol * r1_se))


# -- clustering ----------------------------------------------------------------------


@dataclass
class ClusteringGap:
    separations: np.ndarray
    gap: np.ndarray
    gap_se: np.ndarray
    p_cone: np.ndarray  # P[backward cones of some cross pair meet]
    p_cone_se: np.ndarray
    rbar_joint: np.ndarray
    rbar_first: np.ndarray
    rbar_second: np.ndarray
    n_samples: int
    gap_fit: Optional[DecayFit] = None
    cone_fit: Optional[DecayFit] = None
    below_noise: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def bound_holds(self, const: float = 3.0, k_se: float = 3.0) -> np.ndarray:
        """Pointwise ``|gap| <= const * sqrt(P[E^c]) + k_se * SE``."""
        return np.abs(self.gap) <= const * np.sqrt(self.p_cone) + k_se * self.gap_se


def _cone_records(sources, xs, ts):
    """Backward cone of each test point inserted alone; per-source member arrays."""
    n = len(sources)
    out = []
    for start in range(0, n, _CHUNK):
        part = sources[start:start + _CHUNK]
        m = len(part)
        ex = explore(part, np.repeat(xs[None], m, 0), np.repeat(xs[None], m, 0),
                     inserted=[(xs[None], np.array([ts]))] * m, pack=False)
        sel = ex.member
        out.append((ex.sid[sel] + start, ex.uid[sel], ex.x[sel], ex.inserted[sel] >= 0))
    return tuple(np.concatenate([o[k] for o in out]) for k in range(4))


def _cones_meet(n, cone_a, cone_b, wa, wb) -> np.ndarray:
    sid_a, uid_a, x_a, ins_a = cone_a
    sid_b, uid_b, x_b, ins_b = cone_b
    meet = np.zeros(n, dtype=bool)
    fa, fb = ~ins_a, ~ins_b
    key_a = np.stack([sid_a[fa].astype(np.uint64), uid_a[fa]], axis=1)
    key_b = np.stack([sid_b[fb].astype(np.uint64), uid_b[fb]], axis=1)
    if key_a.size and key_b.size:
        va = np.ascontiguousarray(key_a).view([("s", np.uint64), ("u", np.uint64)]).ravel()
        vb = np.ascontiguousarray(key_b).view([("s", np.uint64), ("u", np.uint64)]).ravel()
        common = np.intersect1d(va, vb)
        meet[common["s"].astype(np.int64)] = True
    # a test point adjacent to the other cone couples the two decisions
    near_b = np.sqrt(((x_a - wb) ** 2).sum(axis=1)) <= DIAMETER
    near_a = np.sqrt(((x_b - wa) ** 2).sum(axis=1)) <= DIAMETER
    meet[sid_a[near_b]] = True
    meet[sid_b[near_a]] = True
    return meet


def clustering_gap(k_tuple: Sequence[SpaceTimePoint], l_tuple: Sequence[SpaceTimePoint],
                   separations, n_samples: int, spec: FieldSpec, seed: int = 0,
                   fit_range: Optional[tuple[float, float]] = None) -> ClusteringGap:
    """Estimate ``rbar_{k+l} - rbar_k rbar_l`` with the second tuple shifted along axis 0.

    Uses a coupled estimator: with fields ``F`` and an independent copy ``F'``,
    ``Z`` is the joint indicator on ``F``, ``X`` the first tuple on ``F`` left of
    the midpoint and ``F'`` right of it, ``Y`` the second tuple on the swapped
    split. ``X`` and ``Y`` are independent with the right marginals, so
    ``E[Z - XY]`` is the gap, while ``Z = XY`` whenever no cone crosses the
    midpoint.
    """
    if not 1 <= len(k_tuple) <= 2 or not 1 <= len(l_tuple) <= 2:
        raise ValueError("tuple sizes are limited to 1 or 2")
    seps = np.asarray(separations, dtype=float)
    xs1, ts1 = _test_arrays(k_tuple)
    xs2_0, ts2 = _test_arrays(l_tuple)
    d, h = spec.dimension, spec.cell_size
    base = spec.fields(seed, n_samples, _TAG_GAP)
    copy = spec.fields(seed, n_samples, _TAG_GAP_COPY)
    rows = []
    for sep in seps:
        shift = np.zeros(d)
        shift[0] = sep
        xs2 = xs2_0 + shift
        xs = np.concatenate([xs1, xs2])
        ts = np.concatenate([ts1, ts2])
        if _mutually_exclusive(xs):
            z = np.zeros(n_samples, dtype=bool)
        else:
            z = _batched_flags(base, xs, ts).all(axis=1)
        mid = 0.5 * (xs1[:, 0].max() + xs2[:, 0].min())
        cut = int(math.floor(mid / h))
        left = [SplitField(f, g, cut) for f, g in zip(base, copy)]
        right = [SplitField(g, f, cut) for f, g in zip(base, copy)]
        x_t = _batched_flags(left, xs1, ts1).all(axis=1)
        y_t = _batched_flags(right, xs2, ts2).all(axis=1)
        g = z.astype(float) - (x_t & y_t).astype(float)
        cones1 = [_cone_records(base, xs1[a], ts1[a]) for a in range(len(ts1))]
        cones2 = [_cone_records(base, xs2[b], ts2[b]) for b in range(len(ts2))]
        meet = np.zeros(n_samples, dtype=bool)
        for a in range(len(ts1)):
            for b in range(len(ts2)):
                meet |= _cones_meet(n_samples, cones1[a], cones2[b], xs1[a], xs2[b])
        gm, gs = mean_se(g)
        pm, ps = mean_se(meet.astype(float))
        rows.append((gm, gs, pm, ps, z.mean(), x_t.mean(), y_t.mean()))
    arr = np.array(rows, dtype=float)
    res = ClusteringGap(seps, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5],
                        arr[:, 6], n_samples,
                        below_noise=np.abs(arr[:, 0]) <= 2 * arr[:, 1])
    sel = np.ones(seps.size, dtype=bool)
    if fit_range is not None:
        sel = (seps >= fit_range[0]) & (seps <= fit_range[1])
    try:
        res.gap_fit = fit_exponential(seps[sel], np.abs(res.gap[sel]), res.gap_se[sel])
    except InsufficientDataError:
        res.gap_fit = None
    try:
        res.cone_fit = fit_exponential(seps[sel], res.p_cone[sel], res.p_cone_se[sel])
    except InsufficientDataError:
        res.cone_fit = None
    return res
