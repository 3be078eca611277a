"""Rescaled count vectors, Gaussianity diagnostics, boundary processes and cone tails."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from rsalab import rng
from rsalab.fields import FieldSpec, Region, SpaceTimePoint
from rsalab.packing import (
    DIAMETER,
    PackedSample,
    explore,
    pack_sequential,
    pack_windows_finite,
    pack_windows_infinite,
)
from rsalab.stats import DecayFit, InsufficientDataError, ScalingFit, fit_exponential

INFINITE = "infinite"
FINITE = "finite"

_TAG_CLT = 21
_TAG_BOUNDARY = 22
_TAG_CONES = 23


# -- box families ------------------------------------------------------------------


def standard_boxes(dimension: int) -> list[Region]:
    """Two disjoint unit boxes and a third overlapping the first by half its volume."""
    rest_lo, rest_hi = (0.0,) * (dimension - 1), (1.0,) * (dimension - 1)
    return [
        Region.box((0.0,) + rest_lo, (1.0,) + rest_hi),
        Region.box((2.0,) + rest_lo, (3.0,) + rest_hi),
        Region.box((0.5,) + rest_lo, (1.5,) + rest_hi),
    ]


def _union(regions: Sequence[Region]) -> Region:
    return Region(tuple(b for r in regions for b in r.boxes))


# -- rescaled samples ----------------------------------------------------------------


@dataclass
class RescaledVectorSample:
    lam: float
    boxes: list[Region]
    raw_counts: np.ndarray
    centered_scaled: np.ndarray
    means: np.ndarray
    mode: str
    replicate_seed: int
    dimension: int

    def __post_init__(self):
        if not (len(self.boxes) == self.raw_counts.size == self.centered_scaled.size):
            raise ValueError("vector lengths must match the box count")

    def recompute(self) -> np.ndarray:
        return (self.raw_counts - self.means) / self.lam ** (self.dimension / 2)


def _check_inside(boxes: Sequence[Region], A: Region) -> None:
    for b in boxes:
        for lo, hi in b.boxes:
            corners = np.array([lo, np.nextafter(np.array(hi), -np.inf)])
            if not A.contains(corners).all():
                raise ValueError(f"box {b.boxes} is not contained in A")


def raw_counts(spec: FieldSpec, seeds: Sequence[int], lam: float, boxes: Sequence[Region],
               mode: str = INFINITE, A: Optional[Region] = None) -> np.ndarray:
    """Accepted counts in every ``lam * B_i``, one row per field seed."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    scaled = [b.scaled(lam) for b in boxes]
    fields = [spec.make(int(s)) for s in seeds]
    if mode == INFINITE:
        samples = pack_windows_infinite(fields, _union(scaled))
    elif mode == FINITE:
        if A is None:
            raise ValueError("finite-volume mode needs the house region A")
        _check_inside(boxes, A)
        samples = pack_windows_finite(fields, A.scaled(lam))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return counts_in_boxes(samples, scaled)


def counts_in_boxes(samples: Sequence[PackedSample], regions: Sequence[Region]) -> np.ndarray:
    out = np.zeros((len(samples), len(regions)))
    for s, sample in enumerate(samples):
        xa = sample.accepted_x
        for k, r in enumerate(regions):
            out[s, k] = r.contains(xa).sum() if xa.shape[0] else 0
    return out


def rescaled_family(spec: FieldSpec, master_seed: int, n_replicates: int, lam: float,
                    boxes: Sequence[Region], mode: str = INFINITE,
                    A: Optional[Region] = None, counts: Optional[np.ndarray] = None
                    ) -> list[RescaledVectorSample]:
    """Replicates centred by the pooled empirical mean and scaled by ``lam^{d/2}``."""
    seeds = [int(s) for s in rescaled_seeds(master_seed, n_replicates)]
    if counts is None:
        counts = raw_counts(spec, seeds, lam, boxes, mode, A)
    return center_counts(counts, lam, boxes, mode, seeds, spec.dimension)


def rescaled_seeds(master_seed: int, n: int) -> np.ndarray:
    return rng.derive_seeds(master_seed, n, _TAG_CLT)


def center_counts(counts: np.ndarray, lam: float, boxes: Sequence[Region], mode: str,
                  seeds: Sequence[int], dimension: int,
                  means: Optional[np.ndarray] = None) -> list[RescaledVectorSample]:
    counts = np.asarray(counts, dtype=float)
    means = counts.mean(axis=0) if means is None else np.asarray(means, dtype=float)
    scale = lam ** (dimension / 2)
    return [RescaledVectorSample(lam, list(boxes), counts[r], (counts[r] - means) / scale, means,
                                 mode, int(seeds[r]), dimension) for r in range(counts.shape[0])]


def rescaled_sample(spec: FieldSpec, seed: int, lam: float, boxes: Sequence[Region],
                    means, mode: str = INFINITE, A: Optional[Region] = None
                    ) -> RescaledVectorSample:
    """One replicate centred by externally supplied (pooled) means."""
    counts = raw_counts(spec, [seed], lam, boxes, mode, A)
    return center_counts(counts, lam, boxes, mode, [seed], spec.dimension, means)[0]


# -- Gaussianity ------------------------------------------------------------------------


def anderson_darling_normal(x: np.ndarray) -> tuple[float, float]:
    """A^2 against a normal with estimated mean and variance, with its p-value.

    Uses the small-sample modification ``A^2 (1 + 0.75/n + 2.25/n^2)`` and the
    piecewise p-value approximation for the composite normal hypothesis.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    z = (x - x.mean()) / x.std(ddof=1)
    logcdf = stats.norm.logcdf(z)
    logsf = stats.norm.logsf(z)
    i = np.arange(1, n + 1)
    a2 = -n - np.mean((2 * i - 1) * (logcdf + logsf[::-1]))
    a = a2 * (1 + 0.75 / n + 2.25 / n ** 2)
    if a >= 0.6:
        p = math.exp(1.2937 - 5.709 * a + 0.0186 * a ** 2)
    elif a >= 0.34:
        p = math.exp(0.9177 - 4.279 * a - 1.38 * a ** 2)
    elif a >= 0.2:
        p = 1 - math.exp(-8.318 + 42.796 * a - 59.938 * a ** 2)
    else:
        p = 1 - math.exp(-13.436 + 101.14 * a - 223.73 * a ** 2)
    return float(a2), float(min(max(p, 0.0), 1.0))


def _ks_normal_statistic(z: np.ndarray) -> np.ndarray:
    """KS distance to N(0,1) after standardizing each row by its own mean and SD."""
    z = np.sort(z, axis=-1)
    n = z.shape[-1]
    z = (z - z.mean(axis=-1, keepdims=True)) / z.std(axis=-1, ddof=1, keepdims=True)
    cdf = stats.norm.cdf(z)
    i = np.arange(1, n + 1)
    return np.maximum((i / n - cdf).max(axis=-1), (cdf - (i - 1) / n).max(axis=-1))


@lru_cache(maxsize=16)
def _lilliefors_null(n: int, n_sim: int, seed: int) -> np.ndarray:
    gen = np.random.default_rng(seed)
    out = []
    for start in range(0, n_sim, 500):
        m = min(500, n_sim - start)
        out.append(_ks_normal_statistic(gen.standard_normal((m, n))))
    return np.sort(np.concatenate(out))


def lilliefors_pvalue(x: np.ndarray, n_sim: int = 2000, seed: int = 0) -> tuple[float, float]:
    """KS statistic with estimated parameters and its simulated p-value."""
    x = np.asarray(x, dtype=float)
    d = float(_ks_normal_statistic(x[None, :])[0])
    null = _lilliefors_null(x.size, n_sim, seed)
    exceed = null.size - np.searchsorted(null, d, side="left")
    return d, float((exceed + 1) / (null.size + 1))


@dataclass
class GaussianityReport:
    n_replicates: int
    lam: float
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    ks_statistic: np.ndarray
    ks_pvalue: np.ndarray
    ad_statistic: np.ndarray
    ad_pvalue: np.ndarray
    empirical_cov: np.ndarray
    cov_standard_error: np.ndarray
    predicted_cov: np.ndarray
    max_relative_deviation: float
    c_estimate: float
    degenerate: np.ndarray
    lattice_step: Optional[float] = None
    ks_pvalue_raw: Optional[np.ndarray] = None
    ad_pvalue_raw: Optional[np.ndarray] = None

    def checks(self, max_skew: float = 0.15, max_kurt: float = 0.3, min_ad_p: float = 0.01,
               cov_rtol: float = 0.15, zero_k_se: float = 3.0) -> dict[str, bool]:
        nonzero = self.predicted_cov != 0
        rel = np.abs(self.empirical_cov - self.predicted_cov)[nonzero] / \
            np.abs(self.predicted_cov[nonzero])
        zero_ok = np.abs(self.empirical_cov[~nonzero]) <= zero_k_se * self.cov_standard_error[~nonzero]
        return {
            "skewness": bool(np.all(np.abs(self.skewness) <= max_skew)),
            "kurtosis": bool(np.all(np.abs(self.excess_kurtosis) <= max_kurt)),
            "anderson_darling": bool(np.all(self.ad_pvalue > min_ad_p)),
            "covariance_nonzero": bool(np.all(rel <= cov_rtol)),
            "covariance_zero": bool(np.all(zero_ok)),
            "nondegenerate": bool(not self.degenerate.any()),
        }

    def passes(self, **kw) -> bool:
        return all(self.checks(**kw).values())

    def to_dict(self) -> dict:
        def lst(a):
            return np.asarray(a, dtype=float).tolist()

        return {
            "n_replicates": int(self.n_replicates), "lambda": float(self.lam),
            "skewness": lst(self.skewness), "excess_kurtosis": lst(self.excess_kurtosis),
            "ks_statistic": lst(self.ks_statistic), "ks_pvalue": lst(self.ks_pvalue),
            "ad_statistic": lst(self.ad_statistic), "ad_pvalue": lst(self.ad_pvalue),
            "empirical_cov": lst(self.empirical_cov),
            "cov_standard_error": lst(self.cov_standard_error),
            "predicted_cov": lst(self.predicted_cov),
            "max_relative_deviation": float(self.max_relative_deviation),
            "c_estimate": float(self.c_estimate),
            "degenerate": [bool(v) for v in self.degenerate],
            "lattice_step": None if self.lattice_step is None else float(self.lattice_step),
            "ks_pvalue_raw": None if self.ks_pvalue_raw is None else lst(self.ks_pvalue_raw),
            "ad_pvalue_raw": None if self.ad_pvalue_raw is None else lst(self.ad_pvalue_raw),
            "checks": self.checks(),
        }


def gaussianity_matrix(z: np.ndarray, c_estimate: float, boxes: Sequence[Region],
                       lam: float = 1.0, min_replicates: int = 200, n_sim: int = 2000,
                       lattice_step: Optional[float] = None,
                       jitter_seed: int = 0) -> GaussianityReport:
    """Report for an ``(n, m)`` matrix of rescaled values over ``m`` boxes.

    When the values live on a lattice of spacing ``lattice_step`` (rescaled
    counts), the KS and AD tests are run on values jittered uniformly within one
    lattice cell, since ties make any continuous goodness-of-fit test reject for
    reasons unrelated to the shape of the distribution. Raw-value p-values are
    kept alongside. Moments and covariances always use the raw values.
    """
    z = np.asarray(z, dtype=float)
    n, m = z.shape
    if n < min_replicates:
        raise ValueError(f"need at least {min_replicates} replicates, got {n}")
    sd = z.std(axis=0, ddof=1)
    degenerate = sd == 0
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} box(es) have zero variance", stacklevel=2)
    skew = np.full(m, np.nan)
    kurt = np.full(m, np.nan)
    ks_d, ks_p = np.full(m, np.nan), np.full(m, np.nan)
    ad_a, ad_p = np.full(m, np.nan), np.full(m, np.nan)
    ks_raw, ad_raw = np.full(m, np.nan), np.full(m, np.nan)
    tested = z
    if lattice_step is not None:
        jitter = np.random.default_rng(jitter_seed).uniform(-0.5, 0.5, z.shape)
        tested = z + lattice_step * jitter
    for k in np.flatnonzero(~degenerate):
        skew[k] = stats.skew(z[:, k], bias=False)
        kurt[k] = stats.kurtosis(z[:, k], fisher=True, bias=False)
        ks_d[k], ks_p[k] = lilliefors_pvalue(tested[:, k], n_sim)
        ad_a[k], ad_p[k] = anderson_darling_normal(tested[:, k])
        ks_raw[k] = lilliefors_pvalue(z[:, k], n_sim)[1]
        ad_raw[k] = anderson_darling_normal(z[:, k])[1]
    zc = z - z.mean(axis=0)
    cov = zc.T @ zc / (n - 1)
    prod = zc[:, :, None] * zc[:, None, :]
    cov_se = prod.std(axis=0, ddof=1) / math.sqrt(n)
    inter = np.array([[a.intersection_volume(b) for b in boxes] for a in boxes])
    pred = c_estimate * inter
    nonzero = pred != 0
    rel = np.abs(cov - pred)[nonzero] / np.abs(pred[nonzero])
    return GaussianityReport(n, lam, skew, kurt, ks_d, ks_p, ad_a, ad_p, cov, cov_se, pred,
                             float(rel.max()) if rel.size else 0.0, float(c_estimate), degenerate,
                             lattice_step, ks_raw, ad_raw)


def gaussianity_report(samples: Sequence[RescaledVectorSample], c_estimate: float,
                       **kwargs) -> GaussianityReport:
    if not samples:
        raise ValueError("no samples")
    lam = samples[0].lam
    if any(s.lam != lam or len(s.boxes) != len(samples[0].boxes) for s in samples):
        raise ValueError("samples must share lambda and boxes")
    z = np.stack([s.centered_scaled for s in samples])
    raw = np.stack([s.raw_counts for s in samples])
    if "lattice_step" not in kwargs and np.array_equal(raw, np.round(raw)):
        kwargs["lattice_step"] = 1.0 / lam ** (samples[0].dimension / 2)
    return gaussianity_matrix(z, float(c_estimate), samples[0].boxes, lam, **kwargs)


# -- boundary processes ------------------------------------------------------------------


@dataclass
class BoundaryOutcome:
    plus: int
    minus: int
    plus_distances: np.ndarray
    minus_distances: np.ndarray

    def __iter__(self):
        return iter((self.plus, self.minus))


def _split(finite: PackedSample, infinite: PackedSample, region: Region) -> BoundaryOutcome:
    if finite.uid is None or infinite.uid is None:
        raise ValueError("boundary split needs point uids")
    fin = dict(zip(finite.uid.tolist(), finite.accepted.tolist()))
    inf = dict(zip(infinite.uid.tolist(), infinite.accepted.tolist()))
    if fin.keys() != inf.keys():
        raise RuntimeError("finite and infinite runs disagree on the input inside the window")
    pos = {u: x for u, x in zip(finite.uid.tolist(), finite.x)}
    plus = [u for u in fin if fin[u] and not inf[u]]
    minus = [u for u in fin if inf[u] and not fin[u]]

    def dist(us):
        if not us:
            return np.zeros(0)
        return region.distance_to_boundary(np.array([pos[u] for u in us]))

    return BoundaryOutcome(len(plus), len(minus), dist(plus), dist(minus))


def boundary_split(points: Sequence[SpaceTimePoint], A: Region) -> BoundaryOutcome:
    """Split on an explicit complete configuration: pack it all, and pack only ``A``."""
    pts = sorted(points, key=lambda p: (p.t, p.x))
    full = pack_sequential(pts)
    inside = A.contains(full.x) if len(full) else np.zeros(0, dtype=bool)
    sub = [p for p, keep in zip(pts, inside) if keep]
    fin = pack_sequential(sub)
    uid = np.arange(len(full), dtype=np.uint64)
    infinite = PackedSample(full.x[inside], full.t[inside], full.accepted[inside], uid=uid[inside])
    finite = PackedSample(fin.x, fin.t, fin.accepted, uid=uid[inside])
    return _split(finite, infinite, A)


def boundary_processes(spec: FieldSpec, seed: int, lam: float, A: Region) -> BoundaryOutcome:
    """Coupled finite-volume and restricted infinite-volume packings of ``lam * A``."""
    return boundary_processes_many(spec, [seed], lam, A)[0]


def boundary_processes_many(spec: FieldSpec, seeds: Sequence[int], lam: float,
                            A: Region) -> list[BoundaryOutcome]:
    region = A.scaled(lam)
    fields = [spec.make(int(s)) for s in seeds]
    fin = pack_windows_finite(fields, region)
    inf = pack_windows_infinite(fields, region)
    return [_split(f, i, region) for f, i in zip(fin, inf)]


@dataclass
class BoundaryScaling:
    lambdas: np.ndarray
    plus_counts: np.ndarray  # (replicates, len(lambdas))
    minus_counts: np.ndarray
    fits: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)


def boundary_scaling(spec: FieldSpec, lambdas: Sequence[float], A: Region, replicates: int,
                     seed: int = 0) -> BoundaryScaling:
    """Log-log fits of mean and variance of the boundary counts against ``lambda``."""
    lams = np.asarray(lambdas, dtype=float)
    if lams.size < 3:
        raise ValueError("need at least three lambda values")
    plus = np.zeros((replicates, lams.size))
    minus = np.zeros((replicates, lams.size))
    for k, lam in enumerate(lams):
        seeds = rng.derive_seeds(seed, replicates, _TAG_BOUNDARY, k)
        for r, out in enumerate(boundary_processes_many(spec, seeds, float(lam), A)):
            plus[r, k], minus[r, k] = out.plus, out.minus
    return fit_boundary(lams, plus, minus)


def fit_boundary(lambdas, plus: np.ndarray, minus: np.ndarray) -> BoundaryScaling:
    """Log-log fits for ``(replicates, len(lambdas))`` count tables."""
    lams = np.asarray(lambdas, dtype=float)
    res = BoundaryScaling(lams, plus, minus)
    for name, arr in (("plus", plus), ("minus", minus), ("total", plus + minus)):
        for stat, vals in (("mean", arr.mean(axis=0)), ("variance", arr.var(axis=0, ddof=1))):
            ok = vals > 0
            if not ok.all():
                dropped = lams[~ok].tolist()
                warnings.warn(f"{name} {stat}: dropping zero values at lambda={dropped}",
                              stacklevel=2)
                res.dropped.append((name, stat, dropped))
            try:
                res.fits[f"{name}_{stat}"] = ScalingFit.fit(lams[ok], vals[ok],
                                                            dropped=lams[~ok].tolist())
            except ValueError:
                res.fits[f"{name}_{stat}"] = None
    return res


# -- cone tails ------------------------------------------------------------------------------


@dataclass
class ConeTail:
    r_grid: np.ndarray
    escape: np.ndarray
    escape_se: np.ndarray
    excess: np.ndarray  # per sample: max over cone of |x - y| - beta |t_x - t_y|
    beta: float
    fit: Optional[DecayFit]
    censored: np.ndarray


def default_beta(tau: float) -> float:
    return 4.0 * max(1.0, 1.0 / tau)


def cone_excess(spec: FieldSpec, n_samples: int, beta: float, seed: int = 0,
                chunk: int = 4096) -> np.ndarray:
    """For a typical point ``w`` (time uniform on ``[0, tau]``), the smallest ``R`` with
    its causal cone inside ``{|x - y| <= beta |t_x - t_y| + R}``."""
    return cone_excess_for(spec, cone_seeds(seed, n_samples), beta, chunk)


def cone_seeds(seed: int, n: int) -> np.ndarray:
    return rng.derive_seeds(seed, n, _TAG_CONES)


def cone_excess_for(spec: FieldSpec, seeds: Sequence[int], beta: float,
                    chunk: int = 4096) -> np.ndarray:
    """``cone_excess`` for explicit per-sample seeds; each sample's test time comes
    from its own field, so any split of the seed list gives the same values."""
    n_samples = len(seeds)
    fields = [spec.make(int(s)) for s in seeds]
    if math.isfinite(spec.tau):
        times = spec.tau * np.array([f.probe_uniforms(1, _TAG_CONES)[0] for f in fields])
    else:
        times = np.ones(n_samples)
    origin = np.zeros((1, spec.dimension))
    out = np.zeros(n_samples)
    for start in range(0, n_samples, chunk):
        part = fields[start:start + chunk]
        m = len(part)
        ins = [(origin, times[start + k:start + k + 1]) for k in range(m)]
        ex = explore(part, np.zeros((m, spec.dimension)), np.zeros((m, spec.dimension)),
                     inserted=ins, direction="both", pack=False)
        sel = ex.member
        sid = ex.sid[sel]
        tw = times[start + sid]
        ex_val = np.sqrt((ex.x[sel] ** 2).sum(axis=1)) - beta * np.abs(ex.t[sel] - tw)
        np.maximum.at(out, start + sid, ex_val)
    return out


def escape_curve(excess: np.ndarray, r_grid, beta: float) -> "ConeTail":
    r = np.asarray(r_grid, dtype=float)
    n = excess.size
    esc = (excess[:, None] > r[None, :]).mean(axis=0)
    se = np.sqrt(esc * (1 - esc) / n)
    censored = esc == 0
    try:
        fit = fit_exponential(r[~censored], esc[~censored])
    except InsufficientDataError:
        fit = None
    return ConeTail(r, esc, se, excess, beta, fit, censored)


def cone_tail(spec: FieldSpec, r_grid, beta: Optional[float] = None, n_samples: int = 10000,
              seed: int = 0) -> ConeTail:
    """Escape probability of the causal cone from ``C_R`` on a grid of ``R`` with a decay fit."""
    r = np.asarray(r_grid, dtype=float)
    if np.any(np.diff(r) <= 0):
        raise ValueError("R grid must be ascending")
    beta = default_beta(spec.tau) if beta is None else float(beta)
    if beta <= 0:
        raise ValueError("beta must be positive")
    excess = cone_excess(spec, n_samples, beta, seed)
    return escape_curve(excess, r, beta)


# keep the public surface in one place
__all__ = [
    "BoundaryOutcome",
    "BoundaryScaling",
    "ConeTail",
    "DIAMETER",
    "FINITE",
    "GaussianityReport",
    "INFINITE",
    "RescaledVectorSample",
    "ScalingFit",
    "anderson_darling_normal",
    "boundary_processes",
    "boundary_processes_many",
    "boundary_scaling",
    "boundary_split",
    "fit_boundary",
    "center_counts",
    "cone_excess",
    "cone_excess_for",
    "cone_seeds",
    "escape_curve",
    "cone_tail",
    "counts_in_boxes",
    "default_beta",
    "gaussianity_matrix",
    "gaussianity_report",
    "lilliefors_pvalue",
    "raw_counts",
    "rescaled_family",
    "rescaled_sample",
    "rescaled_seeds",
    "standard_boxes",
]
