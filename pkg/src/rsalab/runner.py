"""Experiment orchestration: seeded replicates on a worker pool, deterministic merge,
atomic result persistence."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import shutil
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from rsalab import __version__, rng
from rsalab.config import ConfigError, ExperimentConfig
from rsalab.correlation import VarianceSeries, estimate_C, spatial_pair_correlation
from rsalab.fields import CONTINUUM, LATTICE, UNBOUNDED, FieldSpec, Region
from rsalab.limits import (_TAG_BOUNDARY, cone_excess_for, cone_seeds, default_beta, escape_curve,
                           fit_boundary, gaussianity_matrix, raw_counts, rescaled_seeds,
                           standard_boxes, boundary_processes_many)
from rsalab.nn import nn_raw_measures, nn_seeds, stabilization_radius
from rsalab.oracles import renyi_density_oracle
from rsalab.packing import pack_windows_finite, pack_windows_infinite

OUTPUT_FILES = ("summary.json", "replicates.csv", "curves.csv", "manifest.json")

# seed-path tags private to the runner
_TAG_PACK = 41
_TAG_CVAR = 42
_TAG_NN_CVAR = 43
_TAG_ORACLE = 44
_TAG_CORR = 45

WORKERS_ENV = "RSALAB_WORKERS"


class DiagnosticError(RuntimeError):
    """A numerical or diagnostic failure inside an experiment."""


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()


@dataclass
class ExperimentResult:
    summary: dict
    replicates: Table
    curves: Table
    seeds: dict


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


# -- parallel map -----------------------------------------------------------------------


def resolve_workers(workers: Optional[int]) -> int:
    if workers is None:
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                workers = int(env)
            except ValueError as exc:
                raise ConfigError(f"{WORKERS_ENV} must be an integer") from exc
        else:
            workers = 1
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    return workers


def _chunks(items: Sequence, n_chunks: int) -> list:
    n = len(items)
    n_chunks = max(1, min(n_chunks, n))
    bounds = np.linspace(0, n, n_chunks + 1).round().astype(int)
    return [list(items[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def parallel_map(fn: Callable, args: dict, seeds: Sequence[int], workers: int) -> list:
    """``fn(args, seed_chunk)`` over chunks of ``seeds``; results concatenated in seed order.

    Every replicate depends only on its own seed, so the concatenation is the same
    for any chunking and worker count.
    """
    seeds = [int(s) for s in seeds]
    if workers == 1 or len(seeds) < 2:
        return list(fn(args, seeds))
    parts = _chunks(seeds, 4 * workers)
    out: list = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for res in pool.map(fn, [args] * len(parts), parts):
            out.extend(res)
    return out


# -- helpers ----------------------------------------------------------------------------------


def _spec(cfg: ExperimentConfig) -> FieldSpec:
    if cfg.substrate == LATTICE:
        return FieldSpec(cfg.dimension, LATTICE, UNBOUNDED)
    return FieldSpec(cfg.dimension, CONTINUUM, cfg.tau)


def _spec_of(args: dict) -> FieldSpec:
    return FieldSpec(args["dimension"], args["substrate"], args["tau"])


def _regions(spec_list, default):
    if spec_list is None:
        return default
    return [Region.box(lo, hi) for lo, hi in spec_list]


def _boxes(cfg: ExperimentConfig) -> list[Region]:
    return _regions(cfg.boxes, standard_boxes(cfg.dimension))


def _house(cfg: ExperimentConfig, boxes: Sequence[Region]) -> Region:
    if cfg.house is not None:
        return Region(tuple((tuple(map(float, lo)), tuple(map(float, hi)))
                            for lo, hi in cfg.house))
    lo = np.min([b.bounds[0] for b in boxes], axis=0) - 1.0
    hi = np.max([b.bounds[1] for b in boxes], axis=0) + 1.0
    return Region.box(lo, hi)


def _region_spec(regions: Sequence[Region]) -> list:
    return [[list(map(float, lo)), list(map(float, hi))] for r in regions for lo, hi in r.boxes]


def _base_args(cfg: ExperimentConfig) -> dict:
    tau = UNBOUNDED if cfg.substrate == LATTICE else cfg.tau
    return {"dimension": cfg.dimension, "substrate": cfg.substrate, "tau": tau,
            "mode": cfg.mode}


def _c_from_counts(counts: np.ndarray, lam: float, d: int) -> dict:
    est = estimate_C(VarianceSeries(np.array([lam]), counts[:, None], 1.0, d), method="var")
    return {"value": est.value, "standard_error": est.standard_error, "method": "var",
            "lambda": lam, "replicates": int(counts.size)}


# -- workers (top level so they pickle) ----------------------------------------------------


def _w_pack(args, seeds):
    spec = _spec_of(args)
    region = Region.cube(spec.dimension, args["lam"])
    fields = [spec.make(s) for s in seeds]
    if args["mode"] == "finite" and spec.mode == CONTINUUM:
        samples = pack_windows_finite(fields, region)
    else:
        samples = pack_windows_infinite(fields, region)
    return [(len(s), s.n_accepted) for s in samples]


def _w_corr(args, seeds):
    spec = _spec_of(args)
    region = Region.cube(spec.dimension, args["lam"])
    samples = pack_windows_infinite([spec.make(s) for s in seeds], region)
    # keep accepted points only; the pair estimator never looks at rejected ones
    return [s.subset(s.accepted) for s in samples]


def _w_counts(args, seeds):
    spec = _spec_of(args)
    boxes = [Region.box(lo, hi) for lo, hi in args["boxes"]]
    A = None if args.get("house") is None else Region(
        tuple((tuple(lo), tuple(hi)) for lo, hi in args["house"]))
    return list(raw_counts(spec, seeds, args["lam"], boxes, args["mode"], A))


def _w_nn(args, seeds):
    spec = _spec_of(args)
    boxes = [Region.box(lo, hi) for lo, hi in args["boxes"]]
    A = None if args.get("house") is None else Region(
        tuple((tuple(lo), tuple(hi)) for lo, hi in args["house"]))
    return list(nn_raw_measures(spec, seeds, args["lam"], boxes, args["mode"], A))


def _w_boundary(args, seeds):
    spec = _spec_of(args)
    A = Region(tuple((tuple(lo), tuple(hi)) for lo, hi in args["house"]))
    return [(o.plus, o.minus) for o in boundary_processes_many(spec, seeds, args["lam"], A)]


def _w_cones(args, seeds):
    return list(cone_excess_for(_spec_of(args), seeds, args["beta"]))


# -- experiments --------------------------------------------------------------------------------


def _exp_pack(cfg, workers):
    rows, curves, seeds_out = [], [], {}
    d = cfg.dimension
    per_lambda = []
    for k, lam in enumerate(cfg.lambdas):
        seeds = rng.derive_seeds(cfg.seed, cfg.replicates, _TAG_PACK, k)
        seeds_out[f"lambda_{k}"] = seeds.tolist()
        args = dict(_base_args(cfg), lam=lam)
        res = parallel_map(_w_pack, args, seeds, workers)
        vol = lam ** d
        dens = np.array([acc / vol for _, acc in res])
        for r, (s, (n_pts, acc)) in enumerate(zip(seeds, res)):
            rows.append([lam, r, int(s), n_pts, acc, acc / vol])
        se = float(dens.std(ddof=1) / math.sqrt(dens.size)) if dens.size > 1 else 0.0
        entry = {"lambda": lam, "mean_density": float(dens.mean()), "density_se": se}
        if d == 1 and cfg.substrate == CONTINUUM:
            entry["renyi_density"] = renyi_density_oracle(cfg.tau)
        per_lambda.append(entry)
        curves.append([lam, float(dens.mean()), se])
    return ExperimentResult(
        {"densities": per_lambda},
        Table(["lambda", "replicate", "seed", "n_points", "n_accepted", "density"], rows),
        Table(["lambda", "mean_density", "density_se"], curves), seeds_out)


def _exp_correlate(cfg, workers):
    lam = cfg.lambdas[0]
    seeds = rng.derive_seeds(cfg.seed, cfg.replicates, _TAG_CORR)
    args = dict(_base_args(cfg), lam=lam)
    samples = parallel_map(_w_corr, args, seeds, workers)
    step = float(cfg.option("bin_width", 0.25))
    r_max = float(cfg.option("r_max", 24.0 if cfg.dimension == 1 else 8.0))
    edges = np.arange(0.0, r_max + step / 2, step)
    region = Region.cube(cfg.dimension, lam)
    bc = spatial_pair_correlation(samples, edges, region)
    c = estimate_C(bc, method="corr")
    rows = [[r, int(s), s_.n_accepted] for r, (s, s_) in enumerate(zip(seeds, samples))]
    centers = bc.centers
    curves = [[edges[i], edges[i + 1], centers[i], bc.estimates[i], bc.standard_errors[i],
               bc.pair_counts[i]] for i in range(len(centers))]
    summary = {"intensity": bc.intensity_estimate, "intensity_se": bc.intensity_se,
               "c_estimate": {"value": c.value, "standard_error": c.standard_error,
                              "truncation_error": c.truncation_error, "method": "corr"},
               "window": lam}
    return ExperimentResult(summary, Table(["replicate", "seed", "n_accepted"], rows),
                            Table(["bin_lo", "bin_hi", "center", "estimate", "standard_error",
                                   "pair_count"], curves), {"replicates": seeds.tolist()})


def _vector_experiment(cfg, workers, worker, main_tag_seeds, cvar_tag, kind):
    boxes = _boxes(cfg)
    A = _house(cfg, boxes) if cfg.mode == "finite" else None
    d = cfg.dimension
    base = dict(_base_args(cfg), boxes=_region_spec(boxes),
                house=None if A is None else [[list(lo), list(hi)] for lo, hi in A.boxes])
    rows, curves, reports, seeds_out = [], [], [], {}
    seeds = main_tag_seeds(cfg.seed, cfg.replicates)
    seeds_out["replicates"] = seeds.tolist()
    n_c = int(cfg.option("c_replicates", cfg.replicates))
    for k, lam in enumerate(cfg.lambdas):
        raw = np.array(parallel_map(worker, dict(base, lam=lam), seeds, workers), dtype=float)
        means = raw.mean(axis=0)
        z = (raw - means) / lam ** (d / 2)
        if "c_estimate" in cfg.options:
            c = {"value": float(cfg.options["c_estimate"]), "standard_error": None,
                 "method": "config"}
        else:
            cseeds = rng.derive_seeds(cfg.seed, n_c, cvar_tag, k)
            seeds_out[f"c_lambda_{k}"] = cseeds.tolist()
            unit = [[[0.0] * d, [1.0] * d]]
            cargs = dict(_base_args(cfg), boxes=unit, house=None, mode="infinite", lam=lam)
            counts = np.array(parallel_map(worker, cargs, cseeds, workers), dtype=float)[:, 0]
            c = _c_from_counts(counts, lam, d)
        integer = kind == "clt"
        rep = gaussianity_matrix(z, c["value"], boxes, lam,
                                 min_replicates=min(200, cfg.replicates),
                                 lattice_step=1.0 / lam ** (d / 2) if integer else None,
                                 jitter_seed=rng.derive_seed(cfg.seed, 46, k))
        reports.append({"lambda": lam, "c_estimate": c, "report": rep.to_dict(),
                        "passes": rep.passes()})
        for r, s in enumerate(seeds):
            rows.append([lam, r, int(s)] + raw[r].tolist() + z[r].tolist())
        for i in range(len(boxes)):
            curves.append([lam, i, means[i], rep.skewness[i], rep.excess_kurtosis[i],
                           rep.ad_pvalue[i], rep.ks_pvalue[i]])
    m = len(boxes)
    cols = ["lambda", "replicate", "seed"] + [f"raw_{i}" for i in range(m)] + \
        [f"z_{i}" for i in range(m)]
    summary = {"mode": cfg.mode, "boxes": _region_spec(boxes), "reports": reports}
    return ExperimentResult(summary, Table(cols, rows),
                            Table(["lambda", "box", "mean", "skewness", "excess_kurtosis",
                                   "ad_pvalue", "ks_pvalue"], curves), seeds_out)


def _exp_clt(cfg, workers):
    return _vector_experiment(cfg, workers, _w_counts, rescaled_seeds, _TAG_CVAR, "clt")


def _exp_nn(cfg, workers):
    res = _vector_experiment(cfg, workers, _w_nn, nn_seeds, _TAG_NN_CVAR, "nn")
    probes = int(cfg.option("stabilization_probes", 0))
    if probes > 0:
        sr = stabilization_radius(FieldSpec(cfg.dimension, CONTINUUM, 1.0), cfg.seed, probes)
        res.summary["stabilization"] = {
            "probes": probes, "cap": sr.cap, "censored": int(sr.censored.sum()),
            "t_grid": sr.t_grid, "tail": sr.tail, "tail_se": sr.tail_se,
            "rate": None if sr.fit is None else sr.fit.rate,
            "r_squared": None if sr.fit is None else sr.fit.r_squared,
        }
    return res


def _exp_boundary(cfg, workers):
    A = _house(cfg, []) if cfg.house is not None else Region.cube(cfg.dimension, 1.0)
    lams = cfg.lambdas
    plus = np.zeros((cfg.replicates, len(lams)))
    minus = np.zeros_like(plus)
    rows, seeds_out = [], {}
    for k, lam in enumerate(lams):
        seeds = rng.derive_seeds(cfg.seed, cfg.replicates, _TAG_BOUNDARY, k)
        seeds_out[f"lambda_{k}"] = seeds.tolist()
        args = dict(_base_args(cfg), lam=lam,
                    house=[[list(lo), list(hi)] for lo, hi in A.boxes])
        out = parallel_map(_w_boundary, args, seeds, workers)
        for r, (s, (p, m)) in enumerate(zip(seeds, out)):
            plus[r, k], minus[r, k] = p, m
            rows.append([lam, r, int(s), p, m])
    bs = fit_boundary(lams, plus, minus)
    fits = {name: None if f is None else {"slope": f.slope, "intercept": f.intercept,
                                          "r_squared": f.r_squared, "dropped": f.dropped}
            for name, f in bs.fits.items()}
    curves = [[lam, plus[:, k].mean(), plus[:, k].var(ddof=1), minus[:, k].mean(),
               minus[:, k].var(ddof=1)] for k, lam in enumerate(lams)]
    return ExperimentResult({"fits": fits, "house": _region_spec([A])},
                            Table(["lambda", "replicate", "seed", "plus", "minus"], rows),
                            Table(["lambda", "plus_mean", "plus_variance", "minus_mean",
                                   "minus_variance"], curves), seeds_out)


def _exp_cones(cfg, workers):
    beta = float(cfg.option("beta", default_beta(cfg.tau)))
    if not beta > 0:
        raise ConfigError("beta must be positive")
    r_grid = np.asarray(cfg.option("r_grid", list(np.arange(2.0, 10.5, 1.0))), dtype=float)
    seeds = cone_seeds(cfg.seed, cfg.replicates)
    excess = np.array(parallel_map(_w_cones, dict(_base_args(cfg), beta=beta), seeds, workers))
    ct = escape_curve(excess, r_grid, beta)
    rows = [[r, int(s), e] for r, (s, e) in enumerate(zip(seeds, excess))]
    curves = [[R, p, se, bool(c)] for R, p, se, c in zip(r_grid, ct.escape, ct.escape_se,
                                                           ct.censored)]
    fit = None if ct.fit is None else {"rate": ct.fit.rate, "amplitude": ct.fit.amplitude,
                                       "r_squared": ct.fit.r_squared}
    monotone = bool(np.all(np.diff(ct.escape) <= 0))
    return ExperimentResult({"beta": beta, "fit": fit, "non_increasing": monotone},
                            Table(["replicate", "seed", "excess"], rows),
                            Table(["R", "escape", "standard_error", "censored"], curves),
                            {"replicates": seeds.tolist()})


def _exp_oracle(cfg, workers):
    if cfg.dimension != 1:
        raise ConfigError("the density oracle is one-dimensional")
    taus = [float(t) for t in cfg.option("taus", [cfg.tau])]
    lam = cfg.lambdas[0]
    rows, curves, checks, seeds_out = [], [], [], {}
    for k, tau in enumerate(taus):
        oracle = renyi_density_oracle(tau)
        seeds = rng.derive_seeds(cfg.seed, cfg.replicates, _TAG_ORACLE, k)
        seeds_out[f"tau_{k}"] = seeds.tolist()
        args = {"dimension": 1, "substrate": CONTINUUM, "tau": tau, "mode": "infinite",
                "lam": lam}
        res = parallel_map(_w_pack, args, seeds, workers)
        dens = np.array([acc / lam for _, acc in res])
        for r, (s, (_, acc)) in enumerate(zip(seeds, res)):
            rows.append([tau, r, int(s), acc, acc / lam])
        se = float(dens.std(ddof=1) / math.sqrt(dens.size)) if dens.size > 1 else float("nan")
        z = (dens.mean() - oracle) / se if se > 0 else float("nan")
        checks.append({"tau": tau, "oracle": oracle, "mean_density": float(dens.mean()),
                       "standard_error": se, "z_score": float(z)})
        curves.append([tau, oracle, float(dens.mean()), se])
    return ExperimentResult({"window": lam, "checks": checks},
                            Table(["tau", "replicate", "seed", "n_accepted", "density"], rows),
                            Table(["tau", "oracle_density", "mean_density", "standard_error"],
                                  curves), seeds_out)


EXPERIMENTS: dict[str, Callable] = {
    "pack": _exp_pack,
    "correlate": _exp_correlate,
    "clt": _exp_clt,
    "boundary": _exp_boundary,
    "cones": _exp_cones,
    "nn": _exp_nn,
    "oracle": _exp_oracle,
}


# -- persistence ---------------------------------------------------------------------------------


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def execute(cfg: ExperimentConfig, workers: Optional[int] = None) -> ExperimentResult:
    cfg.validate()
    return EXPERIMENTS[cfg.kind](cfg, resolve_workers(workers))


def run(cfg: ExperimentConfig, workers: Optional[int] = None,
        out: Optional[str] = None) -> dict:
    """Run ``cfg`` and write its result files; returns the manifest.

    Files are written to a scratch directory next to the target and moved into
    place only when every file is complete, so a failure leaves no partial output.
    """
    target = Path(out or cfg.out)
    workers = resolve_workers(workers)
    started = _now()
    result = execute(cfg, workers)
    summary = {"kind": cfg.kind, "seed": cfg.seed, "replicates": cfg.replicates,
               "config": cfg.to_json_dict(), "result": _jsonable(result.summary)}
    summary["config"].pop("out", None)
    target.parent.mkdir(parents=True, exist_ok=True)
    if target.exists() and (not target.is_dir() or
                            any(p.name not in OUTPUT_FILES for p in target.iterdir())):
        raise FileExistsError(f"{target} exists and is not a previous result directory")
    scratch = Path(tempfile.mkdtemp(prefix=".rsalab-", dir=target.parent))
    try:
        (scratch / "summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2, allow_nan=False) + "\n")
        (scratch / "replicates.csv").write_text(result.replicates.to_csv())
        (scratch / "curves.csv").write_text(result.curves.to_csv())
        manifest = {
            "config": cfg.to_json_dict(), "master_seed": cfg.seed, "replicate_seeds": result.seeds,
            "tool_version": __version__, "started": started, "finished": _now(),
            "workers": workers,
            "files": {name: _digest(scratch / name)
                      for name in ("summary.json", "replicates.csv", "curves.csv")},
        }
        (scratch / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2, allow_nan=False) + "\n")
        if target.exists():
            shutil.rmtree(target)
        os.replace(scratch, target)
    except BaseException:
        shutil.rmtree(scratch, ignore_errors=True)
        raise
    return manifest


def verify_manifest(directory) -> bool:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    return all(_digest(d / name) == h for name, h in manifest["files"].items())
