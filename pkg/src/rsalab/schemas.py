"""JSON schemas and CSV column contracts for every emitted file."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import jsonschema

_num = {"type": "number"}
_num_or_null = {"type": ["number", "null"]}
_vec = {"type": "array", "items": _num_or_null}
_mat = {"type": "array", "items": _vec}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["pack", "correlate", "clt", "boundary", "cones", "nn", "oracle"]},
        "dimension": {"type": "integer", "minimum": 1, "maximum": 3},
        "mode": {"enum": ["infinite", "finite"]},
        "substrate": {"enum": ["continuum", "lattice"]},
        "tau": {"anyOf": [{"type": "number", "exclusiveMinimum": 0}, {"const": "inf"}]},
        "lambdas": {"type": "array", "minItems": 1,
                    "items": {"type": "number", "exclusiveMinimum": 0}},
        "boxes": {"type": ["array", "null"]},
        "house": {"type": ["array", "null"]},
        "replicates": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "options": {"type": "object"},
        "out": {"type": "string"},
    },
}

GAUSSIANITY_SCHEMA = {
    "type": "object",
    "required": ["n_replicates", "lambda", "skewness", "excess_kurtosis", "ks_statistic",
                 "ks_pvalue", "ad_statistic", "ad_pvalue", "empirical_cov", "predicted_cov",
                 "cov_standard_error", "max_relative_deviation", "c_estimate", "degenerate",
                 "checks"],
    "properties": {
        "n_replicates": {"type": "integer", "minimum": 1},
        "lambda": _num,
        "skewness": _vec,
        "excess_kurtosis": _vec,
        "ks_statistic": _vec,
        "ks_pvalue": {"type": "array", "items": {"type": ["number", "null"], "minimum": 0,
                                                 "maximum": 1}},
        "ad_statistic": _vec,
        "ad_pvalue": {"type": "array", "items": {"type": ["number", "null"], "minimum": 0,
                                                 "maximum": 1}},
        "ks_pvalue_raw": {"type": ["array", "null"]},
        "ad_pvalue_raw": {"type": ["array", "null"]},
        "lattice_step": _num_or_null,
        "empirical_cov": _mat,
        "cov_standard_error": _mat,
        "predicted_cov": _mat,
        "max_relative_deviation": _num,
        "c_estimate": _num,
        "degenerate": {"type": "array", "items": {"type": "boolean"}},
        "checks": {"type": "object", "additionalProperties": {"type": "boolean"}},
    },
}

_vector_result = {
    "type": "object",
    "required": ["mode", "boxes", "reports"],
    "properties": {
        "mode": {"enum": ["infinite", "finite"]},
        "boxes": {"type": "array"},
        "reports": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "required": ["lambda", "c_estimate", "report", "passes"],
            "properties": {"lambda": _num, "report": GAUSSIANITY_SCHEMA,
                           "passes": {"type": "boolean"},
                           "c_estimate": {"type": "object", "required": ["value", "method"]}},
        }},
        "stabilization": {"type": "object"},
    },
}

RESULT_SCHEMAS = {
    "pack": {"type": "object", "required": ["densities"]},
    "correlate": {"type": "object", "required": ["intensity", "intensity_se", "c_estimate"]},
    "clt": _vector_result,
    "nn": _vector_result,
    "boundary": {"type": "object", "required": ["fits", "house"]},
    "cones": {"type": "object", "required": ["beta", "fit", "non_increasing"]},
    "oracle": {"type": "object", "required": ["window", "checks"]},
}


def summary_schema(kind: str) -> dict:
    return {
        "type": "object",
        "required": ["kind", "seed", "replicates", "config", "result"],
        "properties": {
            "kind": {"const": kind},
            "seed": {"type": "integer"},
            "replicates": {"type": "integer", "minimum": 1},
            "config": {"type": "object"},
            "result": RESULT_SCHEMAS[kind],
        },
    }


MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["config", "master_seed", "replicate_seeds", "tool_version", "started",
                 "finished", "files"],
    "properties": {
        "config": CONFIG_SCHEMA,
        "master_seed": {"type": "integer"},
        "replicate_seeds": {"type": "object",
                            "additionalProperties": {"type": "array",
                                                     "items": {"type": "integer"}}},
        "tool_version": {"type": "string"},
        "started": {"type": "string"},
        "finished": {"type": "string"},
        "workers": {"type": "integer", "minimum": 1},
        "files": {"type": "object",
                  "additionalProperties": {"type": "string", "pattern": "^[0-9a-f]{64}$"}},
    },
}

# Leading columns of replicates.csv / curves.csv; the vector experiments append
# raw_<i> and z_<i> for every box i.
REPLICATE_COLUMNS = {
    "pack": ["lambda", "replicate", "seed", "n_points", "n_accepted", "density"],
    "correlate": ["replicate", "seed", "n_accepted"],
    "clt": ["lambda", "replicate", "seed"],
    "nn": ["lambda", "replicate", "seed"],
    "boundary": ["lambda", "replicate", "seed", "plus", "minus"],
    "cones": ["replicate", "seed", "excess"],
    "oracle": ["tau", "replicate", "seed", "n_accepted", "density"],
}

CURVE_COLUMNS = {
    "pack": ["lambda", "mean_density", "density_se"],
    "correlate": ["bin_lo", "bin_hi", "center", "estimate", "standard_error", "pair_count"],
    "clt": ["lambda", "box", "mean", "skewness", "excess_kurtosis", "ad_pvalue", "ks_pvalue"],
    "nn": ["lambda", "box", "mean", "skewness", "excess_kurtosis", "ad_pvalue", "ks_pvalue"],
    "boundary": ["lambda", "plus_mean", "plus_variance", "minus_mean", "minus_variance"],
    "cones": ["R", "escape", "standard_error", "censored"],
    "oracle": ["tau", "oracle_density", "mean_density", "standard_error"],
}


class SchemaError(ValueError):
    pass


def validate_config_dict(data: dict) -> None:
    jsonschema.validate(data, CONFIG_SCHEMA)


def _check_csv(text: str, expected: list, vector: bool) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError("empty CSV")
    header = rows[0]
    if header[:len(expected)] != expected:
        raise SchemaError(f"CSV header {header} does not start with {expected}")
    extra = header[len(expected):]
    if vector:
        m = len(extra) // 2
        if extra != [f"raw_{i}" for i in range(m)] + [f"z_{i}" for i in range(m)]:
            raise SchemaError(f"unexpected vector columns {extra}")
    elif extra:
        raise SchemaError(f"unexpected columns {extra}")
    for row in rows[1:]:
        if len(row) != len(header):
            raise SchemaError("ragged CSV row")
        for v in row:
            float(v)
    return rows


def validate_outputs(directory) -> dict:
    """Validate every file of a result directory; returns the parsed summary."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    jsonschema.validate(manifest, MANIFEST_SCHEMA)
    summary = json.loads((d / "summary.json").read_text())
    kind = summary.get("kind")
    if kind not in RESULT_SCHEMAS:
        raise SchemaError(f"unknown kind {kind!r}")
    jsonschema.validate(summary, summary_schema(kind))
    vector = kind in ("clt", "nn")
    _check_csv((d / "replicates.csv").read_text(), REPLICATE_COLUMNS[kind], vector)
    _check_csv((d / "curves.csv").read_text(), CURVE_COLUMNS[kind], False)
    return summary
