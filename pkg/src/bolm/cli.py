"""Command line interface.

Five subcommands: ``fit`` (one penalized fit, JSON report plus fitted
log-GOR surface), ``profile`` (AIC over a smoothing grid), ``lrtest``
(penalized likelihood-ratio test of nested models), ``simulate``
(loss benchmark or null-distribution study), ``empirical`` (observed
log-GOR grid).  Every command reads a JSON config validated against a
schema that rejects unknown keys, writes fixed-name files under
``--out``, and is deterministic given the config and ``--seed``.

Exit codes: 0 success, 2 invalid config or data, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from jsonschema import Draft202012Validator
from scipy import stats

from .estimator import (
    FitOptions,
    FitResult,
    SingularFisher,
    fit,
)
from .inference import (
    LrpResult,
    default_null_calibration_truth,
    gray_null_weights,
    is_nested,
    ppom_chi2_test,
    simulate_lrp_null,
    weighted_chisq_pvalue,
)
from .link_map import IncompatibleEta, empirical_log_gors
from .model_core import (
    INTERCEPT,
    Dataset,
    EquationTerms,
    Group,
    ModelSpec,
    OrdinalPair,
    ParamLayout,
    build_design_matrix,
)
from .penalties import PenaltyConfig, build_penalty_matrix
from .simulation import run_table1_experiment


class ConfigError(Exception):
    """Invalid config or data file; maps to exit code 2."""


# ---------------------------------------------------------------------------
# config schemas

_TERM_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "equation": {"enum": [1, 2, 3]},
        "stream": {"enum": [1, 2, 3, 4]},
        "variable": {"type": ["string", "null"]},
        "lambda": {"type": "number", "minimum": 0},
        "order": {"type": "integer", "minimum": 1},
    },
    "required": ["lambda"],
}

_PENALTY_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family"],
    "properties": {
        "family": {
            "enum": ["none", "ridge", "arc1", "arc2", "ordering", "composite"]
        },
        "terms": {"type": "array", "items": _TERM_SCHEMA},
        "lambda1": {"type": "number", "minimum": 0},
        "lambda2": {"type": "number", "minimum": 0},
        "margin": {"type": "number", "minimum": 0},
        "parts": {"type": "array", "items": {"$ref": "#/$defs/penalty"}},
    },
}

_DATASET_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["path", "format"],
    "properties": {
        "path": {"type": "string"},
        "format": {"enum": ["table", "long"]},
        "pair": {
            "type": "array",
            "items": {"type": "integer", "minimum": 2},
            "minItems": 2,
            "maxItems": 2,
        },
        "center": {"type": "boolean"},
    },
}

_EQUATION_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "include": {"type": "array", "items": {"type": "string"}},
        "category_dependent": {"type": "array", "items": {"type": "string"}},
    },
}

_MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "covariates": {"type": "array", "items": {"type": "string"}},
        "eq1": _EQUATION_SCHEMA,
        "eq2": _EQUATION_SCHEMA,
        "eq3": _EQUATION_SCHEMA,
        "uniform_association": {"type": "boolean"},
    },
}

_FIT_OPTIONS_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "max_iter": {"type": "integer", "minimum": 1},
        "grad_tol": {"type": "number", "exclusiveMinimum": 0},
        "step_length": {"type": "number", "exclusiveMinimum": 0},
        "step_halvings": {"type": "integer", "minimum": 0},
    },
}

_SEED_SCHEMA = {"type": "integer", "minimum": 0}

_SCHEMAS = {
    "fit": {
        "$defs": {"penalty": _PENALTY_SCHEMA},
        "type": "object",
        "additionalProperties": False,
        "required": ["dataset", "model"],
        "properties": {
            "dataset": _DATASET_SCHEMA,
            "model": _MODEL_SCHEMA,
            "penalty": {"$ref": "#/$defs/penalty"},
            "fit_options": _FIT_OPTIONS_SCHEMA,
            "seed": _SEED_SCHEMA,
        },
    },
    "profile": {
        "$defs": {"penalty": _PENALTY_SCHEMA},
        "type": "object",
        "additionalProperties": False,
        "required": ["dataset", "model", "s_values"],
        "properties": {
            "dataset": _DATASET_SCHEMA,
            "model": _MODEL_SCHEMA,
            "s_values": {
                "type": "array",
                "items": {"type": "integer", "minimum": 1},
                "minItems": 1,
            },
            "log_lambdas": {
                "type": "array",
                "items": {"type": "number"},
                "minItems": 1,
            },
            "lambdas": {
                "type": "array",
                "items": {"type": "number", "minimum": 0},
                "minItems": 1,
            },
            "fit_options": _FIT_OPTIONS_SCHEMA,
            "seed": _SEED_SCHEMA,
        },
    },
    "lrtest": {
        "$defs": {"penalty": _PENALTY_SCHEMA},
        "type": "object",
        "additionalProperties": False,
        "required": ["dataset", "full", "reduced"],
        "properties": {
            "dataset": _DATASET_SCHEMA,
            "full": _MODEL_SCHEMA,
            "reduced": _MODEL_SCHEMA,
            "full_penalty": {"$ref": "#/$defs/penalty"},
            "reduced_penalty": {"$ref": "#/$defs/penalty"},
            "mc": {
                "type": "object",
                "additionalProperties": False,
                "properties": {
                    "draws": {"type": "integer", "minimum": 1},
                },
            },
            "fit_options": _FIT_OPTIONS_SCHEMA,
            "seed": _SEED_SCHEMA,
        },
    },
    "simulate": {
        "$defs": {"penalty": _PENALTY_SCHEMA},
        "type": "object",
        "additionalProperties": False,
        "required": ["experiment"],
        "properties": {
            "experiment": {"enum": ["loss_benchmark", "null_calibration"]},
            "replicates": {"type": "integer", "minimum": 1},
            "n": {"type": "integer", "minimum": 1},
            "lambdas": {
                "type": "array",
                "items": {"type": "number", "minimum": 0},
                "minItems": 1,
            },
            "seed": _SEED_SCHEMA,
        },
    },
    "empirical": {
        "$defs": {"penalty": _PENALTY_SCHEMA},
        "type": "object",
        "additionalProperties": False,
        "required": ["dataset"],
        "properties": {
            "dataset": _DATASET_SCHEMA,
            "seed": _SEED_SCHEMA,
        },
    },
}


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p) as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    return config


def _validate_config(config: dict, schema: dict) -> None:
    errors = sorted(
        Draft202012Validator(schema).iter_errors(config),
        key=lambda e: e.json_path,
    )
    if errors:
        e = errors[0]
        raise ConfigError(f"config {e.json_path}: {e.message}")


# ---------------------------------------------------------------------------
# data ingestion

def _split_row(line: str) -> list[str]:
    if "," in line:
        return [p.strip() for p in line.split(",")]
    return line.split()


def _read_table_file(path: Path) -> np.ndarray:
    """Whitespace- or comma-separated count grid, one table row per line."""
    rows: list[list[float]] = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = _split_row(line)
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ConfigError(f"{path}:{ln}: non-numeric entry")
            rows.append(vals)
    if not rows:
        raise ConfigError(f"{path}: empty table")
    width = len(rows[0])
    for i, r in enumerate(rows, 1):
        if len(r) != width:
            raise ConfigError(f"{path}: row {i} has {len(r)} entries, expected {width}")
    arr = np.array(rows)
    if not np.all(arr == np.floor(arr)):
        raise ConfigError(f"{path}: counts must be integers")
    if (arr < 0).any():
        raise ConfigError(f"{path}: counts must be nonnegative")
    return arr.astype(np.int64)


def _read_long_file(
    path: Path, pair: OrdinalPair
) -> tuple[list[str], list[tuple[tuple, np.ndarray]]]:
    """CSV with header a1,a2,<covariate...>[,count]; one observation row
    per line (weighted by count when present).  Rows sharing a covariate
    profile are merged into one group, ordered by first appearance."""
    with open(path, newline="") as fh:
        raw = [row for row in csv.reader(fh) if any(c.strip() for c in row)]
    if not raw:
        raise ConfigError(f"{path}: empty file")
    header = [c.strip() for c in raw[0]]
    if header[:2] != ["a1", "a2"]:
        raise ConfigError(f"{path}: header must start with a1,a2")
    has_count = len(header) > 2 and header[-1] == "count"
    cov_names = header[2:-1] if has_count else header[2:]
    tables: dict[tuple, np.ndarray] = {}
    order: list[tuple] = []
    for ln, row in enumerate(raw[1:], 2):
        if len(row) != len(header):
            raise ConfigError(
                f"{path}:{ln}: {len(row)} fields, header has {len(header)}"
            )
        try:
            a1 = int(row[0])
            a2 = int(row[1])
        except ValueError:
            raise ConfigError(f"{path}:{ln}: category labels must be integers")
        if not (1 <= a1 <= pair.d1) or not (1 <= a2 <= pair.d2):
            raise ConfigError(
                f"{path}:{ln}: labels ({a1}, {a2}) outside "
                f"1..{pair.d1} x 1..{pair.d2}"
            )
        if has_count:
            try:
                count_f = float(row[-1])
            except ValueError:
                raise ConfigError(f"{path}:{ln}: non-numeric count")
            if count_f != math.floor(count_f) or count_f < 0:
                raise ConfigError(f"{path}:{ln}: counts must be nonnegative integers")
            count = int(count_f)
        else:
            count = 1
        try:
            covs = tuple(float(c) for c in row[2 : 2 + len(cov_names)])
        except ValueError:
            raise ConfigError(f"{path}:{ln}: non-numeric covariate")
        if covs not in tables:
            tables[covs] = np.zeros((pair.d1, pair.d2), dtype=np.int64)
            order.append(covs)
        tables[covs][a1 - 1, a2 - 1] += count
    return cov_names, [(covs, tables[covs]) for covs in order]


def _build_dataset(dscfg: dict, base_dir: Path) -> tuple[Dataset, list[str], dict]:
    """Returns (dataset, covariate names, ingestion record for reports)."""
    path = Path(dscfg["path"])
    if not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise ConfigError(f"data file not found: {path}")
    fmt = dscfg["format"]
    center = bool(dscfg.get("center", False))
    if fmt == "table":
        counts = _read_table_file(path)
        pair = OrdinalPair(counts.shape[0], counts.shape[1])
        declared = dscfg.get("pair")
        if declared is not None and tuple(declared) != (pair.d1, pair.d2):
            raise ConfigError(
                f"declared pair {tuple(declared)} does not match "
                f"table shape {counts.shape}"
            )
        cov_names: list[str] = []
        profiles = [((), counts)]
    else:
        declared = dscfg.get("pair")
        if declared is None:
            raise ConfigError("long format needs an explicit dataset pair")
        pair = OrdinalPair(int(declared[0]), int(declared[1]))
        cov_names, profiles = _read_long_file(path, pair)

    means = None
    if center:
        if not cov_names:
            raise ConfigError("centering needs covariates")
        totals = np.array([float(t.sum()) for _, t in profiles])
        covs = np.array([list(c) for c, _ in profiles])
        means = (totals[:, None] * covs).sum(axis=0) / totals.sum()
        profiles = [
            (tuple(np.asarray(c) - means), t) for c, t in profiles
        ]

    try:
        groups = tuple(
            Group(np.array(c, dtype=float), t) for c, t in profiles
        )
        dataset = Dataset(pair, groups)
    except ValueError as exc:
        raise ConfigError(str(exc))
    record = {
        "path": str(path),
        "format": fmt,
        "pair": [pair.d1, pair.d2],
        "n_groups": dataset.n_groups,
        "total_count": int(sum(g.total for g in groups)),
        "centered": center,
        "covariate_means": None if means is None else [float(m) for m in means],
    }
    return dataset, cov_names, record


# ---------------------------------------------------------------------------
# model and penalty parsing

def _parse_model(mcfg: dict, pair: OrdinalPair, cov_names: list[str]) -> ModelSpec:
    declared = mcfg.get("covariates")
    if declared is not None and list(declared) != list(cov_names):
        raise ConfigError(
            f"model covariates {list(declared)} must match the dataset "
            f"columns {list(cov_names)} in order"
        )

    def equation(key: str) -> EquationTerms:
        e = mcfg.get(key, {})
        return EquationTerms(
            tuple(e.get("include", ())),
            tuple(e.get("category_dependent", ())),
        )

    try:
        return ModelSpec(
            pair,
            tuple(cov_names),
            equation("eq1"),
            equation("eq2"),
            equation("eq3"),
            uniform_association=bool(mcfg.get("uniform_association", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def _term_key(term: dict) -> tuple:
    var = term.get("variable")
    return (term["equation"], INTERCEPT if var is None else var)


def _parse_penalty(pcfg: dict | None) -> PenaltyConfig:
    if pcfg is None:
        return PenaltyConfig.none()
    family = pcfg["family"]
    try:
        if family == "none":
            return PenaltyConfig.none()
        if family in ("ridge", "arc1"):
            terms = pcfg.get("terms", [])
            if not terms:
                raise ConfigError(f"{family} penalty needs terms")
            lambdas = {}
            for term in terms:
                if "equation" not in term:
                    raise ConfigError(f"{family} terms need an equation")
                if "stream" in term or "order" in term:
                    raise ConfigError(
                        f"{family} terms take equation and lambda only"
                    )
                lambdas[_term_key(term)] = float(term["lambda"])
            return getattr(PenaltyConfig, family)(lambdas)
        if family == "arc2":
            terms = pcfg.get("terms", [])
            if not terms:
                raise ConfigError("arc2 penalty needs terms")
            lambdas, orders = {}, {}
            for term in terms:
                if "stream" not in term or "order" not in term:
                    raise ConfigError("arc2 terms need stream and order")
                if "equation" in term:
                    raise ConfigError("arc2 terms are keyed by stream, not equation")
                var = term.get("variable")
                key = (term["stream"], INTERCEPT if var is None else var)
                lambdas[key] = float(term["lambda"])
                orders[key] = int(term["order"])
            return PenaltyConfig.arc2(lambdas, orders)
        if family == "ordering":
            if "lambda1" not in pcfg or "lambda2" not in pcfg:
                raise ConfigError("ordering penalty needs lambda1 and lambda2")
            return PenaltyConfig.ordering(
                float(pcfg["lambda1"]),
                float(pcfg["lambda2"]),
                float(pcfg.get("margin", 0.0)),
            )
        parts = [_parse_penalty(p) for p in pcfg.get("parts", [])]
        if not parts:
            raise ConfigError("composite penalty needs parts")
        return PenaltyConfig.composite(*parts)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _check_penalty_targets(penalty: PenaltyConfig, spec: ModelSpec) -> None:
    try:
        penalty.block_operators(spec)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _parse_fit_options(cfg: dict) -> FitOptions:
    return FitOptions(**cfg.get("fit_options", {}))


# ---------------------------------------------------------------------------
# output helpers

def _fmt(x) -> str:
    """Full-precision CSV field; inf and nan as bare words, None empty."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    f = float(x)
    if math.isnan(f):
        return "nan"
    if math.isinf(f):
        return "inf" if f > 0 else "-inf"
    return repr(f)


def _jsonable(obj):
    """Floats stay floats when finite (full repr precision); non-finite
    values become the strings inf/-inf/nan so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, allow_nan=False)
        fh.write("\n")
    print(f"wrote {path}")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    print(f"wrote {path}")


def _loggor_surface(result: FitResult):
    """Fitted association predictor at the zero covariate profile."""
    spec = result.spec
    pair = spec.pair
    X = build_design_matrix(spec, np.zeros(len(spec.covariate_names)))
    eta = X @ result.beta_hat
    m1, m2 = pair.d1 - 1, pair.d2 - 1
    eta3 = eta[1 + m1 + m2 :]
    return [
        (r, c, eta3[(r - 1) * m2 + (c - 1)])
        for r in range(1, m1 + 1)
        for c in range(1, m2 + 1)
    ]


# ---------------------------------------------------------------------------
# commands

def cmd_fit(config: dict, seed: int, out: Path, threads: int) -> int:
    base = config["_base_dir"]
    dataset, cov_names, record = _build_dataset(config["dataset"], base)
    spec = _parse_model(config["model"], dataset.pair, cov_names)
    penalty = _parse_penalty(config.get("penalty"))
    _check_penalty_targets(penalty, spec)
    options = _parse_fit_options(config)

    result = fit(dataset, spec, penalty, options)

    estimates = []
    se = result.se
    for label, b, s in zip(result.layout.labels(), result.beta_hat, se):
        z = b / s if s > 0 else float("inf") * np.sign(b) if b else 0.0
        p = 2.0 * float(stats.norm.sf(abs(z))) if math.isfinite(z) else 0.0
        estimates.append(
            {
                "label": label,
                "estimate": float(b),
                "se": float(s),
                "z": float(z),
                "p_value": p,
            }
        )
    report = {
        "command": "fit",
        "seed": seed,
        "dataset": record,
        "model": config["model"],
        "penalty": config.get("penalty", {"family": "none"}),
        "estimates": estimates,
        "loglik": result.loglik,
        "penalty_value": result.penalty_value,
        "aic": result.aic,
        "deviance_g2": result.deviance_g2,
        "edf": result.edf,
        "df_nominal": result.df_nominal,
        "convergence": {
            "converged": result.converged,
            "fisher_scoring_failed": result.fisher_scoring_failed,
            "iterations": result.iterations,
            "failure_reason": result.failure_reason,
        },
    }
    _write_json(out / "fit_report.json", report)
    _write_csv(out / "fit_loggor.csv", ["r", "c", "log_gor"], _loggor_surface(result))
    if result.fisher_scoring_failed:
        print(f"fit failed: {result.failure_reason}", file=sys.stderr)
        return 3
    return 0


def _profile_penalty(lam: float, s: int) -> PenaltyConfig:
    if lam == 0.0:
        return PenaltyConfig.none()
    keys = {(3, INTERCEPT): lam, (4, INTERCEPT): lam}
    return PenaltyConfig.arc2(keys, {k: s for k in keys})


def _profile_curve(dataset, spec, s: int, lambdas, options):
    """One AIC curve, warm starting each fit from the previous smoothing
    value so the grid walks a single solution branch."""
    rows = []
    start = None
    for lam in lambdas:
        opts = dataclasses.replace(options, start=start)
        try:
            res = fit(dataset, spec, _profile_penalty(lam, s), opts)
        except (SingularFisher, IncompatibleEta, FloatingPointError):
            rows.append((s, lam, float("nan"), float("nan"), "failed"))
            continue
        if res.fisher_scoring_failed:
            rows.append((s, lam, float("nan"), float("nan"), "failed"))
        else:
            rows.append((s, lam, res.aic, res.edf, "ok"))
            start = res.beta_hat
    return rows


def cmd_profile(
    config: dict, seed: int, out: Path, threads: int, log_base: float
) -> int:
    base = config["_base_dir"]
    dataset, cov_names, _ = _build_dataset(config["dataset"], base)
    spec = _parse_model(config["model"], dataset.pair, cov_names)
    options = _parse_fit_options(config)
    s_values = list(config["s_values"])

    has_log = "log_lambdas" in config
    has_raw = "lambdas" in config
    if has_log == has_raw:
        raise ConfigError("give exactly one of log_lambdas and lambdas")
    if has_log:
        lambdas = sorted(float(log_base) ** float(g) for g in config["log_lambdas"])
    else:
        lambdas = sorted(float(v) for v in config["lambdas"])

    all_rows = []
    for s in s_values:
        all_rows.extend(_profile_curve(dataset, spec, s, lambdas, options))
    all_rows.sort(key=lambda r: (r[0], r[1]))
    out_rows = [
        (s, math.log10(lam) if lam > 0 else float("-inf"), aic, edf, status)
        for s, lam, aic, edf, status in all_rows
    ]
    _write_csv(
        out / "profile_aic.csv",
        ["s", "log10_lambda", "aic", "edf", "status"],
        out_rows,
    )
    return 0


def _exclusion_delta(full_spec: ModelSpec, reduced_spec: ModelSpec) -> np.ndarray:
    """Indices of full-model coefficients absent from the reduced model.

    Only whole-variable exclusions qualify: a shared variable must keep
    its category-dependence, and the association form must match, so the
    hypothesis is a zero-effect one and the weighted mixture applies."""
    if full_spec.uniform_association != reduced_spec.uniform_association:
        raise ConfigError(
            "mc p-value supports variable-exclusion hypotheses only"
        )
    layout = ParamLayout(full_spec)
    indices: list[int] = []
    for k in (1, 2, 3):
        fe = full_spec.equation(k)
        re_ = reduced_spec.equation(k)
        for v in fe.included:
            if v in re_.included:
                if (v in fe.dependent_terms) != (v in re_.dependent_terms):
                    raise ConfigError(
                        "mc p-value supports variable-exclusion hypotheses only"
                    )
            else:
                block = layout.block(k, v)
                indices.extend(range(block.start, block.start + block.length))
    if not indices:
        raise ConfigError("mc p-value needs at least one excluded variable")
    return np.array(indices)


def _embed_reduced_beta(reduced_fit: FitResult, full_spec: ModelSpec) -> np.ndarray:
    layout = ParamLayout(full_spec)
    beta = np.zeros(layout.size)
    for block in reduced_fit.layout.blocks:
        target = layout.block(block.equation, block.variable)
        beta[target.slice] = reduced_fit.beta_hat[block.slice]
    return beta


def cmd_lrtest(config: dict, seed: int, out: Path, threads: int) -> int:
    base = config["_base_dir"]
    dataset, cov_names, record = _build_dataset(config["dataset"], base)
    full_spec = _parse_model(config["full"], dataset.pair, cov_names)
    reduced_spec = _parse_model(config["reduced"], dataset.pair, cov_names)
    full_penalty = _parse_penalty(config.get("full_penalty"))
    reduced_penalty = _parse_penalty(config.get("reduced_penalty"))
    _check_penalty_targets(full_penalty, full_spec)
    _check_penalty_targets(reduced_penalty, reduced_spec)
    options = _parse_fit_options(config)

    if not is_nested(reduced_spec, full_spec):
        raise ConfigError("reduced model is not nested in the full model")

    if full_spec == reduced_spec and full_penalty == reduced_penalty:
        result = LrpResult(0.0, 0, 1.0)
        fits = None
    else:
        full_fit = fit(dataset, full_spec, full_penalty, options)
        reduced_fit = fit(dataset, reduced_spec, reduced_penalty, options)
        for name, f in (("full", full_fit), ("reduced", reduced_fit)):
            if f.fisher_scoring_failed:
                print(f"{name} fit failed: {f.failure_reason}", file=sys.stderr)
                return 3
        result = ppom_chi2_test(full_fit, reduced_fit)
        fits = {
            "full": {
                "aic": full_fit.aic,
                "deviance_g2": full_fit.deviance_g2,
                "edf": full_fit.edf,
            },
            "reduced": {
                "aic": reduced_fit.aic,
                "deviance_g2": reduced_fit.deviance_g2,
                "edf": reduced_fit.edf,
            },
        }
        if "mc" in config:
            delta = _exclusion_delta(full_spec, reduced_spec)
            P = None
            if not full_penalty.is_null:
                P = build_penalty_matrix(full_penalty, full_spec)
            weights = gray_null_weights(
                full_fit,
                delta,
                P=P,
                beta=_embed_reduced_beta(reduced_fit, full_spec),
            )
            draws = int(config["mc"].get("draws", 200_000))
            p_mc, mc_se = weighted_chisq_pvalue(
                result.statistic, weights, draws=draws, seed=seed
            )
            result = dataclasses.replace(
                result, p_value_mc=p_mc, mc_se=mc_se, method="gray_weighted"
            )

    payload = {
        "command": "lrtest",
        "seed": seed,
        "dataset": record,
        "statistic": result.statistic,
        "df": result.df,
        "p_value_chi2": result.p_value_chi2,
        "p_value_mc": result.p_value_mc,
        "mc_se": result.mc_se,
        "method": result.method,
        "warnings": list(result.warnings),
    }
    if fits is not None:
        payload["fits"] = fits
    _write_json(out / "lrtest.json", payload)
    return 0


def cmd_simulate(config: dict, seed: int, out: Path, threads: int) -> int:
    experiment = config["experiment"]
    if experiment == "loss_benchmark":
        replicates = int(config.get("replicates", 100))
        n = int(config.get("n", 400))
        ladder = tuple(float(v) for v in config.get("lambdas", (0.0, 1.0, 10.0, 100.0)))
        try:
            result = run_table1_experiment(
                seed, replicates=replicates, n=n, ladder=ladder, threads=threads
            )
        except ValueError as exc:
            raise ConfigError(str(exc))
        rows = [
            (row.model, row.lam, row.msel, row.mrsel, row.mel, row.aic, row.fss)
            for row in result.rows
        ]
        _write_csv(
            out / "benchmark_summary.csv",
            ["model", "lambda", "msel", "mrsel", "mel", "aic", "fss"],
            rows,
        )
        return 0

    replicates = int(config.get("replicates", 1500))
    n = int(config.get("n", 400))
    lambdas = tuple(float(v) for v in config.get("lambdas", (0.0, 1.0, 10.0, 50.0)))
    result = simulate_lrp_null(
        truth=default_null_calibration_truth(n),
        replicates=replicates,
        lambdas=lambdas,
        seed=seed,
        threads=threads,
    )
    _write_csv(
        out / "null_replicates.csv",
        ["replicate", "lambda", "statistic", "converged"],
        result.rows(),
    )
    summary_rows = [
        (
            s.lam,
            result.df,
            len(s.statistics),
            s.n_failed,
            s.rejection_rate,
            s.ks_distance,
            float(np.mean(s.statistics)) if len(s.statistics) else float("nan"),
        )
        for s in result.summaries
    ]
    _write_csv(
        out / "null_summary.csv",
        [
            "lambda",
            "df",
            "n_converged",
            "n_failed",
            "rejection_rate",
            "ks_distance",
            "mean_statistic",
        ],
        summary_rows,
    )
    return 0


def cmd_empirical(config: dict, seed: int, out: Path, threads: int) -> int:
    base = config["_base_dir"]
    dataset, _, _ = _build_dataset(config["dataset"], base)
    pooled = np.sum([g.counts for g in dataset.groups], axis=0)
    grid = empirical_log_gors(pooled)
    rows = [
        (r + 1, c + 1, grid[r, c])
        for r in range(grid.shape[0])
        for c in range(grid.shape[1])
    ]
    _write_csv(out / "empirical_loggor.csv", ["r", "c", "log_gor"], rows)
    return 0


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bolm",
        description="Bivariate ordered logistic models by penalized maximum likelihood.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("fit", "fit one model; writes fit_report.json and fit_loggor.csv"),
        ("profile", "AIC over a smoothing grid; writes profile_aic.csv"),
        ("lrtest", "penalized likelihood-ratio test; writes lrtest.json"),
        ("simulate", "simulation study; writes summary CSVs"),
        ("empirical", "observed log-GOR grid; writes empirical_loggor.csv"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker pool size")
        if name == "profile":
            p.add_argument(
                "--log-base",
                type=float,
                default=10.0,
                help="base of the log_lambdas grid (default 10)",
            )
    return parser


_HANDLERS = {
    "fit": cmd_fit,
    "profile": cmd_profile,
    "lrtest": cmd_lrtest,
    "simulate": cmd_simulate,
    "empirical": cmd_empirical,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        _validate_config(config, _SCHEMAS[args.command])
        config["_base_dir"] = Path(args.config).resolve().parent
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        handler = _HANDLERS[args.command]
        if args.command == "profile":
            if args.log_base <= 0 or args.log_base == 1.0:
                raise ConfigError("--log-base must be positive and not 1")
            return handler(config, seed, out, args.threads, args.log_base)
        return handler(config, seed, out, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IncompatibleEta as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (SingularFisher, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
