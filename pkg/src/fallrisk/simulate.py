"""Synthetic cohorts drawn from the two-stage generative model.

:func:`simulate` draws baseline covariates from simple marginals, the fall
indicator from the Stage-1 logistic model, and, for every faller, a number
of falls with per-fall covariates and injury outcomes from the Stage-2
random-intercept model.

:func:`make_example_cohort` builds the bundled example cohort. Its marginal
counts are fixed by construction (99 patients, 55 fallers of whom 20 fell
once, 335 falls, 84 of them injurious) while the covariates carry a
plausible association with both outcomes.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import replace
from importlib import resources

import numpy as np
from scipy.special import expit

from .datamodel import (
    AFTERNOON,
    BASELINE,
    BINARY,
    CATEGORICAL,
    CONTINUOUS,
    FALL_TIME_CATEGORIES,
    INSIDE,
    LOCATIONS,
    MORNING,
    NIGHT,
    ORDINAL,
    OUTSIDE,
    PER_FALL,
    CohortDataset,
    CovariateSchema,
    FallEvent,
    PatientRecord,
    encode,
    load_csv,
    load_schema,
    write_csv,
    write_schema,
)
from .exceptions import InvalidConfig

# clock-minute ranges of the fall-time buckets; NIGHT wraps midnight
_BUCKET_MINUTES = {
    MORNING: [(360, 720)],
    AFTERNOON: [(720, 1260)],
    NIGHT: [(1260, 1440), (0, 360)],
}

CONFIG_KEYS = {
    "seed", "n_patients", "schema", "covariates", "stage1", "stage2", "sigma2",
    "falls_per_faller", "fall_time_probs", "location_probs", "glasses_p",
    "include_clock_time",
}


def bundled_schema():
    """Schema of the bundled example cohort."""
    c = CovariateSchema
    return [
        c("age", CONTINUOUS, BASELINE),
        c("tinetti_balance", CONTINUOUS, BASELINE),
        c("tinetti_gait", CONTINUOUS, BASELINE),
        c("functional_reach", CONTINUOUS, BASELINE),
        c("tug", CONTINUOUS, BASELINE),
        c("sf36_physical_functioning", CONTINUOUS, BASELINE),
        c("sf36_physical_health", CONTINUOUS, BASELINE),
        c("sf36_bodily_pain", CONTINUOUS, BASELINE),
        c("sf36_general_health", CONTINUOUS, BASELINE),
        c("sf36_vitality", CONTINUOUS, BASELINE),
        c("sf36_social_functioning", CONTINUOUS, BASELINE),
        c("sf36_emotional_problems", CONTINUOUS, BASELINE),
        c("sf36_mental_health", CONTINUOUS, BASELINE),
        c("bdi", CONTINUOUS, BASELINE),
        c("bai", CONTINUOUS, BASELINE),
        c("gender", CATEGORICAL, BASELINE, ("Male", "Female"), "Male"),
        c("bmi", CATEGORICAL, BASELINE, ("Normal", "Overweight", "Obese"), "Normal"),
        c("previous_falls", BINARY, BASELINE),
        c("balance", ORDINAL, BASELINE, ("Poor", "Fair", "Good", "Very good", "Excellent")),
        c("fearful", ORDINAL, BASELINE,
          ("Not at all", "Slightly", "Moderately", "Quite a bit", "Extremely")),
        c("fall_time_category", CATEGORICAL, PER_FALL, FALL_TIME_CATEGORIES, MORNING),
        c("location", CATEGORICAL, PER_FALL, LOCATIONS, INSIDE),
        c("glasses", BINARY, PER_FALL),
    ]


# marginals of the bundled cohort: normal(mean, sd, lo, hi, decimals) for
# continuous variables, exact level counts for the categorical ones
EXAMPLE_CONTINUOUS = {
    "age": (66.9, 8.5, 45, 90, 0),
    "tinetti_balance": (14.9, 1.4, 8, 16, 0),
    "tinetti_gait": (10.6, 1.4, 5, 12, 0),
    "functional_reach": (28.3, 6.0, 10, 45, 1),
    "tug": (11.6, 3.2, 5, 30, 1),
    "sf36_physical_functioning": (73.4, 20.0, 0, 100, 0),
    "sf36_physical_health": (58.8, 32.0, 0, 100, 0),
    "sf36_bodily_pain": (74.5, 22.0, 0, 100, 0),
    "sf36_general_health": (61.2, 19.0, 0, 100, 0),
    "sf36_vitality": (57.8, 18.0, 0, 100, 0),
    "sf36_social_functioning": (83.5, 20.0, 0, 100, 0),
    "sf36_emotional_problems": (81.5, 30.0, 0, 100, 0),
    "sf36_mental_health": (81.1, 14.0, 0, 100, 0),
    "bdi": (6.1, 4.5, 0, 40, 0),
    "bai": (6.8, 5.5, 0, 45, 0),
}
EXAMPLE_COUNTS = {
    "gender": {"Male": 43, "Female": 56},
    "bmi": {"Normal": 44, "Overweight": 34, "Obese": 21},
    "previous_falls": {1: 37, 0: 62},
    "balance": {"Excellent": 4, "Very good": 28, "Good": 35, "Fair": 27, "Poor": 5},
    "fearful": {"Not at all": 40, "Slightly": 40, "Moderately": 11, "Quite a bit": 6,
                "Extremely": 2},
}
EXAMPLE_STAGE1 = {"intercept": 4.0, "coefficients": {
    "fearful": 0.55, "tinetti_gait": -0.5, "previous_falls": 0.9, "bai": 0.05}}
EXAMPLE_STAGE2 = {"intercept": 0.5, "coefficients": {
    "tinetti_gait": -0.35, "previous_falls": 0.8, "sf36_physical_health": -0.015,
    "location[OUTSIDE]": 0.7, "fall_time_category[AFTERNOON]": 0.3}}
EXAMPLE_SIGMA2 = 1.0
EXAMPLE_TARGETS = {"n_patients": 99, "n_fallers": 55, "n_single": 20, "n_falls": 335,
                   "n_injured": 84}
EXAMPLE_SEED = 2016


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _draw_clock(category, rng):
    ranges = _BUCKET_MINUTES[category]
    sizes = np.array([hi - lo for lo, hi in ranges], dtype=float)
    k = int(rng.choice(len(ranges), p=sizes / sizes.sum()))
    lo, hi = ranges[k]
    return int(rng.integers(lo, hi))


def _draw_covariate(var, spec, rng):
    dist = (spec or {}).get("distribution")
    if var.kind == CONTINUOUS:
        if dist not in (None, "normal"):
            raise InvalidConfig(f"{var.name}: continuous covariates use 'normal'")
        return float(rng.normal(spec.get("mean", 0.0) if spec else 0.0,
                                spec.get("sd", 1.0) if spec else 1.0))
    if var.kind == BINARY:
        p = spec.get("p", 0.5) if spec else 0.5
        if not 0.0 <= p <= 1.0:
            raise InvalidConfig(f"{var.name}: p must be in [0, 1]")
        return int(rng.random() < p)
    probs = (spec or {}).get("probs")
    if probs is None:
        weights = np.full(len(var.levels), 1.0 / len(var.levels))
    else:
        if set(probs) - set(var.levels):
            raise InvalidConfig(f"{var.name}: unknown levels in probs")
        weights = np.array([float(probs.get(lv, 0.0)) for lv in var.levels])
        if np.any(weights < 0) or weights.sum() <= 0:
            raise InvalidConfig(f"{var.name}: probs must be non-negative")
        weights = weights / weights.sum()
    return var.levels[int(rng.choice(len(var.levels), p=weights))]


def _zero_truncated(draw, rng, max_tries=10_000):
    for _ in range(max_tries):
        k = int(draw(rng))
        if k >= 1:
            return k
    raise InvalidConfig("falls-per-faller distribution puts almost no mass above zero")


def _falls_sampler(spec):
    spec = dict(spec or {"distribution": "zt_negbin", "mean": 6.0, "size": 1.0})
    dist = spec.pop("distribution", "zt_negbin")
    params = spec.pop("params", {})
    params.update(spec)
    if dist == "fixed":
        n = int(params.get("n", 1))
        if n < 1:
            raise InvalidConfig("fixed falls per faller must be >= 1")
        return lambda rng: n
    if dist == "zt_poisson":
        lam = float(params.get("mean", 3.0))
        if lam <= 0:
            raise InvalidConfig("zt_poisson mean must be positive")
        return lambda rng: _zero_truncated(lambda g: g.poisson(lam), rng)
    if dist == "zt_negbin":
        mean, size = float(params.get("mean", 6.0)), float(params.get("size", 1.0))
        if mean <= 0 or size <= 0:
            raise InvalidConfig("zt_negbin mean and size must be positive")
        p = size / (size + mean)
        return lambda rng: _zero_truncated(lambda g: g.negative_binomial(size, p), rng)
    raise InvalidConfig(f"unknown falls_per_faller distribution {dist!r}")


def _coefficient_vector(design, spec, stage):
    spec = spec or {}
    unknown = set(spec) - {"intercept", "coefficients"}
    if unknown:
        raise InvalidConfig(f"stage{stage}: unknown keys {sorted(unknown)}")
    beta = np.zeros(design.X.shape[1])
    beta[0] = float(spec.get("intercept", 0.0))
    index = {name: j for j, name in enumerate(design.column_names)}
    for name, value in (spec.get("coefficients") or {}).items():
        if name in index:
            beta[index[name]] = float(value)
        elif name in design.blocks and design.blocks[name].stop - design.blocks[name].start == 1:
            beta[design.blocks[name].start] = float(value)
        else:
            raise InvalidConfig(f"stage{stage}: coefficient {name!r} matches no design column")
    return beta


def _schema_from_config(config):
    schema = config.get("schema")
    if schema is None:
        return bundled_schema()
    if isinstance(schema, str):
        return load_schema(schema)
    return [CovariateSchema.from_dict(d) for d in schema]


def _fall_event(pid, r, schema_names, config, rng):
    time_probs = config.get("fall_time_probs") or {MORNING: 0.3, AFTERNOON: 0.5, NIGHT: 0.2}
    loc_probs = config.get("location_probs") or {INSIDE: 0.7, OUTSIDE: 0.3}
    for probs, levels in ((time_probs, FALL_TIME_CATEGORIES), (loc_probs, LOCATIONS)):
        if set(probs) - set(levels) or any(v < 0 for v in probs.values()):
            raise InvalidConfig(f"bad per-fall probabilities {probs}")
    tp = np.array([float(time_probs.get(c, 0.0)) for c in FALL_TIME_CATEGORIES])
    lp = np.array([float(loc_probs.get(c, 0.0)) for c in LOCATIONS])
    category = FALL_TIME_CATEGORIES[int(rng.choice(3, p=tp / tp.sum()))]
    clock = _draw_clock(category, rng) if config.get("include_clock_time", True) else None
    location = LOCATIONS[int(rng.choice(2, p=lp / lp.sum()))]
    glasses = None
    if "glasses" in schema_names:
        glasses = int(rng.random() < float(config.get("glasses_p", 0.5)))
    return FallEvent(pid, r, category, location, 0, clock, glasses)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def simulate(config, return_truth=False):
    """Draw a cohort from the two-stage model described by ``config``.

    ``config`` keys: ``seed`` (required), ``n_patients``, ``schema`` (list of
    schema dicts or a path; default the bundled schema), ``covariates``
    (per-variable marginals: ``{"mean", "sd"}``, ``{"p"}`` or
    ``{"probs": {level: p}}``), ``stage1`` and ``stage2`` (``intercept``
    and ``coefficients`` keyed by design column or single-column variable
    name), ``sigma2``, ``falls_per_faller`` (``zt_negbin`` with ``mean``
    and ``size``, ``zt_poisson`` with ``mean``, or ``fixed`` with ``n``),
    ``fall_time_probs``, ``location_probs``, ``glasses_p``.
    """
    config = dict(config)
    unknown = set(config) - CONFIG_KEYS
    if unknown:
        raise InvalidConfig(f"unknown simulation keys {sorted(unknown)}")
    if "seed" not in config:
        raise InvalidConfig("simulation config needs a seed")
    n = int(config.get("n_patients", 100))
    if n < 1:
        raise InvalidConfig("n_patients must be >= 1")
    sigma2 = float(config.get("sigma2", 0.0))
    if not sigma2 >= 0:
        raise InvalidConfig("sigma2 must be >= 0")
    schema = _schema_from_config(config)
    marginals = config.get("covariates") or {}
    names = {c.name for c in schema}
    if set(marginals) - names:
        raise InvalidConfig(f"marginals for unknown variables {sorted(set(marginals) - names)}")
    falls_of = _falls_sampler(config.get("falls_per_faller"))
    rng = np.random.default_rng(int(config["seed"]))
    width = len(str(n))

    baseline_vars = [c for c in schema if c.stage == BASELINE]
    patients = []
    for i in range(n):
        values = {c.name: _draw_covariate(c, marginals.get(c.name), rng) for c in baseline_vars}
        patients.append(PatientRecord(f"P{i + 1:0{width}d}", values, 0))
    ds = CohortDataset(schema, patients, [])
    d1 = encode(ds, [c.name for c in baseline_vars], stage=1)
    beta1 = _coefficient_vector(d1, config.get("stage1"), 1)
    fell = (rng.random(n) < expit(d1.X @ beta1)).astype(int)
    patients = [replace(p, fell=int(f)) for p, f in zip(patients, fell)]

    falls = []
    eps = {}
    for p in patients:
        if not p.fell:
            continue
        eps[p.patient_id] = float(rng.normal(0.0, math.sqrt(sigma2))) if sigma2 > 0 else 0.0
        for r in range(1, falls_of(rng) + 1):
            falls.append(_fall_event(p.patient_id, r, names, config, rng))
    ds = CohortDataset(schema, patients, falls)
    beta2 = None
    if falls:
        d2 = encode(ds, [c.name for c in schema], stage=2)
        beta2 = _coefficient_vector(d2, config.get("stage2"), 2)
        eta = d2.X @ beta2 + np.array([eps[f.patient_id] for f in falls])
        injured = (rng.random(len(falls)) < expit(eta)).astype(int)
        falls = [replace(f, injured=int(v)) for f, v in zip(falls, injured)]
        ds = CohortDataset(schema, patients, falls)
    if not return_truth:
        return ds
    truth = {
        "stage1": dict(zip(d1.column_names, beta1.tolist())),
        "stage2": None if beta2 is None else dict(zip(d2.column_names, beta2.tolist())),
        "sigma2": sigma2,
        "epsilon": eps,
    }
    return ds, truth


def load_simulation_config(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _exact_levels(counts, n, rng):
    values = [v for v, k in counts.items() for _ in range(k)]
    if len(values) != n:
        raise InvalidConfig("level counts do not add up to the cohort size")
    return [values[i] for i in rng.permutation(n)]


def _top_k(latent, k):
    order = np.argsort(-latent, kind="stable")
    out = np.zeros(latent.size, dtype=int)
    out[order[:k]] = 1
    return out


def _falls_per_faller(n_fallers, n_single, total, rng):
    """Counts with exactly ``n_single`` ones and the given total."""
    n_multi = n_fallers - n_single
    remaining = total - n_single
    if n_multi * 2 > remaining or (n_multi == 0 and remaining):
        raise InvalidConfig("fall totals are inconsistent")
    mean = remaining / n_multi
    counts = 2 + rng.negative_binomial(1.2, 1.2 / (1.2 + mean - 2), size=n_multi)
    while counts.sum() > remaining:
        j = int(rng.choice(np.flatnonzero(counts > 2)))
        counts[j] -= 1
    while counts.sum() < remaining:
        counts[int(rng.integers(n_multi))] += 1
    return [1] * n_single + counts.tolist()


def make_example_cohort(seed=EXAMPLE_SEED):
    """Build the bundled example cohort (see the module docstring)."""
    rng = np.random.default_rng(seed)
    schema = bundled_schema()
    t = EXAMPLE_TARGETS
    n = t["n_patients"]
    columns = {}
    for name, (mean, sd, lo, hi, decimals) in EXAMPLE_CONTINUOUS.items():
        x = np.clip(rng.normal(mean, sd, size=n), lo, hi)
        columns[name] = [round(float(v), decimals) if decimals else float(round(v)) for v in x]
    for name, counts in EXAMPLE_COUNTS.items():
        columns[name] = _exact_levels(counts, n, rng)
    width = len(str(n))
    patients = [
        PatientRecord(f"P{i + 1:0{width}d}", {c.name: columns[c.name][i]
                                              for c in schema if c.stage == BASELINE}, 0)
        for i in range(n)
    ]
    ds = CohortDataset(schema, patients, [])
    d1 = encode(ds, [c.name for c in schema if c.stage == BASELINE], stage=1)
    eta1 = d1.X @ _coefficient_vector(d1, EXAMPLE_STAGE1, 1)
    # logistic latent utility; the top n_fallers become fallers
    fell = _top_k(eta1 + rng.logistic(size=n), t["n_fallers"])
    patients = [replace(p, fell=int(f)) for p, f in zip(patients, fell)]

    fallers = [p.patient_id for p in patients if p.fell]
    counts = _falls_per_faller(len(fallers), t["n_single"], t["n_falls"], rng)
    counts = [counts[i] for i in rng.permutation(len(counts))]
    config = {"fall_time_probs": {MORNING: 0.3, AFTERNOON: 0.5, NIGHT: 0.2},
              "location_probs": {INSIDE: 0.7, OUTSIDE: 0.3},
              "glasses_p": 0.6}
    names = {c.name for c in schema}
    falls = [
        _fall_event(pid, r, names, config, rng)
        for pid, k in zip(fallers, counts)
        for r in range(1, k + 1)
    ]
    ds = CohortDataset(schema, patients, falls)
    d2 = encode(ds, [c.name for c in schema], stage=2)
    eps = {pid: float(rng.normal(0.0, math.sqrt(EXAMPLE_SIGMA2))) for pid in fallers}
    eta2 = d2.X @ _coefficient_vector(d2, EXAMPLE_STAGE2, 2)
    eta2 += np.array([eps[f.patient_id] for f in falls])
    injured = _top_k(eta2 + rng.logistic(size=len(falls)), t["n_injured"])
    falls = [replace(f, injured=int(v)) for f, v in zip(falls, injured)]
    return CohortDataset(schema, patients, falls)


def write_example_cohort(directory, seed=EXAMPLE_SEED):
    ds = make_example_cohort(seed)
    os.makedirs(directory, exist_ok=True)
    write_schema(ds.schema, os.path.join(directory, "schema.json"))
    write_csv(ds, os.path.join(directory, "patients.csv"), os.path.join(directory, "falls.csv"))
    return ds


def example_paths():
    """Paths of the bundled ``patients.csv``, ``falls.csv`` and ``schema.json``."""
    base = resources.files("fallrisk") / "data"
    return (str(base / "patients.csv"), str(base / "falls.csv"), str(base / "schema.json"))


def load_example_cohort():
    patients, falls, schema = example_paths()
    return load_csv(patients, falls, load_schema(schema))


__all__ = [
    "bundled_schema",
    "example_paths",
    "load_example_cohort",
    "load_simulation_config",
    "make_example_cohort",
    "simulate",
    "write_example_cohort",
]
