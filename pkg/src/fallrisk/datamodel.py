"""Cohort data schema, CSV ingestion, covariate encoding and summaries.

A cohort is a set of patients with baseline covariates plus a table of
fall events. Stage 1 models whether a patient fell (one row per patient);
Stage 2 models whether a fall was injurious (one row per fall).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    DataError,
    DuplicatePatient,
    InconsistentFallTime,
    InconsistentFellFlag,
    InvalidValue,
    MissingColumn,
    MissingValue,
    OrphanFallEvent,
    OutOfRange,
    SchemaError,
    StageMismatch,
    UnknownCategoryLevel,
    UnknownVariable,
)

logger = logging.getLogger(__name__)

CONTINUOUS = "CONTINUOUS"
BINARY = "BINARY"
CATEGORICAL = "CATEGORICAL"
ORDINAL = "ORDINAL"
KINDS = (CONTINUOUS, BINARY, CATEGORICAL, ORDINAL)

BASELINE = "BASELINE"
PER_FALL = "PER_FALL"

MORNING = "MORNING"
AFTERNOON = "AFTERNOON"
NIGHT = "NIGHT"
FALL_TIME_CATEGORIES = (MORNING, AFTERNOON, NIGHT)
INSIDE = "INSIDE"
OUTSIDE = "OUTSIDE"
LOCATIONS = (INSIDE, OUTSIDE)

# per-fall attributes a schema may declare as PER_FALL covariates
PER_FALL_FIELDS = ("fall_time_category", "location", "glasses")

FALLS_COLUMNS = (
    "patient_id",
    "fall_index",
    "fall_clock_time",
    "fall_time_category",
    "location",
    "glasses",
    "injured",
)

INTERCEPT = "(intercept)"


# ---------------------------------------------------------------------------
# Schema and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateSchema:
    """Declaration of one covariate.

    ``dummy`` switches an ORDINAL variable from its numeric score to dummy
    coding against its first level.
    """

    name: str
    kind: str
    stage: str = BASELINE
    levels: tuple = ()
    reference: str | None = None
    scores: tuple = ()
    dummy: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.stage not in (BASELINE, PER_FALL):
            raise SchemaError(f"{self.name}: unknown stage {self.stage!r}")
        if self.name in ("patient_id", "fell"):
            raise SchemaError(f"{self.name!r} is a reserved column name")
        if self.stage == PER_FALL and self.name not in PER_FALL_FIELDS:
            raise SchemaError(
                f"{self.name}: per-fall covariates must be one of {PER_FALL_FIELDS}"
            )
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        object.__setattr__(self, "scores", tuple(float(s) for s in self.scores))
        if self.kind == CATEGORICAL:
            if len(self.levels) < 2:
                raise SchemaError(f"{self.name}: categorical needs >= 2 levels")
            ref = self.reference if self.reference is not None else self.levels[0]
            if ref not in self.levels:
                raise SchemaError(f"{self.name}: reference {ref!r} not among levels")
            object.__setattr__(self, "reference", ref)
        elif self.kind == ORDINAL:
            if len(self.levels) < 2:
                raise SchemaError(f"{self.name}: ordinal needs >= 2 levels")
            scores = self.scores or tuple(float(i + 1) for i in range(len(self.levels)))
            if len(scores) != len(self.levels):
                raise SchemaError(f"{self.name}: one score per level required")
            if any(b <= a for a, b in zip(scores, scores[1:])):
                raise SchemaError(f"{self.name}: ordinal scores must be strictly increasing")
            object.__setattr__(self, "scores", scores)
            if self.dummy:
                ref = self.reference if self.reference is not None else self.levels[0]
                if ref not in self.levels:
                    raise SchemaError(f"{self.name}: reference {ref!r} not among levels")
                object.__setattr__(self, "reference", ref)
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"{self.name}: duplicate levels")

    @property
    def is_dummy_coded(self):
        return self.kind == CATEGORICAL or (self.kind == ORDINAL and self.dummy)

    @property
    def dummy_levels(self):
        return [lv for lv in self.levels if lv != self.reference]

    @property
    def width(self):
        """Number of design-matrix columns this variable expands to."""
        return len(self.levels) - 1 if self.is_dummy_coded else 1

    def column_names(self):
        if self.is_dummy_coded:
            return [f"{self.name}[{lv}]" for lv in self.dummy_levels]
        return [self.name]

    def parse(self, raw, row=None, path=None):
        """Convert a raw CSV string into the stored value."""
        if raw is None or str(raw).strip() == "":
            raise MissingValue(row, self.name, path)
        raw = str(raw).strip()
        if self.kind == CONTINUOUS:
            try:
                value = float(raw)
            except ValueError:
                raise InvalidValue(row, self.name, raw, path) from None
            if not math.isfinite(value):
                raise InvalidValue(row, self.name, raw, path)
            return value
        if self.kind == BINARY:
            if raw not in ("0", "1"):
                raise InvalidValue(row, self.name, raw, path)
            return int(raw)
        if raw not in self.levels:
            raise UnknownCategoryLevel(row, self.name, raw, path)
        return raw

    def to_dict(self):
        out = {"name": self.name, "kind": self.kind, "stage": self.stage}
        if self.levels:
            out["levels"] = list(self.levels)
        if self.kind == CATEGORICAL or (self.kind == ORDINAL and self.dummy):
            out["reference"] = self.reference
        if self.kind == ORDINAL:
            out["scores"] = list(self.scores)
            if self.dummy:
                out["dummy"] = True
        return out

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"name", "kind", "stage", "levels", "reference", "scores", "dummy"}
        if unknown:
            raise SchemaError(f"unknown schema keys {sorted(unknown)}")
        try:
            return cls(
                name=d["name"],
                kind=str(d["kind"]).upper(),
                stage=str(d.get("stage", BASELINE)).upper(),
                levels=tuple(d.get("levels", ())),
                reference=d.get("reference"),
                scores=tuple(d.get("scores", ())),
                dummy=bool(d.get("dummy", False)),
            )
        except KeyError as exc:
            raise SchemaError(f"schema entry missing {exc}") from None


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise SchemaError("schema.json must hold a JSON array")
    return _check_schema([CovariateSchema.from_dict(e) for e in entries])


def write_schema(schema, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([c.to_dict() for c in schema], fh, indent=2)
        fh.write("\n")


def _check_schema(schema):
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate covariate names in schema")
    for c in schema:
        if c.name == "fall_time_category" and set(c.levels) != set(FALL_TIME_CATEGORIES):
            raise SchemaError(f"fall_time_category levels must be {FALL_TIME_CATEGORIES}")
        if c.name == "location" and set(c.levels) != set(LOCATIONS):
            raise SchemaError(f"location levels must be {LOCATIONS}")
        if c.name == "glasses" and c.kind != BINARY:
            raise SchemaError("glasses must be BINARY")
    return list(schema)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    baseline: dict
    fell: int


@dataclass(frozen=True)
class FallEvent:
    patient_id: str
    fall_index: int
    fall_time_category: str
    location: str
    injured: int
    fall_clock_time: int | None = None
    glasses: int | None = None

    def __post_init__(self):
        if self.fall_time_category not in FALL_TIME_CATEGORIES:
            raise DataError(f"unknown fall_time_category {self.fall_time_category!r}")
        if self.location not in LOCATIONS:
            raise DataError(f"unknown location {self.location!r}")
        if self.fall_clock_time is not None:
            if bucket_fall_time(self.fall_clock_time) != self.fall_time_category:
                raise InconsistentFallTime(
                    f"patient {self.patient_id} fall {self.fall_index}: clock time "
                    f"{format_clock(self.fall_clock_time)} is not {self.fall_time_category}"
                )

    @property
    def row_id(self):
        return f"{self.patient_id}#{self.fall_index}"


@dataclass
class CohortDataset:
    schema: list
    patients: list
    falls: list = field(default_factory=list)

    def __post_init__(self):
        self.schema = _check_schema(self.schema)
        self.validate()

    def validate(self):
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DuplicatePatient(f"duplicate patient_id {dup!r}")
        baseline = [c for c in self.schema if c.stage == BASELINE]
        for p in self.patients:
            for c in baseline:
                if c.name not in p.baseline:
                    raise MissingValue(p.patient_id, c.name)
        known = set(ids)
        per_patient = {}
        for f in self.falls:
            if f.patient_id not in known:
                raise OrphanFallEvent(f"fall references unknown patient {f.patient_id!r}")
            per_patient.setdefault(f.patient_id, []).append(f.fall_index)
        for pid, idx in per_patient.items():
            if sorted(idx) != list(range(1, len(idx) + 1)):
                raise DataError(f"patient {pid!r}: fall_index values must run 1..R")
        for p in self.patients:
            if p.fell != int(p.patient_id in per_patient):
                raise InconsistentFellFlag(
                    f"patient {p.patient_id!r}: fell={p.fell} but "
                    f"{len(per_patient.get(p.patient_id, []))} fall events"
                )
        for c in self.schema:
            if c.stage == PER_FALL:
                for f in self.falls:
                    if getattr(f, c.name) is None:
                        raise MissingValue(f.row_id, c.name)

    # -- convenience ----------------------------------------------------

    def variable(self, name):
        for c in self.schema:
            if c.name == name:
                return c
        raise UnknownVariable(f"unknown variable {name!r}")

    @property
    def variable_names(self):
        return [c.name for c in self.schema]

    def names_for_stage(self, stage):
        if int(stage) == 1:
            return [c.name for c in self.schema if c.stage == BASELINE]
        return [c.name for c in self.schema]

    @property
    def n_patients(self):
        return len(self.patients)

    @property
    def n_fallers(self):
        return sum(p.fell for p in self.patients)

    @property
    def n_falls(self):
        return len(self.falls)

    @property
    def n_injured(self):
        return sum(f.injured for f in self.falls)

    def patient_ids(self):
        return [p.patient_id for p in self.patients]

    def without_patients(self, patient_ids):
        drop = set(patient_ids)
        return CohortDataset(
            schema=self.schema,
            patients=[p for p in self.patients if p.patient_id not in drop],
            falls=[f for f in self.falls if f.patient_id not in drop],
        )


# ---------------------------------------------------------------------------
# Fall time
# ---------------------------------------------------------------------------


def bucket_fall_time(minutes):
    """Map minutes after midnight to MORNING, AFTERNOON or NIGHT.

    MORNING is [06:00, 12:00), AFTERNOON [12:00, 21:00) and NIGHT the rest.
    """
    if isinstance(minutes, bool) or not float(minutes).is_integer():
        raise OutOfRange(f"fall time must be whole minutes, got {minutes!r}")
    minutes = int(minutes)
    if not 0 <= minutes <= 1439:
        raise OutOfRange(f"fall time {minutes} outside 0..1439")
    if 360 <= minutes < 720:
        return MORNING
    if 720 <= minutes < 1260:
        return AFTERNOON
    return NIGHT


def parse_clock(text):
    """Parse ``HH:MM`` into minutes after midnight."""
    hh, sep, mm = text.strip().partition(":")
    if not sep or not hh.isdigit() or not mm.isdigit() or len(mm) != 2:
        raise ValueError(f"bad clock time {text!r}")
    h, m = int(hh), int(mm)
    if not (0 <= h <= 23 and 0 <= m <= 59):
        raise ValueError(f"bad clock time {text!r}")
    return 60 * h + m


def format_clock(minutes):
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn("patient_id", str(path)) from None
        rows = []
        for line, values in enumerate(reader, start=2):
            if not values or all(v.strip() == "" for v in values):
                continue
            if len(values) != len(header):
                raise DataError(
                    f"{path}: row {line}: expected {len(header)} fields, got {len(values)}"
                )
            rows.append((line, dict(zip(header, values))))
    return header, rows


def load_csv(patients_path, falls_path, schema):
    """Load and validate a cohort from ``patients.csv`` and ``falls.csv``.

    ``schema`` is a list of :class:`CovariateSchema` or a path to schema.json.
    The ``fell`` indicator is derived from the falls file; an explicit
    ``fell`` column in patients.csv is cross-checked against it.
    """
    if isinstance(schema, (str, Path)):
        schema = load_schema(schema)
    schema = _check_schema(schema)
    baseline = [c for c in schema if c.stage == BASELINE]
    by_name = {c.name: c for c in schema}
    ppath, fpath = str(patients_path), str(falls_path)

    header, rows = _read_rows(patients_path)
    for col in ["patient_id"] + [c.name for c in baseline]:
        if col not in header:
            raise MissingColumn(col, ppath)
    has_fell = "fell" in header

    patients = []
    explicit_fell = {}
    seen = set()
    for line, row in rows:
        pid = row["patient_id"].strip()
        if not pid:
            raise MissingValue(line, "patient_id", ppath)
        if pid in seen:
            raise DuplicatePatient(f"{ppath}: row {line}: duplicate patient_id {pid!r}")
        seen.add(pid)
        values = {c.name: c.parse(row[c.name], line, ppath) for c in baseline}
        if has_fell:
            raw = row["fell"].strip()
            if raw not in ("0", "1"):
                raise MissingValue(line, "fell", ppath) if raw == "" else InvalidValue(
                    line, "fell", raw, ppath
                )
            explicit_fell[pid] = (line, int(raw))
        patients.append((pid, values))

    fheader, frows = _read_rows(falls_path) if Path(falls_path).stat().st_size else ([], [])
    if frows or fheader:
        for col in FALLS_COLUMNS:
            if col not in fheader:
                raise MissingColumn(col, fpath)
    falls = []
    for line, row in frows:
        pid = row["patient_id"].strip()
        if pid not in seen:
            raise OrphanFallEvent(f"{fpath}: row {line}: unknown patient {pid!r}")
        falls.append(_parse_fall(line, row, by_name, fpath))

    fallers = {f.patient_id for f in falls}
    records = []
    for pid, values in patients:
        fell = int(pid in fallers)
        if pid in explicit_fell and explicit_fell[pid][1] != fell:
            line, flag = explicit_fell[pid]
            raise InconsistentFellFlag(
                f"{ppath}: row {line}: fell={flag} but patient has "
                f"{sum(f.patient_id == pid for f in falls)} fall events"
            )
        records.append(PatientRecord(pid, values, fell))
    return CohortDataset(schema=list(schema), patients=records, falls=falls)


def _parse_fall(line, row, by_name, path):
    def required_int(col, allowed=None):
        raw = row[col].strip()
        if raw == "":
            raise MissingValue(line, col, path)
        try:
            value = int(raw)
        except ValueError:
            raise InvalidValue(line, col, raw, path) from None
        if allowed is not None and value not in allowed:
            raise InvalidValue(line, col, raw, path)
        return value

    pid = row["patient_id"].strip()
    fall_index = required_int("fall_index")
    if fall_index < 1:
        raise InvalidValue(line, "fall_index", row["fall_index"], path)
    injured = required_int("injured", (0, 1))

    clock_raw = row["fall_clock_time"].strip()
    clock = None
    if clock_raw:
        try:
            clock = parse_clock(clock_raw)
        except ValueError:
            raise InvalidValue(line, "fall_clock_time", clock_raw, path) from None

    cat = row["fall_time_category"].strip()
    if cat == "":
        if clock is None:
            raise MissingValue(line, "fall_time_category", path)
        cat = bucket_fall_time(clock)
    elif cat not in FALL_TIME_CATEGORIES:
        raise UnknownCategoryLevel(line, "fall_time_category", cat, path)
    elif clock is not None and bucket_fall_time(clock) != cat:
        raise InconsistentFallTime(
            f"{path}: row {line}: clock time {clock_raw} is not in {cat}"
        )

    loc = row["location"].strip()
    if loc == "":
        raise MissingValue(line, "location", path)
    if loc not in LOCATIONS:
        raise UnknownCategoryLevel(line, "location", loc, path)

    glasses_raw = row["glasses"].strip()
    glasses = None
    if glasses_raw:
        glasses = required_int("glasses", (0, 1))
    elif "glasses" in by_name:
        raise MissingValue(line, "glasses", path)

    return FallEvent(
        patient_id=pid,
        fall_index=fall_index,
        fall_time_category=cat,
        location=loc,
        injured=injured,
        fall_clock_time=clock,
        glasses=glasses,
    )


def _format_value(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(dataset, patients_path, falls_path):
    """Write a cohort back out in the layout :func:`load_csv` reads."""
    baseline = [c for c in dataset.schema if c.stage == BASELINE]
    with open(patients_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id"] + [c.name for c in baseline] + ["fell"])
        for p in dataset.patients:
            w.writerow(
                [p.patient_id] + [_format_value(p.baseline[c.name]) for c in baseline] + [p.fell]
            )
    with open(falls_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FALLS_COLUMNS)
        for f in dataset.falls:
            w.writerow(
                [
                    f.patient_id,
                    f.fall_index,
                    "" if f.fall_clock_time is None else format_clock(f.fall_clock_time),
                    f.fall_time_category,
                    f.location,
                    "" if f.glasses is None else f.glasses,
                    f.injured,
                ]
            )


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


@dataclass
class DesignMatrix:
    """Numeric design with a leading intercept column and encoding metadata.

    ``blocks`` maps each variable to the slice of columns it occupies.
    Stage-2 designs carry ``groups`` (patient index of every row) and
    ``group_ids`` (the patient ids those indices refer to).
    """

    X: np.ndarray
    y: np.ndarray
    column_names: list
    blocks: dict
    stage: int
    row_ids: list
    groups: np.ndarray | None = None
    group_ids: list | None = None
    transforms: dict = field(default_factory=dict)

    @property
    def variables(self):
        return list(self.blocks)

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def n_groups(self):
        return 0 if self.group_ids is None else len(self.group_ids)

    def subset(self, variables):
        """Design restricted to the intercept plus ``variables``.

        Columns keep this design's variable order, so any ordering of the
        same set yields the same matrix.
        """
        wanted = set(variables)
        missing = wanted - set(self.blocks)
        if missing:
            raise UnknownVariable(f"variables not in design: {sorted(missing)}")
        cols = [0]
        blocks = {}
        for name, sl in self.blocks.items():
            if name in wanted:
                start = len(cols)
                cols.extend(range(sl.start, sl.stop))
                blocks[name] = slice(start, len(cols))
        return replace(
            self,
            X=self.X[:, cols],
            column_names=[self.column_names[c] for c in cols],
            blocks=blocks,
            transforms={k: v for k, v in self.transforms.items() if k in wanted},
        )

    def take(self, rows):
        """Row subset; Stage-2 groups are re-indexed to those still present."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        groups = group_ids = None
        if self.groups is not None:
            kept, inverse = np.unique(self.groups[rows], return_inverse=True)
            groups = inverse.astype(np.intp)
            group_ids = [self.group_ids[k] for k in kept]
        return replace(
            self,
            X=self.X[rows],
            y=self.y[rows],
            row_ids=[self.row_ids[r] for r in rows],
            groups=groups,
            group_ids=group_ids,
        )

    def unstandardize(self, coef):
        """Convert coefficients on standardized columns back to raw units."""
        coef = np.array(coef, dtype=float)
        for name, (mean, sd) in self.transforms.items():
            j = self.blocks[name].start
            coef[j] = coef[j] / sd
            coef[0] -= coef[j] * mean
        return coef


def _column_values(var, values):
    """Encode one variable's raw values into an (n, width) block."""
    if var.kind == CONTINUOUS:
        return np.asarray(values, dtype=float)[:, None]
    if var.kind == BINARY:
        return np.asarray(values, dtype=float)[:, None]
    if var.is_dummy_coded:
        levels = var.dummy_levels
        out = np.zeros((len(values), len(levels)))
        index = {lv: j for j, lv in enumerate(levels)}
        for i, v in enumerate(values):
            j = index.get(v)
            if j is not None:
                out[i, j] = 1.0
        return out
    score = dict(zip(var.levels, var.scores))
    return np.array([score[v] for v in values], dtype=float)[:, None]


def encode(dataset, variable_subset=(), stage=1, standardize=False):
    """Build the design matrix for ``variable_subset`` at the given stage.

    Stage 1 produces one row per patient with ``fell`` as outcome; Stage 2
    one row per fall with ``injured`` as outcome, baseline covariates being
    repeated over a patient's falls.
    """
    stage = int(stage)
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage!r}")
    requested = list(dict.fromkeys(variable_subset))
    declared = {c.name: c for c in dataset.schema}
    for name in requested:
        if name not in declared:
            raise UnknownVariable(f"unknown variable {name!r}")
        if stage == 1 and declared[name].stage == PER_FALL:
            raise StageMismatch(f"per-fall variable {name!r} requested for Stage 1")
    chosen = [c for c in dataset.schema if c.name in set(requested)]

    if stage == 1:
        n = dataset.n_patients
        row_ids = dataset.patient_ids()
        y = np.array([p.fell for p in dataset.patients], dtype=float)
        raw = {c.name: [p.baseline[c.name] for p in dataset.patients] for c in chosen}
        groups = group_ids = None
    else:
        by_id = {p.patient_id: p for p in dataset.patients}
        n = dataset.n_falls
        row_ids = [f.row_id for f in dataset.falls]
        y = np.array([f.injured for f in dataset.falls], dtype=float)
        raw = {}
        for c in chosen:
            if c.stage == PER_FALL:
                raw[c.name] = [getattr(f, c.name) for f in dataset.falls]
            else:
                raw[c.name] = [by_id[f.patient_id].baseline[c.name] for f in dataset.falls]
        group_ids = list(dict.fromkeys(f.patient_id for f in dataset.falls))
        gindex = {pid: g for g, pid in enumerate(group_ids)}
        groups = np.array([gindex[f.patient_id] for f in dataset.falls], dtype=np.intp)

    columns = [np.ones((n, 1))]
    names = [INTERCEPT]
    blocks = {}
    transforms = {}
    width = 1
    for c in chosen:
        block = _column_values(c, raw[c.name])
        if standardize and c.kind == CONTINUOUS and n > 1:
            mean, sd = float(block.mean()), float(block.std(ddof=1))
            if sd > 0:
                block = (block - mean) / sd
                transforms[c.name] = (mean, sd)
        columns.append(block)
        names.extend(c.column_names())
        blocks[c.name] = slice(width, width + c.width)
        width += c.width
    X = np.hstack(columns) if n else np.zeros((0, width))
    return DesignMatrix(
        X=X,
        y=y,
        column_names=names,
        blocks=blocks,
        stage=stage,
        row_ids=row_ids,
        groups=groups,
        group_ids=group_ids,
        transforms=transforms,
    )


# ---------------------------------------------------------------------------
# Descriptive summary
# ---------------------------------------------------------------------------


def _mean(values):
    return float(np.mean(values)) if len(values) else None


def _level_counts(values, levels):
    return {lv: sum(1 for v in values if v == lv) for lv in levels}


def _pct(count, total):
    return round(100.0 * count / total, 1) if total else None


def summarize(dataset):
    """Descriptive counts and means split by fall status and injury status.

    Stage-1 splits count patients; Stage-2 splits count falls, so a
    patient's baseline value is weighted by the number of falls they had.
    """
    patients = dataset.patients
    by_id = {p.patient_id: p for p in patients}
    falls = dataset.falls
    fall_counts = {}
    for f in falls:
        fall_counts[f.patient_id] = fall_counts.get(f.patient_id, 0) + 1

    counts = {
        "n_patients": len(patients),
        "n_fallers": dataset.n_fallers,
        "n_non_fallers": len(patients) - dataset.n_fallers,
        "n_falls": len(falls),
        "n_injurious_falls": dataset.n_injured,
        "injurious_fraction": dataset.n_injured / len(falls) if falls else None,
        "fell_once": sum(1 for c in fall_counts.values() if c == 1),
        "recurrent_fallers": sum(1 for c in fall_counts.values() if c > 1),
    }

    variables = []
    for c in dataset.schema:
        if c.stage == BASELINE:
            everyone = [p.baseline[c.name] for p in patients]
            fallers = [p.baseline[c.name] for p in patients if p.fell]
            others = [p.baseline[c.name] for p in patients if not p.fell]
            injured = [by_id[f.patient_id].baseline[c.name] for f in falls if f.injured]
            uninjured = [by_id[f.patient_id].baseline[c.name] for f in falls if not f.injured]
        else:
            everyone = fallers = others = []
            injured = [getattr(f, c.name) for f in falls if f.injured]
            uninjured = [getattr(f, c.name) for f in falls if not f.injured]

        entry = {"name": c.name, "kind": c.kind, "stage": c.stage}
        if c.kind == CONTINUOUS:
            entry.update(
                all=_mean(everyone),
                fall=_mean(fallers),
                not_fall=_mean(others),
                injured=_mean(injured),
                not_injured=_mean(uninjured),
            )
        else:
            levels = list(c.levels) if c.levels else [1, 0]
            n_all = len(everyone)
            tallies = [_level_counts(x, levels) for x in (everyone, fallers, others, injured, uninjured)]
            rows = []
            for lv in levels:
                a, fa, nf, inj, ninj = (t[lv] for t in tallies)
                rows.append(
                    {
                        "level": str(lv),
                        "all": [a, _pct(a, n_all)],
                        "fall": [fa, _pct(fa, fa + nf)],
                        "not_fall": [nf, _pct(nf, fa + nf)],
                        "injured": [inj, _pct(inj, inj + ninj)],
                        "not_injured": [ninj, _pct(ninj, inj + ninj)],
                    }
                )
            entry["levels"] = rows
        variables.append(entry)

    by_hour = []
    timed = [f for f in falls if f.fall_clock_time is not None]
    for h in range(24):
        in_hour = [f for f in timed if f.fall_clock_time // 60 == h]
        by_hour.append(
            {"hour": h, "falls": len(in_hour), "injured": sum(f.injured for f in in_hour)}
        )
    by_category = []
    for cat in FALL_TIME_CATEGORIES:
        in_cat = [f for f in falls if f.fall_time_category == cat]
        k = sum(f.injured for f in in_cat)
        by_category.append(
            {
                "category": cat,
                "falls": len(in_cat),
                "injured": k,
                "injured_rate": k / len(in_cat) if in_cat else None,
            }
        )
    return {
        "counts": counts,
        "variables": variables,
        "fall_time": {"by_hour": by_hour, "by_category": by_category},
    }


def render_summary(summary):
    """Plain-text rendering of :func:`summarize` output."""

    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, list):
            n, pct = v
            return f"{n} ({pct:.1f}%)" if pct is not None else f"{n}"
        return f"{v:.1f}"

    c = summary["counts"]
    frac = c["injurious_fraction"]
    lines = [
        f"patients: {c['n_patients']}  fallers: {c['n_fallers']}  falls: {c['n_falls']}  "
        f"injurious: {c['n_injurious_falls']}"
        + (f" ({100 * frac:.1f}%)" if frac is not None else ""),
        "",
        f"{'Measurement':<28}{'All':>14}{'Fall':>14}{'Not-fall':>14}{'Injured':>14}{'Not-injured':>14}",
    ]
    for v in summary["variables"]:
        if "levels" not in v:
            cells = [v["all"], v["fall"], v["not_fall"], v["injured"], v["not_injured"]]
            lines.append(f"{v['name']:<28}" + "".join(f"{fmt(x):>14}" for x in cells))
        else:
            lines.append(v["name"])
            for lv in v["levels"]:
                cells = [lv["all"], lv["fall"], lv["not_fall"], lv["injured"], lv["not_injured"]]
                lines.append(f"  {lv['level']:<26}" + "".join(f"{fmt(x):>14}" for x in cells))
    lines.append("")
    lines.append("fall time category: falls / injured (rate)")
    for row in summary["fall_time"]["by_category"]:
        rate = "-" if row["injured_rate"] is None else f"{row['injured_rate']:.2f}"
        lines.append(f"  {row['category']:<12}{row['falls']:>6}{row['injured']:>6}  ({rate})")
    return "\n".join(lines)


def iter_pool(dataset, pool: Iterable[str] | None, stage) -> Sequence[str]:
    """Candidate pool in schema declaration order, checked for stage."""
    allowed = dataset.names_for_stage(stage)
    if pool is None:
        return allowed
    pool = list(dict.fromkeys(pool))
    for name in pool:
        var = dataset.variable(name)
        if int(stage) == 1 and var.stage == PER_FALL:
            raise StageMismatch(f"per-fall variable {name!r} in a Stage-1 pool")
    return [n for n in dataset.variable_names if n in set(pool)]
