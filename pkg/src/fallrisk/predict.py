"""Predictive probabilities for Stage-1 patients and Stage-2 fall rows.

Stage-2 predictions integrate over the sigma2 grid posterior and the patient
random intercept by Monte Carlo. Every row draws from its own generator,
seeded by the run seed and a checksum of the row id, so results do not
depend on row order or on how rows are spread over threads.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from ._parallel import map_ordered
from .exceptions import DimensionMismatch, UnknownPatient

PREDICTIVE_MEAN = "predictive_mean"
LITERAL_LOGODDS_MEAN = "literal_logodds_mean"


@dataclass(frozen=True)
class MCSettings:
    """Monte Carlo sizes and seed for Stage-2 prediction.

    ``procedure`` is ``"predictive_mean"`` (average of probabilities) or
    ``"literal_logodds_mean"`` (inverse logit of the averaged log-odds).
    """

    n_sigma2_draws: int = 200
    n_epsilon_draws: int = 50
    seed: int = 0
    procedure: str = PREDICTIVE_MEAN

    def __post_init__(self):
        if self.n_sigma2_draws < 2 or self.n_epsilon_draws < 1:
            raise ValueError("need at least 2 sigma2 draws and 1 epsilon draw")
        if self.procedure not in (PREDICTIVE_MEAN, LITERAL_LOGODDS_MEAN):
            raise ValueError(f"unknown procedure {self.procedure!r}")


@dataclass
class PredictionBatch:
    row_ids: list
    probabilities: np.ndarray
    mc_standard_error: np.ndarray
    mc_settings: dict | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.row_ids)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row_id", "probability", "mc_se"])
            for rid, p, se in zip(self.row_ids, self.probabilities, self.mc_standard_error):
                writer.writerow([rid, repr(float(p)), repr(float(se))])


def _check_columns(fit, design):
    if design.X.shape[1] != fit.n_coef:
        raise DimensionMismatch(
            f"design has {design.X.shape[1]} columns, fit has {fit.n_coef} coefficients"
        )
    if list(design.column_names) != list(fit.column_names):
        raise DimensionMismatch(
            f"design columns {design.column_names} do not match fit columns {fit.column_names}"
        )


def predict_stage1(fit, design):
    """Plug-in probabilities logit^-1(X beta_MAP)."""
    _check_columns(fit, design)
    p = expit(design.X @ fit.coef)
    return PredictionBatch(list(design.row_ids), p, np.zeros_like(p))


def row_generator(seed, row_id):
    """Generator of one row's substream."""
    return np.random.default_rng([int(seed), zlib.crc32(str(row_id).encode("utf-8"))])


def systematic_indices(weights, n, rng):
    """``n`` draws whose marginal law is categorical(``weights``).

    Systematic sampling with one uniform offset: counts match n * weights to
    within one, which removes most of the sampling noise over the grid.
    """
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(cdf, u, side="right"), len(weights) - 1)


def _row_estimate(eta, mean, sd, n_eps, rng, procedure):
    half = (n_eps + 1) // 2
    z = rng.standard_normal((eta.size, half))
    z = np.concatenate([z, -z], axis=1)[:, :n_eps]  # antithetic pairs
    logodds = eta[:, None] + mean[:, None] + sd[:, None] * z
    if procedure == LITERAL_LOGODDS_MEAN:
        per_draw = logodds.mean(axis=1)
        centre = per_draw.mean()
        se = per_draw.std(ddof=1) / np.sqrt(per_draw.size)
        p = float(expit(centre))
        return p, float(se * p * (1.0 - p))
    per_draw = expit(logodds).mean(axis=1)
    return float(per_draw.mean()), float(per_draw.std(ddof=1) / np.sqrt(per_draw.size))


def predict_stage2(fit, design, patient_known=False, mc=None, threads=1):
    """Monte Carlo predictive probabilities for fall rows.

    For each row: draw grid points with probability equal to their
    posterior weight, take the fixed linear predictor from that point's
    coefficient mean, draw the random intercept from N(0, sigma2) (new
    patient) or from the patient's conditional posterior at that point
    (``patient_known``), and average logit^-1 over all draws. The reported
    standard error comes from the spread of the per-sigma2-draw means.
    """
    if fit.stage != 2 or not fit.sigma2_grid:
        raise ValueError("predict_stage2 needs a Stage-2 fit")
    mc = mc or MCSettings()
    _check_columns(fit, design)
    grid = fit.sigma2_grid
    weights = np.array([g.normalized_weight for g in grid])
    coef = np.array([g.coef_mean for g in grid])  # (k, p)
    sigma2 = np.array([g.sigma2 for g in grid])
    eta_all = design.X @ coef.T  # (n, k)

    if patient_known:
        index = {pid: i for i, pid in enumerate(fit.group_ids or [])}
        if design.groups is None:
            raise ValueError("known-patient prediction needs patient ids on the rows")
        patient_of_row = []
        for g in design.groups:
            pid = design.group_ids[g]
            if pid not in index:
                raise UnknownPatient(pid)
            patient_of_row.append(index[pid])
        eps_mean = np.array([g.eps_mean for g in grid])  # (k, groups)
        eps_sd = np.sqrt(np.maximum(np.array([g.eps_var for g in grid]), 0.0))

    def one(r):
        rng = row_generator(mc.seed, design.row_ids[r])
        idx = systematic_indices(weights, mc.n_sigma2_draws, rng)
        if patient_known:
            g = patient_of_row[r]
            mean, sd = eps_mean[idx, g], eps_sd[idx, g]
        else:
            mean, sd = np.zeros(idx.size), np.sqrt(sigma2[idx])
        return _row_estimate(eta_all[r, idx], mean, sd, mc.n_epsilon_draws, rng, mc.procedure)

    results = map_ordered(one, range(design.n_rows), threads)
    p = np.array([r[0] for r in results], dtype=float)
    se = np.array([r[1] for r in results], dtype=float)
    return PredictionBatch(list(design.row_ids), np.clip(p, 0.0, 1.0), se, asdict(mc),
                           {"patient_known": bool(patient_known)})


def predict_fit(fit, design, patient_known=False, mc=None, threads=1):
    """Dispatch on the fit's stage."""
    if fit.stage == 1:
        return predict_stage1(fit, design)
    return predict_stage2(fit, design, patient_known, mc, threads)


def plugin_stage2(fit, design):
    """logit^-1 of the fixed part at the highest-weight grid point, no Monte Carlo."""
    _check_columns(fit, design)
    return expit(design.X @ fit.coef)
