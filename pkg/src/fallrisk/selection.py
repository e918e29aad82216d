"""Forward stepwise selection on the log marginal likelihood.

Starting from the intercept-only model, each step fits the current model
plus every remaining candidate and adds the best candidate if it raises the
lml. Every fit is cached under a canonical signature, and the full ledger of
evaluated models is kept for model averaging.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_ordered
from .datamodel import INTERCEPT, CohortDataset, DesignMatrix, encode, iter_pool
from .exceptions import AllCandidatesFailed, NumericError
from .laplace import fit_design

logger = logging.getLogger(__name__)

STOP = "STOP"
IMPROVEMENT_TOL = 1e-9


def model_signature(variables, stage=1):
    """Canonical, order-free key of a model: ``"stage<k>:<sorted names>"``."""
    names = sorted(str(v) for v in variables)
    return f"stage{int(stage)}:" + (",".join(names) if names else INTERCEPT)


@dataclass
class SelectionStep:
    step_index: int
    # (variable, lml) in pool order; lml is None for a failed fit
    candidates: list
    chosen: str
    current_lml: float

    def to_dict(self):
        return {
            "step_index": self.step_index,
            "candidates": [
                {"variable": v, "lml": lml} for v, lml in self.candidates
            ],
            "chosen": self.chosen,
            "current_lml": self.current_lml,
        }


@dataclass
class SelectionTrace:
    """Steps of a forward search and every model fitted along the way.

    ``all_evaluated`` maps signatures to successful :class:`FitResult`
    objects in the order they were fitted; ``failures`` maps signatures of
    failed fits to their error messages.
    """

    stage: int
    pool: list
    steps: list = field(default_factory=list)
    final_model: list = field(default_factory=list)
    all_evaluated: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    n_fits: int = 0

    @property
    def final_signature(self):
        return model_signature(self.final_model, self.stage)

    @property
    def final_fit(self):
        return self.all_evaluated[self.final_signature]

    def to_dict(self):
        return {
            "stage": self.stage,
            "pool": list(self.pool),
            "steps": [s.to_dict() for s in self.steps],
            "final_model": list(self.final_model),
            "final_lml": self.final_fit.lml,
            "n_fits": self.n_fits,
            "evaluated": [
                {"signature": sig, "variables": list(fit.model), "lml": fit.lml}
                for sig, fit in self.all_evaluated.items()
            ],
            "failed": dict(self.failures),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def render(self):
        lines = [f"forward selection, stage {self.stage}"]
        for step in self.steps:
            lines.append(f"step {step.step_index} (current lml {step.current_lml:.4f})")
            for var, lml in step.candidates:
                shown = "failed" if lml is None else f"{lml:.4f}"
                mark = " *" if var == step.chosen else ""
                lines.append(f"  + {var:<28}{shown:>12}{mark}")
            if step.chosen == STOP:
                lines.append("  stop")
        lines.append(f"final model: {', '.join(self.final_model) or '(intercept only)'}")
        return "\n".join(lines)


def _is_success(fit):
    return fit.converged and np.isfinite(fit.lml)


def forward_select(data, candidate_pool=None, stage=1, prior=None, fit_settings=None,
                   grid_settings=None, threads=1, standardize=False):
    """Forward search over ``candidate_pool``.

    ``data`` is a :class:`CohortDataset` (encoded once for the whole pool)
    or a ready :class:`DesignMatrix` whose variables form the pool. Pool
    order follows the schema (or the design's column order) and breaks lml
    ties within ``IMPROVEMENT_TOL``. A candidate is added only if it beats
    the current model by more than ``IMPROVEMENT_TOL`` nats.
    """
    if isinstance(data, CohortDataset):
        pool = list(iter_pool(data, candidate_pool, stage))
        design = encode(data, pool, stage=stage, standardize=standardize)
    elif isinstance(data, DesignMatrix):
        design = data
        stage = design.stage
        wanted = None if candidate_pool is None else set(candidate_pool)
        pool = [v for v in design.variables if wanted is None or v in wanted]
        if wanted is not None and wanted - set(pool):
            raise ValueError(f"variables not in design: {sorted(wanted - set(pool))}")
    else:
        raise TypeError("data must be a CohortDataset or a DesignMatrix")
    if not pool:
        raise ValueError("candidate pool is empty")

    trace = SelectionTrace(stage=int(stage), pool=list(pool))
    cache = {}

    def fit_model(variables):
        sig = model_signature(variables, stage)
        if sig in cache:
            return cache[sig]
        try:
            fit = fit_design(design.subset(variables), prior, fit_settings, grid_settings)
            result = fit if _is_success(fit) else "fit did not converge"
        except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
            result = f"{type(exc).__name__}: {exc}"
        return result

    def record(variables, result):
        sig = model_signature(variables, stage)
        if sig in cache:
            return
        cache[sig] = result
        trace.n_fits += 1
        if isinstance(result, str):
            logger.info("fit of %s failed: %s", sig, result)
            trace.failures[sig] = result
        else:
            trace.all_evaluated[sig] = result

    current = []
    base = fit_model(current)
    record(current, base)
    if isinstance(base, str):
        raise AllCandidatesFailed(f"intercept-only model failed: {base}")
    current_lml = base.lml

    step_index = 0
    while True:
        step_index += 1
        remaining = [v for v in pool if v not in current]
        models = [current + [v] for v in remaining]
        results = map_ordered(fit_model, models, threads)
        for model, result in zip(models, results):
            record(model, result)
        candidates = []
        best_var, best_lml = None, -np.inf
        for var, model in zip(remaining, models):
            result = cache[model_signature(model, stage)]
            lml = None if isinstance(result, str) else float(result.lml)
            candidates.append((var, lml))
            if lml is not None and (best_var is None or lml > best_lml + IMPROVEMENT_TOL):
                best_var, best_lml = var, lml
        if step_index == 1 and remaining and best_var is None:
            raise AllCandidatesFailed("no candidate could be fitted at the first step")
        if best_var is not None and best_lml > current_lml + IMPROVEMENT_TOL:
            trace.steps.append(SelectionStep(step_index, candidates, best_var, current_lml))
            current = current + [best_var]
            current_lml = best_lml
        else:
            trace.steps.append(SelectionStep(step_index, candidates, STOP, current_lml))
            break

    trace.final_model = [v for v in pool if v in set(current)]
    return trace
