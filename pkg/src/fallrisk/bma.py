"""Bayesian model averaging over the models visited by a forward search."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._parallel import map_ordered
from .exceptions import EmptyEnsemble, InvalidConfig
from .selection import SelectionTrace, model_signature

NORMALIZED_MARGINAL = "normalized"
LITERAL_LML_RATIO = "literal"
WEIGHT_RULES = (NORMALIZED_MARGINAL, LITERAL_LML_RATIO)


@dataclass
class BmaMember:
    signature: str
    variables: list
    lml: float
    weight: float
    fit: object


@dataclass
class BmaEnsemble:
    members: list
    weight_rule: str
    # variable order used for reporting (the selection pool order)
    variable_order: list | None = None

    @property
    def weights(self):
        return np.array([m.weight for m in self.members])

    def top(self, k=5):
        """The ``k`` highest-weight members; equal weights keep member order."""
        order = sorted(range(len(self.members)), key=lambda i: -self.members[i].weight)
        return [self.members[i] for i in order[:k]]

    def top_table(self, k=5):
        return [
            {"rank": rank, "variables": list(m.variables), "lml": m.lml, "weight": m.weight}
            for rank, m in enumerate(self.top(k), start=1)
        ]

    def to_dict(self, k=5):
        return {
            "weight_rule": self.weight_rule,
            "n_members": len(self.members),
            "top": self.top_table(k),
            "members": [
                {"signature": m.signature, "lml": m.lml, "weight": m.weight}
                for m in self.members
            ],
        }

    def to_json(self, k=5, **kwargs):
        return json.dumps(self.to_dict(k), **kwargs)

    def render_table(self, k=5):
        """Variables-by-model grid of the top ``k`` members with a weight row."""
        top = self.top(k)
        used = {v for m in top for v in m.variables}
        order = list(self.variable_order or [])
        order += sorted(used - set(order))
        rows = [v for v in order if v in used]
        label_width = max([len("(intercept)")] + [len(v) for v in rows]) + 2
        head = "Variable".ljust(label_width) + "".join(f"{i:>8}" for i in range(1, len(top) + 1))
        lines = [head, "-" * len(head)]
        lines.append("(intercept)".ljust(label_width) + "".join(f"{'x':>8}" for _ in top))
        for var in rows:
            marks = "".join(f"{'x' if var in m.variables else '':>8}" for m in top)
            lines.append(var.ljust(label_width) + marks)
        lines.append("-" * len(head))
        lines.append("Weight".ljust(label_width) + "".join(f"{m.weight:>8.2f}" for m in top))
        return "\n".join(lines)


def ensemble_weights(lmls, weight_rule=NORMALIZED_MARGINAL):
    """Model weights from log marginal likelihoods.

    ``normalized`` gives posterior model probabilities under a uniform
    model prior, exp(lml - logsumexp(lml)). ``literal`` divides each lml by
    their sum and is defined only when every lml is negative.
    """
    lmls = np.asarray(lmls, dtype=float)
    if lmls.size == 0:
        raise EmptyEnsemble("no models to weight")
    if not np.all(np.isfinite(lmls)):
        raise ValueError("log marginal likelihoods must be finite")
    if weight_rule == NORMALIZED_MARGINAL:
        return np.exp(lmls - logsumexp(lmls))
    if weight_rule == LITERAL_LML_RATIO:
        if np.any(lmls >= 0):
            raise InvalidConfig("literal lml-ratio weights need every lml to be negative")
        return lmls / lmls.sum()
    raise InvalidConfig(f"unknown weight rule {weight_rule!r}; expected one of {WEIGHT_RULES}")


def build_ensemble(source, weight_rule=NORMALIZED_MARGINAL):
    """Ensemble of every successful fit in a :class:`SelectionTrace`.

    ``source`` may also be a mapping of signature to fit or a list of fits.
    """
    variable_order = None
    if isinstance(source, SelectionTrace):
        fits = list(source.all_evaluated.values())
        variable_order = list(source.pool)
    elif isinstance(source, dict):
        fits = list(source.values())
    else:
        fits = list(source)
    if not fits:
        raise EmptyEnsemble("the selection trace holds no successful fit")
    weights = ensemble_weights([f.lml for f in fits], weight_rule)
    members = [
        BmaMember(model_signature(f.model, f.stage), list(f.model), float(f.lml), float(w), f)
        for f, w in zip(fits, weights)
    ]
    return BmaEnsemble(members, weight_rule, variable_order)


def _probabilities(out):
    return np.asarray(getattr(out, "probabilities", out), dtype=float)


def bma_predict(ensemble, design, predict_fn, threads=1):
    """Weighted average of member predictions on ``design``.

    ``design`` must contain every member's variables; each member sees
    ``design.subset(member.variables)``. ``predict_fn(fit, design)`` returns
    probabilities (or anything with a ``probabilities`` attribute). The
    result is clipped to the member range so rounding cannot leave it.
    """
    if not ensemble.members:
        raise EmptyEnsemble("empty ensemble")

    def one(member):
        return _probabilities(predict_fn(member.fit, design.subset(member.variables)))

    preds = map_ordered(one, ensemble.members, threads)
    total = np.zeros_like(preds[0])
    for member, p in zip(ensemble.members, preds):
        total = total + member.weight * p
    stacked = np.vstack(preds)
    return np.clip(total, stacked.min(axis=0), stacked.max(axis=0))
