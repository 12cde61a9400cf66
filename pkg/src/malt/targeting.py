"""Target-class selection: exact linear solver, MALT scores, naive ordering."""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .models import LinearModel, forward, jacobian

DEFAULT_C = 100
DEFAULT_A = 9
UNREACHABLE_TOL = 1e-14


@dataclass(frozen=True)
class Candidate:
    class_index: int
    score: float
    confidence_rank: int  # 1-based position in the logit ordering, origin excluded


@dataclass(frozen=True)
class TargetPlan:
    origin: int
    method: str
    c: int
    a: int
    targets: tuple

    def to_json(self):
        return {
            "origin": self.origin,
            "method": self.method,
            "c": self.c,
            "a": self.a,
            "targets": [
                {"class": t.class_index, "score": _json_float(t.score), "confidence_rank": t.confidence_rank}
                for t in self.targets
            ],
        }

    def dumps(self):
        return json.dumps(self.to_json(), allow_nan=False)


def _json_float(v):
    # JSON has no infinities; unreachable targets serialize as null
    return v if math.isfinite(v) else None


@dataclass(frozen=True)
class LinearAttackSolution:
    target: int
    epsilon_coeff: float
    direction: np.ndarray
    perturbation: object  # Vector, or None when unreachable
    l2_norm: float

    @property
    def reachable(self):
        return math.isfinite(self.l2_norm)


def origin_of(logits, strict=False):
    """Predicted class; with ``strict`` an argmax tie raises."""
    top = int(np.argmax(logits))
    if strict and np.count_nonzero(logits == logits[top]) > 1:
        raise ConfigError("argmax tie at x0: the origin class is not unique")
    return top


def confidence_order(logits, origin):
    """Classes other than ``origin`` by decreasing logit, lower index first on ties."""
    return sorted((i for i in range(len(logits)) if i != origin), key=lambda i: (-logits[i], i))


def linear_min_perturbation(model, x0, counter=None):
    """Smallest-L2 perturbation onto each pairwise decision boundary of a linear model.

    For target i the perturbation is eps_i (w_i - w_l) with
    eps_i = (F_l(x0) - F_i(x0)) / ||w_i - w_l||^2, which lands exactly on the
    boundary F_i = F_l. Solutions are sorted by L2 norm (ties by class index);
    the first is the global minimizer.
    """
    if not isinstance(model, LinearModel):
        raise ConfigError("the exact solver only applies to LinearModel")
    logits = forward(model, x0, counter)
    origin = origin_of(logits, strict=True)
    rows = jacobian(model, x0, range(model.num_classes), counter)
    out = []
    for i in range(model.num_classes):
        if i == origin:
            continue
        direction = rows[i] - rows[origin]
        gap = logits[origin] - logits[i]
        sq = float(direction @ direction)
        if sq == 0.0:
            out.append(LinearAttackSolution(i, math.inf, direction, None, math.inf))
            continue
        eps = gap / sq
        out.append(LinearAttackSolution(i, eps, direction, eps * direction, gap / math.sqrt(sq)))
    out.sort(key=lambda s: (s.l2_norm, s.target))
    return out


def _scores(model, x0, logits, c, counter):
    origin = origin_of(logits)
    order = confidence_order(logits, origin)
    c_eff = min(c, len(order))
    picked = order[:c_eff]
    rows = jacobian(model, x0, picked + [origin], counter)
    g_origin = rows[-1]
    cands = []
    for rank, (cls, row) in enumerate(zip(picked, rows[:-1]), start=1):
        denom = float(np.linalg.norm(row - g_origin))
        if denom < UNREACHABLE_TOL:
            score = -math.inf
        else:
            score = float(logits[cls] - logits[origin]) / denom
        cands.append(Candidate(cls, score, rank))
    cands.sort(key=lambda t: (-t.score, t.class_index))
    return origin, c_eff, cands


def malt_scores(model, x0, c=DEFAULT_C, counter=None, logits=None):
    """Score the top-``c`` classes by (N_i - N_l) / ||grad N_i - grad N_l||.

    Costs one forward pass (skipped when ``logits`` are supplied) and c + 1
    backward passes. Returned candidates are sorted by score, highest first.
    """
    if c < 1:
        raise ConfigError("c must be >= 1")
    if logits is None:
        logits = forward(model, x0, counter)
    return _scores(model, x0, logits, c, counter)[2]


def malt_targets(model, x0, c=DEFAULT_C, a=DEFAULT_A, counter=None, logits=None):
    if c < 1 or a < 1:
        raise ConfigError("c and a must be >= 1")
    if logits is None:
        logits = forward(model, x0, counter)
    origin, c_eff, cands = _scores(model, x0, logits, c, counter)
    a_eff = min(a, c_eff)
    return TargetPlan(origin, "malt", c_eff, a_eff, tuple(cands[:a_eff]))


def naive_targets(model, x0, a=DEFAULT_A, counter=None, logits=None):
    """Top-``a`` classes by logit; one forward pass, no backward passes."""
    if a < 1:
        raise ConfigError("a must be >= 1")
    if logits is None:
        logits = forward(model, x0, counter)
    origin = origin_of(logits)
    order = confidence_order(logits, origin)
    a_eff = min(a, len(order))
    targets = tuple(
        Candidate(cls, float(logits[cls] - logits[origin]), rank)
        for rank, cls in enumerate(order[:a_eff], start=1)
    )
    return TargetPlan(origin, "naive", a_eff, a_eff, targets)


def exact_linear_targets(model, x0, a=DEFAULT_A, counter=None, solutions=None):
    """Plan ordered by exact boundary distance; ``score`` holds the L2 norm."""
    if solutions is None:
        solutions = linear_min_perturbation(model, x0, counter)
    logits = model.logits_batch(np.asarray(x0, dtype=np.float64)[None, :])[0]
    origin = origin_of(logits, strict=True)
    rank_of = {cls: r for r, cls in enumerate(confidence_order(logits, origin), start=1)}
    a_eff = min(a, len(solutions))
    targets = tuple(Candidate(s.target, s.l2_norm, rank_of[s.target]) for s in solutions[:a_eff])
    return TargetPlan(origin, "exact_linear", len(solutions), a_eff, targets)
