"""Targeted L-inf attacks, the MALT / naive drivers and the pass-budget model.

A targeted attack is any callable ``attack(model, x0, target, cfg, counter=None,
origin=None) -> AttackOutcome``. ``pgd_targeted`` is the default and
``fgsm_attack`` adapts the one-step attack to the same contract.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .linalg import SeededRng, as_vector, child_seed
from .models import PassCounter, forward, vjp
from .targeting import (
    DEFAULT_A,
    DEFAULT_C,
    exact_linear_targets,
    linear_min_perturbation,
    malt_targets,
    naive_targets,
)

DEFAULT_EPSILON = 8 / 255
DEFAULT_ITERATIONS = 100
MOMENTUM = 0.75
CHECKPOINT_FRACTIONS = (0.22, 0.44, 0.66, 0.88)
FIXED_STEP_FACTOR = 2.5  # fixed schedule: step = 2.5 * eps / T
BOUNDARY_OVERSHOOT = 1e-6


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = DEFAULT_EPSILON
    iterations: int = DEFAULT_ITERATIONS
    step_schedule: str = "fixed"
    loss: str = "margin"
    box: tuple = (0.0, 1.0)
    restarts: int = 1
    seed: int = 0
    random_start: bool = False

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be >= 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.step_schedule not in ("fixed", "halving_checkpoints"):
            raise ConfigError(f"unknown step schedule {self.step_schedule!r}")
        if self.loss not in ("margin", "dlr_style"):
            raise ConfigError(f"unknown attack loss {self.loss!r}")
        lo, hi = self.box
        if not lo < hi:
            raise ConfigError("box needs lo < hi")
        object.__setattr__(self, "box", (float(lo), float(hi)))


@dataclass
class AttackOutcome:
    success: bool
    adversarial_input: object = None
    target_used: object = None
    target_rank_in_plan: object = None
    confidence_rank_of_target: object = None
    forward_passes: int = 0
    backward_passes: int = 0
    final_margin: float = math.nan
    origin: object = None
    components: list = field(default_factory=list)  # (name, forward, backward)

    def linf_norm(self, x0):
        if self.adversarial_input is None:
            return math.nan
        return float(np.max(np.abs(self.adversarial_input - x0)))


def loss_cotangent(kind, logits, target, origin):
    """Gradient of the attack loss w.r.t. the logits."""
    k = len(logits)
    cot = np.zeros(k)
    cot[target] += 1.0
    cot[origin] -= 1.0
    if kind == "margin":
        return cot
    if k < 4:
        raise ConfigError("the dlr_style loss needs at least 4 classes")
    order = np.argsort(-logits, kind="stable")
    den = logits[order[0]] - 0.5 * (logits[order[2]] + logits[order[3]]) + 1e-12
    num = logits[target] - logits[origin]
    dden = np.zeros(k)
    dden[order[0]] += 1.0
    dden[order[2]] -= 0.5
    dden[order[3]] -= 0.5
    return cot / den - (num / den**2) * dden


def _project(x, lo, hi):
    return np.minimum(np.maximum(x, lo), hi)


def _step_size(cfg, t):
    if cfg.step_schedule == "fixed":
        return FIXED_STEP_FACTOR * cfg.epsilon / cfg.iterations
    halvings = sum(t >= round(f * cfg.iterations) for f in CHECKPOINT_FRACTIONS)
    return 2.0 * cfg.epsilon / 2**halvings


def _outcome(success, x, logits, target, origin, counter, name="attack"):
    margin = float(logits[target] - logits[origin]) if logits is not None else math.nan
    return AttackOutcome(
        success=success,
        adversarial_input=x if success else None,
        target_used=target if success else None,
        forward_passes=counter.forward_count,
        backward_passes=counter.backward_count,
        final_margin=margin,
        origin=origin,
        components=[(name, counter.forward_count, counter.backward_count)],
    )


def pgd_targeted(model, x0, target, cfg, counter=None, origin=None):
    """Projected signed-gradient ascent on the targeted loss inside ball(x0, eps) and the box.

    Each iteration takes one backward pass at the current iterate and one
    forward pass at the new one, which doubles as the success check; the
    attack stops at the first iterate classified as ``target``.
    """
    x0 = as_vector(x0, "x0")
    target = model._check_class(target)
    local = PassCounter()
    logits0 = None
    if origin is None or cfg.epsilon == 0:
        logits0 = forward(model, x0, local)
        origin = int(np.argmax(logits0)) if origin is None else origin
    if cfg.epsilon == 0:
        out = _outcome(int(np.argmax(logits0)) == target, x0, logits0, target, origin, local, "pgd")
        _merge(counter, local)
        return out
    lo = np.maximum(cfg.box[0], x0 - cfg.epsilon)
    hi = np.minimum(cfg.box[1], x0 + cfg.epsilon)
    rng = SeededRng(cfg.seed)
    zeros = np.zeros(model.num_classes)
    logits = logits0
    for restart in range(cfg.restarts):
        if restart == 0 and not cfg.random_start:
            x, logits_x = x0, logits0
        else:
            x = _project(x0 + rng.generator.uniform(-cfg.epsilon, cfg.epsilon, x0.shape), lo, hi)
            logits_x = None
        x_prev = x
        for t in range(cfg.iterations):
            if cfg.loss != "margin" and logits_x is None:
                logits_x = forward(model, x, local)
            # the margin cotangent does not depend on the logits
            cot = loss_cotangent(cfg.loss, logits_x if cfg.loss != "margin" else zeros, target, origin)
            g = vjp(model, x, cot, local)
            z = _project(x + _step_size(cfg, t) * np.sign(g), lo, hi)
            if cfg.step_schedule == "halving_checkpoints" and t > 0:
                z = _project(x + MOMENTUM * (z - x) + (1 - MOMENTUM) * (x - x_prev), lo, hi)
            x_prev, x = x, z
            logits_x = forward(model, x, local)
            logits = logits_x
            if int(np.argmax(logits_x)) == target:
                out = _outcome(True, x, logits_x, target, origin, local, "pgd")
                _merge(counter, local)
                return out
    out = _outcome(False, None, logits, target, origin, local, "pgd")
    _merge(counter, local)
    return out


def fgsm_targeted(model, x0, target, epsilon, box=(0.0, 1.0), counter=None, loss="margin", origin=None):
    """One signed-gradient step of size ``epsilon`` toward ``target``, then box clip.

    Costs one forward and one backward pass plus one forward pass for the
    success check.
    """
    x0 = as_vector(x0, "x0")
    target = model._check_class(target)
    local = PassCounter()
    logits0 = forward(model, x0, local)
    if origin is None:
        origin = int(np.argmax(logits0))
    g = vjp(model, x0, loss_cotangent(loss, logits0, target, origin), local)
    lo = np.maximum(box[0], x0 - epsilon)
    hi = np.minimum(box[1], x0 + epsilon)
    x = _project(x0 + epsilon * np.sign(g), lo, hi)
    logits = forward(model, x, local)
    out = _outcome(int(np.argmax(logits)) == target, x, logits, target, origin, local, "fgsm")
    _merge(counter, local)
    return out


def fgsm_attack(model, x0, target, cfg, counter=None, origin=None):
    return fgsm_targeted(model, x0, target, cfg.epsilon, cfg.box, counter, cfg.loss, origin)


def _merge(counter, local):
    if counter is not None:
        counter.merge(local)


# --- drivers -----------------------------------------------------------------


def _clean_check(model, x0, label, components, local):
    logits = forward(model, x0, local)
    components.append(("clean", 1, 0))
    pred = int(np.argmax(logits))
    if label is not None and pred != label:
        return logits, AttackOutcome(
            success=True,
            adversarial_input=np.array(x0, dtype=np.float64),
            target_used=pred,
            target_rank_in_plan=0,
            confidence_rank_of_target=0,
            final_margin=0.0,
            origin=pred,
        )
    return logits, None


def _run_plan(model, x0, plan, cfg, attack, components, local):
    last = None
    for rank, cand in enumerate(plan.targets, start=1):
        if not math.isfinite(cand.score):
            continue
        sub = PassCounter()
        last = attack(model, x0, cand.class_index, cfg, sub, plan.origin)
        components.append((f"attack:{cand.class_index}", sub.forward_count, sub.backward_count))
        local.merge(sub)
        if last.success:
            last.target_rank_in_plan = rank
            last.confidence_rank_of_target = cand.confidence_rank
            return last
    return AttackOutcome(
        success=False,
        final_margin=last.final_margin if last is not None else math.nan,
        origin=plan.origin,
    )


def _finish(outcome, components, local, counter):
    outcome.components = components
    outcome.forward_passes = local.forward_count
    outcome.backward_passes = local.backward_count
    _merge(counter, local)
    return outcome


def malt_attack(model, x0, cfg, c=DEFAULT_C, a=DEFAULT_A, attack=pgd_targeted, label=None, counter=None):
    """Score the top-``c`` classes, then attack the best ``a`` in score order until one succeeds.

    When ``label`` is given and x0 is already misclassified, the clean input
    is returned as its own adversarial example.
    """
    x0 = as_vector(x0, "x0")
    local, components = PassCounter(), []
    logits, done = _clean_check(model, x0, label, components, local)
    if done is not None:
        return _finish(done, components, local, counter)
    sub = PassCounter()
    plan = malt_targets(model, x0, c, a, counter=sub, logits=logits)
    components.append(("targeting", sub.forward_count, sub.backward_count))
    local.merge(sub)
    return _finish(_run_plan(model, x0, plan, cfg, attack, components, local), components, local, counter)


def naive_attack(model, x0, cfg, a=DEFAULT_A, attack=pgd_targeted, label=None, counter=None):
    """Attack the top-``a`` classes in logit order; no scoring passes."""
    x0 = as_vector(x0, "x0")
    local, components = PassCounter(), []
    logits, done = _clean_check(model, x0, label, components, local)
    if done is not None:
        return _finish(done, components, local, counter)
    plan = naive_targets(model, x0, a, logits=logits)
    components.append(("targeting", 0, 0))
    return _finish(_run_plan(model, x0, plan, cfg, attack, components, local), components, local, counter)


def exact_linear_attack(model, x0, cfg, a=DEFAULT_A, label=None, counter=None):
    """Try the closed-form boundary crossings of a linear model in order of L2 norm.

    A crossing counts only if it fits the L-inf budget and the box.
    """
    x0 = as_vector(x0, "x0")
    local, components = PassCounter(), []
    _, done = _clean_check(model, x0, label, components, local)
    if done is not None:
        return _finish(done, components, local, counter)
    sub = PassCounter()
    ordered = linear_min_perturbation(model, x0, sub)
    plan = exact_linear_targets(model, x0, a, solutions=ordered)
    solutions = {s.target: s for s in ordered}
    components.append(("targeting", sub.forward_count, sub.backward_count))
    local.merge(sub)
    lo, hi = cfg.box
    for rank, cand in enumerate(plan.targets, start=1):
        sol = solutions[cand.class_index]
        if not sol.reachable:
            continue
        x = x0 + sol.perturbation * (1.0 + BOUNDARY_OVERSHOOT)
        if np.max(np.abs(x - x0)) > cfg.epsilon or np.any(x < lo) or np.any(x > hi):
            continue
        logits = forward(model, x, local)
        components.append((f"check:{cand.class_index}", 1, 0))
        if int(np.argmax(logits)) == cand.class_index:
            out = AttackOutcome(
                success=True,
                adversarial_input=x,
                target_used=cand.class_index,
                target_rank_in_plan=rank,
                confidence_rank_of_target=cand.confidence_rank,
                final_margin=float(logits[cand.class_index] - logits[plan.origin]),
                origin=plan.origin,
            )
            return _finish(out, components, local, counter)
    return _finish(AttackOutcome(success=False, origin=plan.origin), components, local, counter)


def attack_example(model, x0, method, cfg, c=DEFAULT_C, a=DEFAULT_A, attack=pgd_targeted, label=None, counter=None):
    if method == "malt":
        return malt_attack(model, x0, cfg, c, a, attack, label, counter)
    if method == "naive":
        return naive_attack(model, x0, cfg, a, attack, label, counter)
    if method in ("exact-linear", "exact_linear"):
        return exact_linear_attack(model, x0, cfg, a, label, counter)
    raise ConfigError(f"unknown attack method {method!r}")


def run_attacks(model, data, method, cfg, c=DEFAULT_C, a=DEFAULT_A, attack=pgd_targeted, jobs=1, counter=None):
    """Attack every example; results are ordered by example index for any ``jobs``.

    Example ``i`` uses seed ``child_seed(cfg.seed, i)`` so random starts do not
    depend on scheduling.
    """
    def one(i):
        local_cfg = replace(cfg, seed=child_seed(cfg.seed, i))
        return attack_example(model, data.inputs[i], method, local_cfg, c, a, attack, int(data.labels[i]))

    idx = range(len(data))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, idx))
    else:
        outcomes = [one(i) for i in idx]
    if counter is not None:
        for o in outcomes:
            counter.add(o.forward_passes, o.backward_passes)
    return outcomes


# --- reporting ---------------------------------------------------------------

RESULT_COLUMNS = (
    "example_index,label,clean_pred,method,success,target_used,target_rank_in_plan,"
    "confidence_rank_of_target,linf_norm,forward_passes,backward_passes"
)


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.17g}"
    return str(v)


def result_rows(data, outcomes, method):
    for i, o in enumerate(outcomes):
        x0 = data.inputs[i]
        yield (i, int(data.labels[i]), o.origin, method, o.success, o.target_used,
               o.target_rank_in_plan, o.confidence_rank_of_target, o.linf_norm(x0),
               o.forward_passes, o.backward_passes)


def write_results_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(RESULT_COLUMNS + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def summarize(data, outcomes, a):
    n = len(outcomes)
    clean_mis = sum(1 for o in outcomes if o.success and o.target_rank_in_plan == 0)
    by_rank = [0] * a
    for o in outcomes:
        if o.success and o.target_rank_in_plan:
            by_rank[o.target_rank_in_plan - 1] += 1
    attacked = sum(by_rank)
    return {
        "examples": n,
        "clean_accuracy": (n - clean_mis) / n,
        "clean_misclassified": clean_mis,
        "attack_successes": attacked,
        "robust_accuracy": (n - clean_mis - attacked) / n,
        "success_by_rank": by_rank,
        "forward_total": sum(o.forward_passes for o in outcomes),
        "backward_total": sum(o.backward_passes for o in outcomes),
    }


def success_set(outcomes):
    return {i for i, o in enumerate(outcomes) if o.success}


# --- budget model ------------------------------------------------------------


@dataclass(frozen=True)
class BudgetReport:
    method: str
    forward_total: int
    backward_total: int

    @property
    def combined_total(self):
        return self.forward_total + self.backward_total

    def to_json(self):
        return {
            "method": self.method,
            "forward_total": self.forward_total,
            "backward_total": self.backward_total,
            "combined_total": self.combined_total,
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=2)


def budget_model(method, c=DEFAULT_C, a=DEFAULT_A, iterations=DEFAULT_ITERATIONS, square_queries=5000):
    """Worst-case pass counts (no early exit) for MALT and the AutoAttack components.

    Scoring is charged ``c`` backward passes here, as in the original
    accounting; the live drivers spend ``c + 1``.
    """
    T = iterations
    if method == "malt":
        return BudgetReport("malt", a * T, c + a * T)
    if method == "apgd_untargeted":
        return BudgetReport(method, T, T)
    if method == "apgd_targeted":
        return BudgetReport(method, a * T, a * T)
    if method == "fab_targeted":
        # per iteration one backward and two forwards, plus three forwards per target
        return BudgetReport(method, a * (2 * T + 3), a * T)
    if method == "square":
        return BudgetReport(method, square_queries, 0)
    if method == "autoattack":
        parts = [
            budget_model("apgd_untargeted", c, a, T, square_queries),
            budget_model("apgd_targeted", c, a, T, square_queries),
            budget_model("fab_targeted", c, a, T, square_queries),
            budget_model("square", c, a, T, square_queries),
        ]
        return BudgetReport(
            "autoattack",
            sum(p.forward_total for p in parts),
            sum(p.backward_total for p in parts),
        )
    raise ConfigError(f"unknown budget method {method!r}")
