"""Local-linearity probes and the two-layer theory harness.

``linearity_trace`` measures how much the input gradient moves along a
perturbation split into equal parts. ``theory_trial`` trains a two-layer
network on subspace data and compares gradient statistics orthogonal to the
data against the closed-form high-probability bounds.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from .data import SubspaceDatasetSpec, TrainConfig, gen_subspace_dataset, train
from .errors import ConfigError, NumericalAbort
from .linalg import SeededRng, child_seed, project_complement, sample_sign
from .models import TwoLayerNet, forward, grad_class, jacobian

ZERO_GRAD_TOL = 1e-14


class ZeroGradientError(NumericalAbort):
    """The origin-class gradient vanishes at x0, so alpha is undefined."""


@dataclass(frozen=True)
class DirectionSpec:
    kind: str = "random_sign"
    epsilon: float = 8 / 255
    steps: int = 100
    box: tuple = (0.0, 1.0)
    seed: int = 0
    norm: str = "linf"  # normalization of the gradient direction

    def __post_init__(self):
        if self.kind not in ("random_sign", "gradient"):
            raise ConfigError(f"unknown direction kind {self.kind!r}")
        if self.norm not in ("linf", "l2"):
            raise ConfigError(f"unknown direction norm {self.norm!r}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")
        if not self.box[0] < self.box[1]:
            raise ConfigError("box needs lo < hi")


@dataclass
class LinearityTrace:
    origin: int
    direction: np.ndarray
    alpha: np.ndarray  # (steps,)
    alpha_part: np.ndarray  # (steps - 1,)
    logits_actual: np.ndarray  # (steps, k)
    logits_linear: np.ndarray  # (steps, k)


def direction_for(model, x0, spec, grad0):
    if spec.kind == "random_sign":
        v = sample_sign(SeededRng(spec.seed), model.input_dim, spec.epsilon)
    else:
        scale = np.max(np.abs(grad0)) if spec.norm == "linf" else np.linalg.norm(grad0)
        v = spec.epsilon * grad0 / scale
    # truncate once, before splitting into parts
    return np.clip(x0 + v, spec.box[0], spec.box[1]) - x0


def linearity_trace(model, x0, spec, counter=None):
    """alpha_i = ||g(x0) - g(x0 + v_i)|| / ||g(x0)|| with v_i = (i / steps) v.

    ``g`` is the gradient of the logit of the class predicted at x0.
    ``alpha_part_i`` compares consecutive points v_i and v_{i+1}. The linear
    logits use the full Jacobian at x0.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    logits0 = forward(model, x0, counter)
    origin = int(np.argmax(logits0))
    g0 = grad_class(model, x0, origin, counter)
    n0 = float(np.linalg.norm(g0))
    if n0 < ZERO_GRAD_TOL:
        raise ZeroGradientError(f"gradient norm {n0:.3g} at x0 is too small to normalize by")
    v = direction_for(model, x0, spec, g0)
    Jv = jacobian(model, x0, range(model.num_classes), counter) @ v
    fractions = np.arange(1, spec.steps + 1) / spec.steps
    grads, actual = [], []
    for f in fractions:
        xi = x0 + f * v
        actual.append(forward(model, xi, counter))
        grads.append(grad_class(model, xi, origin, counter))
    grads = np.array(grads)
    alpha = np.linalg.norm(grads - g0, axis=1) / n0
    alpha_part = np.linalg.norm(np.diff(grads, axis=0), axis=1) / n0
    linear = logits0[None, :] + fractions[:, None] * Jv[None, :]
    return LinearityTrace(origin, v, alpha, alpha_part, np.array(actual), linear)


def write_trace_csv(trace, path):
    k = trace.logits_actual.shape[1]
    header = ["step_i", "alpha", "alpha_part"]
    header += [f"logit_{j}" for j in range(k)] + [f"lin_logit_{j}" for j in range(k)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(trace.alpha)):
            part = f"{trace.alpha_part[i]:.17g}" if i < len(trace.alpha_part) else ""
            cells = [str(i + 1), f"{trace.alpha[i]:.17g}", part]
            cells += [f"{v:.17g}" for v in trace.logits_actual[i]]
            cells += [f"{v:.17g}" for v in trace.logits_linear[i]]
            fh.write(",".join(cells) + "\n")


@dataclass
class LinearityStats:
    alpha_mean: np.ndarray
    alpha_std: np.ndarray
    alpha_part_mean: np.ndarray
    alpha_part_std: np.ndarray
    used: int
    skipped: int


def linearity_stats(model, data, spec, jobs=1):
    """Per-step mean and population std of alpha and alpha_part over a dataset.

    Example ``i`` draws its random direction from ``child_seed(spec.seed, i)``.
    Examples with a vanishing gradient are skipped and counted.
    """
    def one(i):
        try:
            return linearity_trace(model, data.inputs[i], replace(spec, seed=child_seed(spec.seed, i)))
        except ZeroGradientError:
            return None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(one, range(len(data))))
    else:
        traces = [one(i) for i in range(len(data))]
    kept = [t for t in traces if t is not None]
    if not kept:
        raise ZeroGradientError("every example has a vanishing gradient")
    A = np.array([t.alpha for t in kept])
    P = np.array([t.alpha_part for t in kept])
    return LinearityStats(A.mean(0), A.std(0), P.mean(0), P.std(0), len(kept), len(traces) - len(kept))


def write_stats_csv(stats, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("step_i,alpha_mean,alpha_std,alpha_part_mean,alpha_part_std\n")
        for i in range(len(stats.alpha_mean)):
            if i < len(stats.alpha_part_mean):
                part = f"{stats.alpha_part_mean[i]:.17g},{stats.alpha_part_std[i]:.17g}"
            else:
                part = ","
            fh.write(f"{i + 1},{stats.alpha_mean[i]:.17g},{stats.alpha_std[i]:.17g},{part}\n")


# --- theory harness ------------------------------------------------------------


def gradient_difference_bound(L, R, m, q, delta):
    """20 L R (sqrt(log(m / delta) / q) + log(1 / delta) / m); q is the complement dimension."""
    return 20.0 * L * R * (math.sqrt(math.log(m / delta) / q) + math.log(1.0 / delta) / m)


def gradient_norm_bound(beta, d, delta):
    """beta * sqrt(1 - 2 sqrt(log(1 / delta) / d))."""
    inner = 1.0 - 2.0 * math.sqrt(math.log(1.0 / delta) / d)
    if inner <= 0:
        raise ConfigError("1 - 2 sqrt(log(1/delta)/d) must be positive")
    return beta * math.sqrt(inner)


@dataclass(frozen=True)
class TheoryConfig:
    d: int = 256
    p: int = 64
    m: int = 512
    R: float = 4.0
    delta: float = 0.05
    beta: float = 0.1
    num_points: int = 64
    train_steps: int = 100
    learning_rate: float = 0.5
    loss: str = "mse"
    n_direction_samples: int = 64

    def validate(self):
        if not 1 <= self.p < self.d:
            raise ConfigError("data_dim must be < ambient_dim")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("delta must lie strictly between 0 and 1")
        if self.d < 2.0 * math.log(1.0 / self.delta):
            raise ConfigError("need d >= 2 log(1/delta)")
        if self.m < 1 or self.R <= 0 or self.n_direction_samples < 1:
            raise ConfigError("need m >= 1, R > 0 and at least one direction sample")
        gradient_norm_bound(self.beta, self.d, self.delta)
        TrainConfig(self.loss, self.learning_rate, self.train_steps, True).validate()

    @property
    def q(self):
        return self.d - self.p


@dataclass
class TheoryTrialReport:
    seed: int
    d: int
    p: int
    q: int
    m: int
    R: float
    delta: float
    beta: float
    L: float
    measured_sup_grad_diff: float
    thm41_bound: float
    measured_grad_norm: float
    thm42_bound: float
    lemmaA2_drift: float
    violates_thm41: bool
    violates_thm42: bool


TRIAL_COLUMNS = [f.name for f in fields(TheoryTrialReport)]


def _input_grads(net, X):
    """Rows are grad_x N(x) of the scalar network at each row of X (uncounted)."""
    coef = net.activation.deriv(X @ net.first_layer.T) * net.output_signs[0]
    return coef @ net.first_layer


def theory_trial(cfg, seed):
    cfg.validate()
    rng = SeededRng(seed)
    data, basis = gen_subspace_dataset(
        SubspaceDatasetSpec(cfg.d, cfg.p, cfg.num_points, seed=child_seed(seed, 0))
    )
    net = TwoLayerNet.init(cfg.d, cfg.m, rng.child(1), cfg.beta)
    net, _ = train(net, data, TrainConfig(cfg.loss, cfg.learning_rate, cfg.train_steps, True))
    init = net.init_snapshot
    drift = np.linalg.norm(project_complement(net.first_layer - init, basis), axis=1)
    drift = float(np.max(drift / np.linalg.norm(init, axis=1)))

    srng = rng.child(2).generator
    n = cfg.n_direction_samples
    X = data.inputs[srng.integers(0, len(data), size=n)]
    V = project_complement(srng.standard_normal((n, cfg.d)), basis)
    V *= cfg.R / np.linalg.norm(V, axis=1, keepdims=True)
    V[0] = 0.0  # v = 0 is always a sample
    G = _input_grads(net, X)
    diff = np.linalg.norm(project_complement(G - _input_grads(net, X + V), basis), axis=1)
    grad_norms = np.linalg.norm(project_complement(G, basis), axis=1)

    L = net.activation.smoothness
    b41 = gradient_difference_bound(L, cfg.R, cfg.m, cfg.q, cfg.delta)
    b42 = gradient_norm_bound(cfg.beta, cfg.d, cfg.delta)
    sup_diff, min_norm = float(diff.max()), float(grad_norms.min())
    return TheoryTrialReport(
        seed, cfg.d, cfg.p, cfg.q, cfg.m, cfg.R, cfg.delta, cfg.beta, L,
        sup_diff, b41, min_norm, b42, drift, sup_diff > b41, min_norm < b42,
    )


def trial_seed(base_seed, config_index, trial_index):
    return child_seed(child_seed(base_seed, config_index), trial_index)


def _map(fn, items, jobs):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def trend_config(d, R=4.0, **overrides):
    """Grid point for the dimension trend: p = d/4 and m = 2 (d - p)."""
    p = d // 4
    return TheoryConfig(d=d, p=p, m=2 * (d - p), R=R, **overrides)


@dataclass
class SuiteResult:
    trials: list
    violations: list
    trend: list


def theory_suite(configs, trials_per_cfg=200, trend_configs=(), trend_trials=50, seed=0, jobs=1):
    """Violation rates of both bounds per config, plus the dimension trend.

    The trend reports the ratio sup ||P_perp(grad N(x) - grad N(x+v))|| /
    ||P_perp grad N(x)|| averaged over trials for each trend config.
    """
    if trials_per_cfg < 20 or (trend_configs and trend_trials < 1):
        raise ConfigError("theory_suite needs at least 20 trials per config")
    for cfg in list(configs) + list(trend_configs):
        cfg.validate()
    trials, violations = [], []
    for ci, cfg in enumerate(configs):
        reports = _map(lambda t: theory_trial(cfg, trial_seed(seed, ci, t)), range(trials_per_cfg), jobs)
        trials.extend(reports)
        violations.append({
            "config_index": ci, "d": cfg.d, "p": cfg.p, "m": cfg.m, "R": cfg.R,
            "delta": cfg.delta, "beta": cfg.beta, "trials": len(reports),
            "thm41_bound": reports[0].thm41_bound,
            "thm41_violation_rate": sum(r.violates_thm41 for r in reports) / len(reports),
            "max_measured_sup_grad_diff": max(r.measured_sup_grad_diff for r in reports),
            "thm42_bound": reports[0].thm42_bound,
            "thm42_violation_rate": sum(r.violates_thm42 for r in reports) / len(reports),
            "min_measured_grad_norm": min(r.measured_grad_norm for r in reports),
            "max_lemmaA2_drift": max(r.lemmaA2_drift for r in reports),
        })
    trend = []
    for ti, cfg in enumerate(trend_configs):
        reports = _map(
            lambda t: theory_trial(cfg, trial_seed(seed, 1000 + ti, t)), range(trend_trials), jobs
        )
        ratios = np.array([r.measured_sup_grad_diff / r.measured_grad_norm for r in reports])
        trend.append({
            "d": cfg.d, "p": cfg.p, "q": cfg.q, "m": cfg.m, "R": cfg.R, "trials": len(reports),
            "mean_ratio": float(ratios.mean()), "std_ratio": float(ratios.std()),
        })
    return SuiteResult(trials, violations, trend)


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_rows_csv(rows, columns, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def write_trials_csv(reports, path):
    write_rows_csv([asdict(r) for r in reports], TRIAL_COLUMNS, path)
