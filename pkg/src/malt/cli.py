"""Command-line entry point: ``malt <subcommand> [flags]``.

Parameters resolve as built-in defaults < ``--config`` JSON file < flags. Every
command writes ``resolved_config.json`` (minus the execution-only ``out`` and
``jobs`` keys) into its output directory.

Exit codes: 0 success, 2 config/usage error, 3 data/model format error,
4 numerical abort.
"""

import argparse
import json
import math
import os
import sys

from . import attacks, data as data_mod, models, probe, targeting
from .errors import ConfigError, FormatError, NumericalAbort
from .linalg import SeededRng

EXECUTION_ONLY = ("out", "jobs", "config")

DEFAULTS = {
    "gen-data": {
        "kind": "subspace", "d": 8, "p": 2, "r": 20, "classes": 10, "spread": 0.15,
        "seed": 0, "out": ".",
    },
    "train": {
        "data": None, "model_kind": "mlp", "hidden": "32", "activation": "relu", "beta": 0.1,
        "m": 128, "heads": 1, "loss": None, "lr": 0.1, "steps": 100,
        "first_layer_only": False, "seed": 0, "out": ".",
    },
    "attack": {
        "model": None, "data": None, "method": "malt", "compare": None, "c": targeting.DEFAULT_C,
        "a": targeting.DEFAULT_A, "iters": attacks.DEFAULT_ITERATIONS,
        "epsilon": attacks.DEFAULT_EPSILON, "step_schedule": "fixed", "loss": "margin",
        "attack": "pgd", "box": [0.0, 1.0], "restarts": 1, "random_start": False, "seed": 0,
        "c_sweep": None, "max_examples": None, "budget_only": False, "figures": True,
        "jobs": 1, "out": ".",
    },
    "probe": {
        "model": None, "data": None, "kind": "random_sign", "epsilon": 8 / 255, "steps": 100,
        "norm": "linf", "box": [0.0, 1.0], "seed": 0, "example_index": 0, "max_examples": None,
        "figures": True, "jobs": 1, "out": ".",
    },
    "verify-theory": {
        "grid": None, "trials": 200, "trend_trials": 50, "trend_d": "64,128,256,512",
        "trend_R": 4.0, "seed": 0, "figures": True, "jobs": 1, "out": ".",
    },
    "budget": {
        "method": "malt,autoattack", "c": targeting.DEFAULT_C, "a": targeting.DEFAULT_A,
        "iters": attacks.DEFAULT_ITERATIONS, "square_queries": 5000, "out": None,
    },
}


def _add(p, cmd, *names, help, dest=None, **kw):
    dest = dest or names[0].lstrip("-").replace("-", "_")
    default = DEFAULTS[cmd].get(dest)
    if kw.get("action") not in ("store_true", "store_false"):
        help = f"{help} (default: {default})"
    p.add_argument(*names, dest=dest, default=argparse.SUPPRESS, help=help, **kw)


def build_parser():
    parser = argparse.ArgumentParser(prog="malt", description="MALT targeting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _add(p, "gen-data", "--kind", choices=["subspace", "clusters"], help="generator")
    _add(p, "gen-data", "--d", type=int, help="ambient input dimension")
    _add(p, "gen-data", "--p", type=int, help="data subspace dimension (subspace kind)")
    _add(p, "gen-data", "--r", type=int, help="number of points")
    _add(p, "gen-data", "--classes", type=int, help="number of classes (clusters kind)")
    _add(p, "gen-data", "--spread", type=float, help="cluster standard deviation")
    _add(p, "gen-data", "--seed", type=int, help="random seed")
    _add(p, "gen-data", "--out", help="output directory")

    p = sub.add_parser("train", help="initialize and train a model")
    _add(p, "train", "--data", help="training CSV")
    _add(p, "train", "--model-kind", choices=["linear", "two_layer", "mlp"], help="model kind")
    _add(p, "train", "--hidden", help="comma-separated MLP hidden widths")
    _add(p, "train", "--activation", choices=["relu", "smooth_leaky"], help="MLP hidden activation")
    _add(p, "train", "--beta", type=float, help="smooth leaky slope floor")
    _add(p, "train", "--m", type=int, help="two-layer hidden width")
    _add(p, "train", "--heads", type=int, help="two-layer output heads (1 = scalar binary net)")
    _add(p, "train", "--loss", choices=["mse", "bce", "ce"], help="loss (None = ce, mse for two_layer)")
    _add(p, "train", "--lr", type=float, help="learning rate")
    _add(p, "train", "--steps", type=int, help="gradient descent steps")
    _add(p, "train", "--first-layer-only", action="store_true", help="train only the first layer")
    _add(p, "train", "--seed", type=int, help="initialization seed")
    _add(p, "train", "--out", help="output directory")

    p = sub.add_parser("attack", help="run MALT / naive / exact-linear attacks")
    _add(p, "attack", "--model", help="model JSON")
    _add(p, "attack", "--data", help="data CSV")
    _add(p, "attack", "--method", choices=["malt", "naive", "exact-linear"], help="targeting method")
    _add(p, "attack", "--compare", help="comma-separated methods run side by side, e.g. malt,naive")
    _add(p, "attack", "--c", type=int, help="MALT candidates scored")
    _add(p, "attack", "--a", type=int, help="targets attacked")
    _add(p, "attack", "--iters", type=int, help="attack iterations T")
    _add(p, "attack", "--epsilon", type=float, help="L-inf budget")
    _add(p, "attack", "--step-schedule", choices=["fixed", "halving_checkpoints"], help="step schedule")
    _add(p, "attack", "--loss", choices=["margin", "dlr_style"], help="attack loss")
    _add(p, "attack", "--attack", choices=["pgd", "fgsm"], help="per-target attack")
    _add(p, "attack", "--box", type=float, nargs=2, metavar=("LO", "HI"), help="input box")
    _add(p, "attack", "--restarts", type=int, help="restarts per target")
    _add(p, "attack", "--random-start", action="store_true", help="start restart 0 at a random point")
    _add(p, "attack", "--seed", type=int, help="attack seed")
    _add(p, "attack", "--c-sweep", help="comma-separated c values to compare success sets against --c")
    _add(p, "attack", "--max-examples", type=int, help="attack only the first N examples")
    _add(p, "attack", "--budget-only", action="store_true", help="print the worst-case budget model and exit")
    _add(p, "attack", "--no-figures", dest="figures", action="store_false", help="skip figures")
    _add(p, "attack", "--jobs", type=int, help="parallel workers")
    _add(p, "attack", "--out", help="output directory")

    p = sub.add_parser("probe", help="measure local linearity along a direction")
    _add(p, "probe", "--model", help="model JSON")
    _add(p, "probe", "--data", help="data CSV")
    _add(p, "probe", "--kind", choices=["random_sign", "gradient"], help="direction kind")
    _add(p, "probe", "--epsilon", type=float, help="direction size")
    _add(p, "probe", "--steps", type=int, help="number of equal parts")
    _add(p, "probe", "--norm", choices=["linf", "l2"], help="gradient direction normalization")
    _add(p, "probe", "--box", type=float, nargs=2, metavar=("LO", "HI"), help="input box")
    _add(p, "probe", "--seed", type=int, help="direction seed")
    _add(p, "probe", "--example-index", type=int, help="example traced in trace.csv")
    _add(p, "probe", "--max-examples", type=int, help="examples aggregated in stats.csv")
    _add(p, "probe", "--no-figures", dest="figures", action="store_false", help="skip figures")
    _add(p, "probe", "--jobs", type=int, help="parallel workers")
    _add(p, "probe", "--out", help="output directory")

    p = sub.add_parser("verify-theory", help="Monte Carlo check of the two-layer bounds")
    _add(p, "verify-theory", "--grid", help="JSON grid file")
    _add(p, "verify-theory", "--trials", type=int, help="trials per config")
    _add(p, "verify-theory", "--trend-trials", type=int, help="trials per trend dimension")
    _add(p, "verify-theory", "--trend-d", help="comma-separated trend dimensions")
    _add(p, "verify-theory", "--trend-R", type=float, help="trend perturbation radius")
    _add(p, "verify-theory", "--seed", type=int, help="base seed")
    _add(p, "verify-theory", "--no-figures", dest="figures", action="store_false", help="skip figures")
    _add(p, "verify-theory", "--jobs", type=int, help="parallel workers")
    _add(p, "verify-theory", "--out", help="output directory")

    p = sub.add_parser("budget", help="closed-form worst-case pass counts")
    _add(p, "budget", "--method", help="comma-separated: malt, autoattack, apgd_untargeted, "
         "apgd_targeted, fab_targeted, square")
    _add(p, "budget", "--c", type=int, help="MALT candidates")
    _add(p, "budget", "--a", type=int, help="targets")
    _add(p, "budget", "--iters", type=int, help="iterations per attack")
    _add(p, "budget", "--square-queries", type=int, help="Square attack queries")
    _add(p, "budget", "--out", help="optional output directory for budget.json")

    for sp in sub.choices.values():
        sp.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of flag values")
    return parser


def resolve(command, ns):
    params = dict(DEFAULTS[command])
    flags = {k: v for k, v in vars(ns).items() if k != "command"}
    if "config" in flags:
        try:
            with open(flags["config"], encoding="utf-8") as fh:
                from_file = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", "config") from None
        if not isinstance(from_file, dict):
            raise FormatError("config file must hold an object", "config")
        for key, value in from_file.items():
            key = key.replace("-", "_")
            if key not in params:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            params[key] = value
    params.update({k: v for k, v in flags.items() if k != "config"})
    return params


def _write_resolved(params, out):
    os.makedirs(out, exist_ok=True)
    echo = {k: v for k, v in params.items() if k not in EXECUTION_ONLY}
    with open(os.path.join(out, "resolved_config.json"), "w", encoding="utf-8") as fh:
        json.dump(echo, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require(params, *keys):
    for k in keys:
        if params.get(k) in (None, ""):
            raise ConfigError(f"--{k.replace('_', '-')} is required")


def _int_list(text):
    return [int(t) for t in str(text).split(",") if t.strip()]


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# --- commands ------------------------------------------------------------------


def cmd_gen_data(params):
    out = params["out"]
    if params["kind"] == "subspace":
        spec = data_mod.SubspaceDatasetSpec(params["d"], params["p"], params["r"], params["seed"])
        ds, basis = data_mod.gen_subspace_dataset(spec)
        _write_resolved(params, out)
        data_mod.write_csv(ds, os.path.join(out, "data.csv"))
        _dump_json(
            {"ambient_dim": basis.ambient_dim, "data_dim": basis.dim, "vectors": basis.vectors.tolist()},
            os.path.join(out, "basis.json"),
        )
    else:
        ds = data_mod.gen_cluster_dataset(params["d"], params["classes"], params["r"], params["seed"], params["spread"])
        _write_resolved(params, out)
        data_mod.write_csv(ds, os.path.join(out, "data.csv"))
    print(f"wrote {len(ds)} rows (d={ds.dim}, classes={ds.num_classes}) to {out}")


def build_model(params, data):
    rng = SeededRng(params["seed"])
    kind = params["model_kind"]
    if kind == "linear":
        W = rng.generator.standard_normal((data.num_classes, data.dim)) / math.sqrt(data.dim)
        return models.LinearModel(W, [0.0] * data.num_classes)
    if kind == "two_layer":
        heads = params["heads"]
        if heads == 1 and data.num_classes != 2:
            raise ConfigError("a single-head two_layer net needs binary labels")
        if heads != 1 and heads != data.num_classes:
            raise ConfigError("heads must be 1 or the number of classes")
        return models.TwoLayerNet.init(data.dim, params["m"], rng, params["beta"], heads)
    act = models.ReluActivation() if params["activation"] == "relu" else models.SmoothLeakyActivation(params["beta"])
    dims = [data.dim] + _int_list(params["hidden"]) + [data.num_classes]
    return models.MlpModel.init(dims, rng, act)


def cmd_train(params):
    _require(params, "data")
    data = data_mod.load_csv(params["data"])
    model = build_model(params, data)
    kind = params["model_kind"]
    loss = params["loss"] or ("mse" if kind == "two_layer" else "ce")
    first_only = params["first_layer_only"] or kind == "two_layer"
    cfg = data_mod.TrainConfig(loss, params["lr"], params["steps"], first_only, params["seed"])
    trained, trace = data_mod.train(model, data, cfg)
    out = params["out"]
    _write_resolved(params, out)
    models.save_model(trained, os.path.join(out, "model.json"))
    data_mod.write_loss_trace(trace, os.path.join(out, "loss_trace.csv"))
    print(f"trained {kind} model: loss {trace[0]:.6g} -> {trace[-1]:.6g}")


def _attack_config(params):
    return attacks.AttackConfig(
        epsilon=params["epsilon"], iterations=params["iters"], step_schedule=params["step_schedule"],
        loss=params["loss"], box=tuple(params["box"]), restarts=params["restarts"],
        seed=params["seed"], random_start=params["random_start"],
    )


def _subset(data, n):
    if n is None or n >= len(data):
        return data
    return data_mod.Dataset(data.inputs[:n], data.labels[:n], data.num_classes)


def cmd_attack(params):
    if params["budget_only"]:
        report = attacks.budget_model("malt", params["c"], params["a"], params["iters"])
        print(report.dumps())
        return
    _require(params, "model", "data")
    model = models.load_model(params["model"])
    data = _subset(data_mod.load_csv(params["data"], num_classes=model.num_classes), params["max_examples"])
    if data.dim != model.input_dim:
        raise ConfigError(f"model expects {model.input_dim} inputs, data has {data.dim}")
    methods = [m.strip() for m in params["compare"].split(",")] if params["compare"] else [params["method"]]
    for m in methods:
        if m not in ("malt", "naive", "exact-linear"):
            raise ConfigError(f"unknown method {m!r}")
        if m == "exact-linear" and not isinstance(model, models.LinearModel):
            raise ConfigError("exact-linear targeting needs a linear model")
    cfg = _attack_config(params)
    attack_fn = attacks.pgd_targeted if params["attack"] == "pgd" else attacks.fgsm_attack
    jobs = params["jobs"]
    out = params["out"]
    _write_resolved(params, out)

    runs, rows, summary = {}, [], {"methods": {}}
    for m in methods:
        outcomes = attacks.run_attacks(model, data, m, cfg, params["c"], params["a"], attack_fn, jobs)
        runs[m] = outcomes
        rows.extend(attacks.result_rows(data, outcomes, m))
        summary["methods"][m] = attacks.summarize(data, outcomes, params["a"])
    if len(methods) > 1:
        summary["inclusion"] = _inclusion(runs)
    if params["c_sweep"]:
        summary["c_sweep"] = _c_sweep(model, data, cfg, params, attack_fn, jobs, runs.get("malt"))
    summary["budget"] = attacks.budget_model("malt", params["c"], params["a"], params["iters"]).to_json()
    attacks.write_results_csv(rows, os.path.join(out, "results.csv"))
    _dump_json(summary, os.path.join(out, "summary.json"))
    if params["figures"]:
        from .plotting import plot_rank_histogram

        plot_rank_histogram(
            {m: s["success_by_rank"] for m, s in summary["methods"].items()},
            os.path.join(out, "rank_histogram.png"),
        )
    for m, s in summary["methods"].items():
        print(f"{m}: robust accuracy {s['robust_accuracy']:.4f}, passes "
              f"{s['forward_total']} forward / {s['backward_total']} backward")


def _inclusion(runs):
    sets = {m: attacks.success_set(o) for m, o in runs.items()}
    report = {}
    names = list(sets)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            report[f"{a}_vs_{b}"] = {
                f"only_{a}": sorted(sets[a] - sets[b]),
                f"only_{b}": sorted(sets[b] - sets[a]),
                f"{b}_subset_of_{a}": sets[b] <= sets[a],
                "identical": sets[a] == sets[b],
            }
    return report


def _c_sweep(model, data, cfg, params, attack_fn, jobs, base):
    if base is None:
        base = attacks.run_attacks(model, data, "malt", cfg, params["c"], params["a"], attack_fn, jobs)
    base_set = attacks.success_set(base)
    report = {}
    for c in _int_list(params["c_sweep"]):
        outcomes = attacks.run_attacks(model, data, "malt", cfg, c, params["a"], attack_fn, jobs)
        s = attacks.success_set(outcomes)
        report[str(c)] = {
            "attack_successes": len(s),
            "only_this_c": sorted(s - base_set),
            "only_default_c": sorted(base_set - s),
            "identical_to_default": s == base_set,
        }
    return report


def cmd_probe(params):
    _require(params, "model", "data")
    model = models.load_model(params["model"])
    data = data_mod.load_csv(params["data"], num_classes=max(2, model.num_classes))
    if data.dim != model.input_dim:
        raise ConfigError(f"model expects {model.input_dim} inputs, data has {data.dim}")
    if not 0 <= params["example_index"] < len(data):
        raise ConfigError("example_index out of range")
    spec = probe.DirectionSpec(params["kind"], params["epsilon"], params["steps"], tuple(params["box"]), params["seed"], params["norm"])
    out = params["out"]
    _write_resolved(params, out)
    trace = probe.linearity_trace(model, data.inputs[params["example_index"]], spec)
    stats = probe.linearity_stats(model, _subset(data, params["max_examples"]), spec, params["jobs"])
    probe.write_trace_csv(trace, os.path.join(out, "trace.csv"))
    probe.write_stats_csv(stats, os.path.join(out, "stats.csv"))
    if params["figures"]:
        from .plotting import plot_linearity_stats, plot_logit_trace

        plot_linearity_stats(stats, os.path.join(out, "alpha_stats.png"), f"{spec.kind}, eps={spec.epsilon:.4g}")
        plot_logit_trace(trace, os.path.join(out, "logit_trace.png"))
    print(f"alpha at step {spec.steps}: mean {stats.alpha_mean[-1]:.4g} over {stats.used} examples "
          f"({stats.skipped} skipped)")


def _theory_grid(params, explicit):
    grid = {}
    if params["grid"]:
        try:
            with open(params["grid"], encoding="utf-8") as fh:
                grid = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", "grid") from None
    known = {f for f in probe.TheoryConfig.__dataclass_fields__}
    configs = []
    for i, entry in enumerate(grid.get("configs", [{}])):
        unknown = set(entry) - known
        if unknown:
            raise ConfigError(f"configs[{i}]: unknown keys {sorted(unknown)}")
        configs.append(probe.TheoryConfig(**entry))
    trend = grid.get("trend", {})

    def pick(grid_value, key):
        # explicit flags beat the grid file, which beats defaults
        return params[key] if key in explicit or grid_value is None else grid_value

    trials = pick(grid.get("trials_per_cfg"), "trials")
    d_grid = _int_list(pick(",".join(map(str, trend["d_grid"])) if "d_grid" in trend else None, "trend_d"))
    R = pick(trend.get("R"), "trend_R")
    overrides = trend.get("overrides", {})
    trend_configs = [probe.trend_config(d, R, **overrides) for d in d_grid]
    trend_trials = pick(trend.get("trials"), "trend_trials")
    return configs, trials, trend_configs, trend_trials


def cmd_verify_theory(params, explicit=()):
    configs, trials, trend_configs, trend_trials = _theory_grid(params, explicit)
    for cfg in configs + trend_configs:
        cfg.validate()
    out = params["out"]
    _write_resolved(params, out)
    result = probe.theory_suite(configs, trials, trend_configs, trend_trials, params["seed"], params["jobs"])
    probe.write_trials_csv(result.trials, os.path.join(out, "trials.csv"))
    if result.violations:
        probe.write_rows_csv(result.violations, list(result.violations[0]), os.path.join(out, "violations.csv"))
    if result.trend:
        probe.write_rows_csv(result.trend, list(result.trend[0]), os.path.join(out, "trend.csv"))
        if params["figures"]:
            from .plotting import plot_theory_trend

            plot_theory_trend(result.trend, os.path.join(out, "theory_trend.png"))
    for row in result.violations:
        print(f"d={row['d']} p={row['p']} m={row['m']}: violation rates "
              f"{row['thm41_violation_rate']:.3f} (gradient change), {row['thm42_violation_rate']:.3f} (gradient norm)")
    for row in result.trend:
        print(f"trend d={row['d']}: mean ratio {row['mean_ratio']:.4g}")


def cmd_budget(params):
    names = [m.strip() for m in str(params["method"]).split(",") if m.strip()]
    reports = [attacks.budget_model(m, params["c"], params["a"], params["iters"], params["square_queries"]) for m in names]
    payload = {"reports": [r.to_json() for r in reports]}
    if len(reports) == 2:
        payload["combined_ratio"] = reports[1].combined_total / reports[0].combined_total
    text = json.dumps(payload, indent=2)
    print(text)
    if params["out"]:
        os.makedirs(params["out"], exist_ok=True)
        with open(os.path.join(params["out"], "budget.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "attack": cmd_attack,
    "probe": cmd_probe,
    "verify-theory": cmd_verify_theory,
    "budget": cmd_budget,
}


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        params = resolve(ns.command, ns)
        if params.get("jobs", 1) is not None and params.get("jobs", 1) < 1:
            raise ConfigError("--jobs must be >= 1")
        if ns.command == "verify-theory":
            cmd_verify_theory(params, set(vars(ns)))
        else:
            COMMANDS[ns.command](params)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
