"""Config-driven experiment runner.

Commands:
  train          sparse network training on MNIST-style data; per-epoch CSV traces
  convex-verify  run the convergence checks on quadratic testbeds
  init-stats     empirical statistics of the sparse initializer vs. its targets

Config files are INI-style with flat key=value entries (section names are
ignored; all sections are merged).  Every key is mirrored by a command-line
flag of the same name (dashes for underscores); flags override file values.
Exit codes: 0 success, 1 failed check, 2 configuration or data errors.

The same config+seed always produces byte-identical CSV output.
"""

import argparse
import configparser
import sys
from pathlib import Path

import numpy as np

from . import analysis, init, nn, optim, problems, regularizers


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config plumbing

TRAIN_DEFAULTS = {
    "optimizer": "linbreg",
    "regularizer": "l1",
    "lam": 0.1,
    "delta": 1.0,
    "beta": 0.9,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "tau": 0.1,
    "schedule_c": None,
    "schedule_p": 0.75,
    "init_r": 0.01,
    "activation": "relu",
    "fan_mode": None,
    "bias_lo": 0.01,
    "bias_hi": 0.1,
    "layer_sizes": "784,200,80,10",
    "task": "classify",
    "loss": None,
    "noise_sigma": 0.3,
    "train_images": None,
    "train_labels": None,
    "val_images": None,
    "val_labels": None,
    "epochs": 100,
    "batch_size": 128,
    "seeds": "0,1,2",
    "plateau_factor": 0.5,
    "plateau_patience": 5,
    "train_metric_subset": 2000,
    "out": "train.csv",
}

CONVEX_DEFAULTS = {
    "d": 20,
    "cond": 10.0,
    "sigmas": "0,0.5",
    "lam": 0.1,
    "delta": 1.0,
    "seed": 0,
    "decay_steps": 2000,
    "mc_seeds": 20,
    "mc_steps": 500,
    "summability_steps": 10000,
    "identity_steps": 1000,
    "conv_cond": 2.0,
    "conv_horizon": 20000,
    "conv_seeds": 50,
    "conv_p": 0.75,
    "conv_safety": 0.5,
    "out": "convex_report.csv",
}

INIT_DEFAULTS = {
    "n_out": 200,
    "n_in": 784,
    "init_r": 0.01,
    "activation": "relu",
    "fan_mode": None,
    "min_samples": 1_000_000,
    "seed": 0,
    "out": "init_stats.csv",
}

_INT_KEYS = {
    "epochs", "batch_size", "plateau_patience", "train_metric_subset", "d",
    "decay_steps", "mc_seeds", "mc_steps", "summability_steps", "identity_steps",
    "conv_horizon", "conv_seeds", "n_out", "n_in", "min_samples", "seed",
}
_FLOAT_KEYS = {
    "lam", "delta", "beta", "beta1", "beta2", "epsilon", "tau", "schedule_c",
    "schedule_p", "init_r", "bias_lo", "bias_hi", "noise_sigma", "plateau_factor",
    "cond", "conv_cond", "conv_p", "conv_safety", "conv_c",
}


def _coerce(key, value):
    if value is None or value == "":
        return None
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    return value


def load_config(path):
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    merged = {}
    for section in cp.sections():
        merged.update(dict(cp.items(section)))
    return merged


def resolve(defaults, file_cfg, args):
    """defaults < config file < command-line flags."""
    cfg = dict(defaults)
    for key, value in file_cfg.items():
        if key == "lambda":
            key = "lam"
        if key not in defaults and key not in ("conv_c",):
            raise ConfigError(f"unknown config key: {key}")
        cfg[key] = _coerce(key, value)
    for key in list(defaults) + ["conv_c"]:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = _coerce(key, flag)
    return cfg


def _parse_list(text, kind=float):
    return [kind(tok) for tok in str(text).split(",") if tok != ""]


# ---------------------------------------------------------------------------
# train


def _build_schedule(cfg):
    if cfg.get("schedule_c") is not None:
        return optim.PowerDecay(cfg["schedule_c"], cfg["schedule_p"])
    return optim.ConstantStep(cfg["tau"])


class PlateauDecay:
    """Scale the step schedule down when the validation metric stops improving.

    A strict new best resets the stagnation counter; after `patience` epochs
    without one, schedule.scale is multiplied by `factor` and the counter
    restarts.  patience <= 0 disables the rule.  update() returns True on the
    epochs where a decay fired.
    """

    def __init__(self, schedule, factor, patience, best):
        self.schedule = schedule
        self.factor = factor
        self.patience = patience
        self.best = best
        self.since_best = 0

    def update(self, metric):
        if self.patience <= 0:
            return False
        if metric > self.best:
            self.best = metric
            self.since_best = 0
            return False
        self.since_best += 1
        if self.since_best >= self.patience:
            self.schedule.scale *= self.factor
            self.since_best = 0
            return True
        return False


def _load_split(images, labels, what):
    if images is None or labels is None:
        raise ConfigError(f"missing {what} data paths")
    for p in (images, labels):
        if not Path(p).exists():
            raise ConfigError(f"{what} file not found: {p}")
    return problems.load_mnist_idx(images, labels)


def _evaluate(mlp, theta, images, targets, loss_kind):
    out = nn.forward(mlp, theta, images)
    if loss_kind == "softmax_ce":
        loss, _ = nn.softmax_cross_entropy(out, targets)
        acc = float(np.mean(np.argmax(out, axis=1) == targets))
        return float(loss), acc
    loss, _ = nn.mse(out, targets)
    return float(loss), None


def _train_one_seed(cfg, seed, train_ds, val_ds):
    sizes = _parse_list(cfg["layer_sizes"], int)
    task = cfg["task"]
    if task not in ("classify", "denoise"):
        raise ConfigError(f"unknown task {cfg['task']!r}")
    loss_kind = cfg["loss"] or ("softmax_ce" if task == "classify" else "mse")
    mlp = nn.MlpSpec(tuple(sizes), activation=cfg["activation"],
                     output="logits" if loss_kind == "softmax_ce" else "linear")
    grouping = "rows" if cfg["regularizer"] == "group-rows" else "entrywise"
    layout = nn.default_layout(mlp, grouping)
    reg = regularizers.make_regularizer(cfg["regularizer"], cfg["lam"], layout)

    init_act = "relu" if cfg["activation"] == "relu" else "antisymmetric"
    spec = init.InitSpec(
        r=cfg["init_r"],
        activation=init_act,
        fan_mode=cfg["fan_mode"],
        bias_rule=init.PositiveUniform(cfg["bias_lo"], cfg["bias_hi"])
        if init_act == "relu"
        else None,
        seed=seed,
    )
    rng = np.random.default_rng(seed)
    theta = init.init_group_masked(layout, spec, rng)

    schedule = _build_schedule(cfg)
    opt = optim.make_optimizer(
        cfg["optimizer"], reg, theta, schedule, delta=cfg["delta"], beta=cfg["beta"],
        beta1=cfg["beta1"], beta2=cfg["beta2"], eps=cfg["epsilon"],
    )

    # fixed evaluation sets; for denoising the evaluation noise is frozen per run
    subset = cfg["train_metric_subset"] or len(train_ds)
    tr_images = train_ds.images[:subset]
    tr_labels = train_ds.labels[:subset]
    if task == "denoise":
        eval_rng = np.random.default_rng([seed, 909])
        tr_inputs = tr_images + cfg["noise_sigma"] * eval_rng.standard_normal(tr_images.shape)
        val_inputs = val_ds.images + cfg["noise_sigma"] * eval_rng.standard_normal(val_ds.images.shape)
        tr_targets, val_targets = tr_images, val_ds.images
    else:
        tr_inputs, tr_targets = tr_images, tr_labels
        val_inputs, val_targets = val_ds.images, val_ds.labels

    weight_mask = layout.regularized_mask

    def snapshot(epoch):
        loss, train_acc = _evaluate(mlp, theta, tr_inputs, tr_targets, loss_kind)
        val_loss, val_acc = _evaluate(mlp, theta, val_inputs, val_targets, loss_kind)
        rec = analysis.MetricsRecord(
            epoch=epoch,
            loss=loss,
            train_acc=train_acc,
            val_acc=val_acc,
            l1_norm=float(np.abs(theta[weight_mask]).sum()),
            nonzero_fraction_total=analysis.nonzero_fraction(theta, layout, "all_weights"),
            nonzero_fraction_rows=analysis.nonzero_fraction(theta, layout, "rows"),
        )
        if grouping == "rows":
            for i, count in enumerate(analysis.active_rows_per_layer(theta, layout), start=1):
                rec.extra[f"active_rows_{i}"] = count
        val_metric = val_acc if val_acc is not None else -val_loss
        return rec, val_metric

    records = []
    rec, best = snapshot(0)
    records.append(rec)
    plateau = PlateauDecay(schedule, cfg["plateau_factor"], cfg["plateau_patience"], best)
    batch_noise = np.random.default_rng([seed, 7])
    for epoch in range(1, cfg["epochs"] + 1):
        for batch in problems.batches(train_ds, cfg["batch_size"], seed, epoch):
            if task == "denoise":
                noisy = batch.inputs + cfg["noise_sigma"] * batch_noise.standard_normal(batch.inputs.shape)
                batch = nn.Batch(inputs=noisy, targets=batch.inputs)
            _, g = nn.loss_and_grad(mlp, theta, batch, loss_kind)
            theta = opt.step(theta, g)
        rec, val_metric = snapshot(epoch)
        records.append(rec)
        plateau.update(val_metric)
    return records


def seed_csv_path(out, seed):
    p = Path(out)
    return p.with_name(f"{p.stem}_seed{seed}{p.suffix or '.csv'}")


def run_train(cfg):
    seeds = [int(s) for s in _parse_list(cfg["seeds"], int)]
    if not seeds:
        raise ConfigError("seeds must be nonempty")
    if cfg["epochs"] < 0:
        raise ConfigError("epochs must be >= 0")
    train_ds = _load_split(cfg["train_images"], cfg["train_labels"], "training")
    val_ds = _load_split(cfg["val_images"], cfg["val_labels"], "validation")
    per_seed = []
    for seed in seeds:
        records = _train_one_seed(cfg, seed, train_ds, val_ds)
        analysis.write_metrics_csv(seed_csv_path(cfg["out"], seed), records)
        per_seed.append(records)
    analysis.write_aggregate_csv(cfg["out"], per_seed)
    return 0


# ---------------------------------------------------------------------------
# convex-verify


def run_convex_verify(cfg, stdout=None):
    stdout = stdout or sys.stdout
    delta = cfg["delta"]
    lam = cfg["lam"]
    sigmas = _parse_list(cfg["sigmas"], float)
    reports = []

    problem = problems.make_quadratic(cfg["d"], cfg["cond"], 0.25, seed=cfg["seed"])
    reg = regularizers.L1(lam, regularizers.GroupLayout.entrywise(cfg["d"]))
    tau = 1.0 / (delta * problem.lip)

    for sigma in sigmas:
        channel = problems.NoiseChannel(sigma=sigma, seed=cfg["seed"])
        if sigma == 0:
            trace = analysis.run_linbreg_trace(
                problem, channel, reg, delta, optim.ConstantStep(tau), cfg["decay_steps"]
            )
            rep = analysis.check_loss_decay(
                trace.losses, problem.lip, delta, tau, sigma, mode="deterministic"
            )
        else:
            theta0 = np.zeros((cfg["mc_seeds"], cfg["d"]))
            trace = analysis.run_linbreg_trace(
                problem, channel, reg, delta, optim.ConstantStep(tau), cfg["mc_steps"],
                theta0=theta0, rng=np.random.default_rng([cfg["seed"], 1]),
            )
            rep = analysis.check_loss_decay(
                np.asarray(trace.losses).T, problem.lip, delta, tau, sigma,
                mode="monte_carlo",
            )
        rep.details += f" sigma={sigma}"
        reports.append(rep)

        decay = optim.PowerDecay(tau, 0.75)
        trace = analysis.run_linbreg_trace(
            problem, channel, reg, delta, decay, cfg["summability_steps"],
            rng=np.random.default_rng([cfg["seed"], 2]),
        )
        rep = analysis.check_summability(trace, decay)
        rep.details += f" sigma={sigma}"
        reports.append(rep)

        trace = analysis.run_linbreg_trace(
            problem, channel, reg, delta, optim.ConstantStep(tau), cfg["identity_steps"],
            rng=np.random.default_rng([cfg["seed"], 3]),
        )
        rep = analysis.check_step_identity(trace, reg, delta, problem.theta_star)
        rep.details += f" sigma={sigma}"
        reports.append(rep)

    conv_problem = problems.make_quadratic(cfg["d"], cfg["conv_cond"], 0.25, seed=cfg["seed"])
    conv_reg = regularizers.L1(lam, regularizers.GroupLayout.entrywise(cfg["d"]))
    c = cfg.get("conv_c")
    if c is None:
        c = cfg["conv_safety"] * conv_problem.mu / (2 * delta * conv_problem.lip**2)
    for sigma in sigmas:
        rep = analysis.check_bregman_convergence(
            conv_problem,
            problems.NoiseChannel(sigma=sigma, seed=cfg["seed"]),
            conv_reg,
            delta,
            optim.PowerDecay(c, cfg["conv_p"]),
            n_seeds=cfg["conv_seeds"],
            horizon=cfg["conv_horizon"],
            seed=cfg["seed"],
        )
        rep.details += f" sigma={sigma}"
        reports.append(rep)

    analysis.write_reports_csv(cfg["out"], reports)
    for rep in reports:
        print(rep, file=stdout)
    return 0 if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------------------
# init-stats


def run_init_stats(cfg, stdout=None):
    stdout = stdout or sys.stdout
    spec = init.InitSpec(r=cfg["init_r"], activation=cfg["activation"], fan_mode=cfg["fan_mode"],
                         seed=cfg["seed"])
    shape = (cfg["n_out"], cfg["n_in"])
    alpha = init.variance_target(spec.activation, spec.fan_mode, *shape)
    rng = np.random.default_rng(cfg["seed"])
    values, masks = [], []
    n = 0
    while n < cfg["min_samples"]:
        w, m = init.init_weights(shape, spec, rng)
        values.append(w)
        masks.append(m)
        n += w.size
    w = np.concatenate(values)
    m = np.concatenate(masks)
    r = spec.r

    var_w = float(w.var())
    kept = w[m == 1.0]
    var_dense = float(kept.var()) if kept.size else 0.0
    mean_w = float(w.mean())
    frac = float(m.mean())
    se_mean = np.sqrt(alpha / n)
    sd_frac = np.sqrt(r * (1 - r) / n)

    checks = [
        ("var_w", var_w, alpha, abs(var_w - alpha) <= 0.1 * alpha, "within 10% of alpha"),
        ("var_w_dense", var_dense, alpha / r, abs(var_dense - alpha / r) <= 0.1 * alpha / r,
         "within 10% of alpha/r"),
        ("mean_w", mean_w, 0.0, abs(mean_w) <= 4 * se_mean, "within 4 SE of 0"),
        ("nonzero_fraction", frac, r, abs(frac - r) <= 4 * sd_frac, "within 4 binomial SD of r"),
    ]
    reports = [
        analysis.CheckReport(
            check=f"init_stats:{name}", passed=ok,
            margin=float(got - target), details=f"got={got:.6g} target={target:.6g} ({note})",
        )
        for name, got, target, ok, note in checks
    ]
    analysis.write_reports_csv(cfg["out"], reports)
    for rep in reports:
        print(rep, file=stdout)
    return 0 if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------------------
# argument parsing


def _add_flags(sub, defaults):
    sub.add_argument("--config", default=None)
    for key in defaults:
        sub.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
    if "lam" in defaults:
        sub.add_argument("--lambda", dest="lam", default=None)
    if "seeds" in defaults:
        sub.add_argument("--seed", dest="seeds", default=None,
                         help="single seed (shorthand for --seeds)")


def build_parser():
    parser = argparse.ArgumentParser(prog="bregopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_flags(sub.add_parser("train"), TRAIN_DEFAULTS)
    convex = sub.add_parser("convex-verify")
    _add_flags(convex, CONVEX_DEFAULTS)
    convex.add_argument("--conv-c", dest="conv_c", default=None)
    _add_flags(sub.add_parser("init-stats"), INIT_DEFAULTS)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    defaults = {
        "train": TRAIN_DEFAULTS,
        "convex-verify": CONVEX_DEFAULTS,
        "init-stats": INIT_DEFAULTS,
    }[args.command]
    try:
        file_cfg = load_config(args.config) if args.config else {}
        cfg = resolve(defaults, file_cfg, args)
        if args.command == "train":
            return run_train(cfg)
        if args.command == "convex-verify":
            return run_convex_verify(cfg)
        return run_init_stats(cfg)
    except (ConfigError, ValueError, OSError, nn.NumericError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
