"""Metrics, trace recording, and the convergence verification harness.

The checks in this module turn the convergence guarantees of linearized
Bregman iterations into executable assertions on finite runs:

- loss decay: with exact gradients and tau <= 2/(delta*L) the loss sequence is
  nonincreasing; with gradient noise the averaged one-step increase stays below
  an explicit slack term.
- summability: with nonincreasing square-summable steps, the per-step symmetric
  Bregman distances and squared iterate moves have convergent sums, checked via
  a tail-mass criterion at finite horizon.
- Bregman convergence: with power-decay steps inside the strong-convexity bound,
  the expected Bregman distance to the minimizer decays toward zero, checked
  against a fixed fraction of its initial value.
- step identity: two exact pathwise identities relate consecutive distances to
  the minimizer; they must hold to near machine precision on every trajectory.

All Monte-Carlo assertions report their seed counts and slack explicitly.

Constant ledger
---------------
The loss-decay theorem asserts existence of constants without fixing them.  The
harness instantiates, in this one place:

    c_decay(L, delta, tau) = (2 - L*delta*tau) / 2

(the coefficient in front of the squared-move term in the one-step descent
estimate, scaled by delta*tau), giving the averaged one-step slack

    slack = tau * delta * sigma**2 / (2 * c_decay).
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .optim import LinBreg, PowerDecay
from .problems import noisy_grad


class PreconditionError(ValueError):
    """A check was invoked outside the regime its theorem covers."""


def loss_decay_constant(l_lip, delta, tau):
    """The harness's instantiation of the loss-decay theorem's constant c."""
    return (2.0 - l_lip * delta * tau) / 2.0


# ---------------------------------------------------------------------------
# metrics records and CSV serialization


CSV_SCHEMA_VERSION = 1

METRICS_COLUMNS = (
    "epoch",
    "loss",
    "train_acc",
    "val_acc",
    "l1_norm",
    "nonzero_fraction_total",
    "nonzero_fraction_rows",
    "d_k",
    "sym_breg_step",
)


@dataclass
class MetricsRecord:
    epoch: int
    loss: float = None
    train_acc: float = None
    val_acc: float = None
    l1_norm: float = None
    nonzero_fraction_total: float = None
    nonzero_fraction_rows: float = None
    d_k: float = None
    sym_breg_step: float = None
    extra: dict = field(default_factory=dict)  # e.g. per-layer active row counts

    def row(self, extra_cols=()):
        vals = [_fmt(getattr(self, c)) for c in METRICS_COLUMNS]
        vals += [_fmt(self.extra.get(c)) for c in extra_cols]
        return vals


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def metrics_columns(records):
    extra = tuple(records[0].extra.keys()) if records else ()
    return list(METRICS_COLUMNS) + list(extra)


def _ensure_dir(path):
    parent = os.path.dirname(str(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def write_metrics_csv(path, records):
    _ensure_dir(path)
    cols = metrics_columns(records)
    extra = cols[len(METRICS_COLUMNS):]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for r in records:
            w.writerow(r.row(extra))


def write_aggregate_csv(path, per_seed_records):
    """Mean/std per epoch across seeds for every numeric metrics column."""
    _ensure_dir(path)
    cols = metrics_columns(per_seed_records[0])[1:]  # all but epoch
    n_epochs = len(per_seed_records[0])
    header = ["epoch"]
    for c in cols:
        header += [f"{c}_mean", f"{c}_std"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for e in range(n_epochs):
            row = [str(per_seed_records[0][e].epoch)]
            for c in cols:
                vals = []
                for records in per_seed_records:
                    rec = records[e]
                    v = rec.extra.get(c) if c in rec.extra else getattr(rec, c)
                    vals.append(v)
                if any(v is None for v in vals):
                    row += ["", ""]
                else:
                    arr = np.asarray(vals, dtype=float)
                    std = arr.std(ddof=1) if len(arr) > 1 else 0.0
                    row += [_fmt(arr.mean()), _fmt(std)]
            w.writerow(row)


# ---------------------------------------------------------------------------
# check reports


REPORT_COLUMNS = ("check", "passed", "margin", "slack", "tol", "n_seeds", "first_violation", "details")


@dataclass
class CheckReport:
    check: str
    passed: bool
    margin: float = None  # how far inside (negative) or outside (positive) the bound
    slack: float = None
    tol: float = None
    n_seeds: int = None
    first_violation: int = None
    details: str = ""
    trajectory: list = None

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        parts = [f"[{status}] {self.check}"]
        if self.margin is not None:
            parts.append(f"margin={self.margin:.3e}")
        if self.slack is not None:
            parts.append(f"slack={self.slack:.3e}")
        if self.n_seeds is not None:
            parts.append(f"seeds={self.n_seeds}")
        if self.first_violation is not None:
            parts.append(f"first_violation_at={self.first_violation}")
        if self.details:
            parts.append(self.details)
        return "  ".join(parts)

    def row(self):
        return [
            self.check,
            "pass" if self.passed else "fail",
            _fmt(self.margin),
            _fmt(self.slack),
            _fmt(self.tol),
            _fmt(self.n_seeds),
            _fmt(self.first_violation),
            self.details,
        ]


def write_reports_csv(path, reports):
    _ensure_dir(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.row())


# ---------------------------------------------------------------------------
# sparsity metrics


def nonzero_fraction(theta, layout, scope="all_weights"):
    """Fraction of exactly-nonzero weight entries (or active rows); biases excluded."""
    if scope == "all_weights":
        total = 0
        nonzero = 0
        for b in layout.weight_blocks():
            seg = theta[b.start : b.stop]
            total += seg.size
            nonzero += int(np.count_nonzero(seg))
        return nonzero / total if total else 0.0
    if scope == "rows":
        counts = active_rows_per_layer(theta, layout)
        totals = [b.shape[0] for b in layout.weight_blocks()]
        return sum(counts) / sum(totals) if totals else 0.0
    raise ValueError(f"unknown scope {scope!r}")


def active_rows_per_layer(theta, layout):
    """Number of rows with any nonzero entry, per weight matrix (needs block shapes)."""
    counts = []
    for b in layout.weight_blocks():
        if b.shape is None:
            raise ValueError("weight block carries no matrix shape")
        n_out, n_in = b.shape
        w = theta[b.start : b.stop].reshape(n_out, n_in)
        counts.append(int((w != 0.0).any(axis=1).sum()))
    return counts


def classification_accuracy(spec, theta, dataset):
    """Argmax-of-logits accuracy; argmax takes the lowest index on ties."""
    if len(dataset) == 0:
        raise ValueError("empty dataset split")
    logits = nn.forward(spec, theta, dataset.images)
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == dataset.labels))


# ---------------------------------------------------------------------------
# feasibility of the dual variable


def prox_feasibility_gap(reg, delta, theta, v):
    """Largest componentwise violation of v being an elastic-net subgradient at theta.

    For L1-type groups: nonzero entries must satisfy v = theta/delta + lam*sign(theta)
    exactly; zero entries must have |v| <= lam.  For row groups the same holds with
    the group-norm subdifferential (norm condition on zero groups).  Returns the
    maximum violation, 0 for perfectly feasible pairs.
    """
    kind = type(reg).__name__
    if kind == "Zero":
        return float(np.max(np.abs(v - theta / delta), initial=0.0))
    lam = reg.lam
    layout = reg.layout
    gap = 0.0
    reg_mask = layout.regularized_mask
    if (~reg_mask).any():
        free = np.abs(v[..., ~reg_mask] - theta[..., ~reg_mask] / delta)
        gap = max(gap, float(np.max(free, initial=0.0)))
    if kind == "L1":
        t = theta[..., reg_mask]
        w = v[..., reg_mask]
        on = t != 0.0
        if on.any():
            gap = max(gap, float(np.max(np.abs(w[on] - t[on] / delta - lam * np.sign(t[on])))))
        off = ~on
        if off.any():
            gap = max(gap, float(np.max(np.abs(w[off]) - lam)))
        return gap
    # group norm: check per block
    for b in layout.blocks:
        if not b.regularized:
            continue
        if b.kind == "entrywise":
            t = theta[..., b.start : b.stop]
            w = v[..., b.start : b.stop]
            on = t != 0.0
            if on.any():
                gap = max(gap, float(np.max(np.abs(w[on] - t[on] / delta - lam * np.sign(t[on])))))
            if (~on).any():
                gap = max(gap, float(np.max(np.abs(w[~on]) - lam)))
            continue
        rows = b.rows if b.kind == "row" else 1
        row_len = b.size // rows
        t = theta[..., b.start : b.stop].reshape(theta.shape[:-1] + (rows, row_len))
        w = v[..., b.start : b.stop].reshape(v.shape[:-1] + (rows, row_len))
        norms = np.sqrt(np.sum(t * t, axis=-1))
        on = norms > 0.0
        if on.any():
            expect = t[on] / delta + lam * np.sqrt(row_len) * t[on] / norms[on][..., None]
            gap = max(gap, float(np.max(np.abs(w[on] - expect))))
        off = ~on
        if off.any():
            vnorm = np.sqrt(np.sum(w[off] * w[off], axis=-1))
            gap = max(gap, float(np.max(vnorm - lam * np.sqrt(row_len), initial=0.0)))
    return gap


# ---------------------------------------------------------------------------
# trajectory recording on convex problems


@dataclass
class Trace:
    """A recorded LinBreg trajectory: states at steps 0..K and per-step inputs.

    A leading seed axis in theta0 turns every (K, d) array into (K, S, d) and
    the loss trace into (K+1, S); the checks reduce over seed axes themselves.
    """

    thetas: np.ndarray  # (K+1, d)
    vs: np.ndarray      # (K+1, d)
    gs: np.ndarray      # (K, d) stochastic gradients used
    taus: np.ndarray    # (K,)
    losses: np.ndarray  # (K+1,)

    @property
    def steps(self):
        return len(self.taus)


def run_linbreg_trace(problem, channel, reg, delta, schedule, steps, theta0=None, rng=None):
    """Run LinBreg and record the full trajectory (for the pathwise checks)."""
    if theta0 is None:
        theta0 = np.zeros(problem.dim)
    if rng is None:
        rng = np.random.default_rng(0)
    opt = LinBreg(reg, theta0, schedule, delta)
    theta = reg.prox(delta, delta * opt.v)
    thetas = [theta]
    vs = [opt.v.copy()]
    gs, taus, losses = [], [], [problem.loss(theta)]
    for k in range(steps):
        g = noisy_grad(problem, channel, theta, rng)
        tau = schedule(opt.k)
        theta = opt.step(theta, g)
        thetas.append(theta)
        vs.append(opt.v.copy())
        gs.append(g)
        taus.append(tau)
        losses.append(problem.loss(theta))
    return Trace(
        thetas=np.asarray(thetas),
        vs=np.asarray(vs),
        gs=np.asarray(gs),
        taus=np.asarray(taus),
        losses=np.asarray(losses),
    )


def track_bregman_to_min(problem, reg, delta, theta_k, v_k):
    """Bregman distance d_k from the iterate to the loss minimizer.

    With a batch of independent runs in the leading axis, returns the seed mean
    (the Monte-Carlo estimate of the expectation).
    """
    d = reg.elastic_bregman_distance(delta, problem.theta_star, theta_k, v_k)
    return float(np.mean(d))


# ---------------------------------------------------------------------------
# theorem checks


def check_loss_decay(losses, l_lip, delta, tau, sigma, mode="deterministic", tol=1e-12):
    """One-step loss decay under tau <= 2/(delta*L).

    deterministic mode: losses is (K+1,), asserts loss[k+1] <= loss[k] + tol.
    monte_carlo mode: losses is (n_seeds, K+1); asserts the seed-averaged
    increase stays below tau*delta*sigma**2/(2*c) plus 4 standard errors,
    with c from the constant ledger.
    """
    bound = 2.0 / (delta * l_lip)
    if tau > bound * (1 + 1e-12):
        raise PreconditionError(f"tau={tau} exceeds the loss-decay bound 2/(delta*L)={bound}")
    losses = np.asarray(losses, dtype=float)
    if mode == "deterministic":
        if losses.ndim != 1:
            raise ValueError("deterministic mode expects a single loss trace")
        diffs = np.diff(losses)
        margin = float(diffs.max() - tol)
        bad = np.nonzero(diffs > tol)[0]
        return CheckReport(
            check="loss_decay(deterministic)",
            passed=bad.size == 0,
            margin=margin,
            tol=tol,
            first_violation=int(bad[0]) if bad.size else None,
            details=f"steps={len(diffs)} tau={tau}",
        )
    if mode != "monte_carlo":
        raise ValueError(f"unknown mode {mode!r}")
    if losses.ndim != 2:
        raise ValueError("monte_carlo mode expects losses of shape (n_seeds, K+1)")
    c = loss_decay_constant(l_lip, delta, tau)
    if c <= 0:
        raise PreconditionError("tau too large for a positive decay constant in monte_carlo mode")
    slack = tau * delta * sigma**2 / (2.0 * c)
    n_seeds = losses.shape[0]
    diffs = np.diff(losses, axis=1)
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / np.sqrt(n_seeds) if n_seeds > 1 else np.zeros_like(mean)
    excess = mean - (slack + 4.0 * se)
    bad = np.nonzero(excess > 0)[0]
    return CheckReport(
        check="loss_decay(monte_carlo)",
        passed=bad.size == 0,
        margin=float(excess.max()),
        slack=float(slack),
        n_seeds=n_seeds,
        first_violation=int(bad[0]) if bad.size else None,
        details=f"steps={diffs.shape[1]} tau={tau} sigma={sigma} (4-SE statistical slack)",
    )


def check_summability(trace, schedule, tail_frac=0.10, tail_share=0.05):
    """Tail-mass test for the two summable series along a trajectory.

    Requires a nonincreasing, square-summable schedule.  Over the final
    tail_frac of steps, each series may contribute at most tail_share of its
    total sum.
    """
    if not getattr(schedule, "nonincreasing", False):
        raise PreconditionError("schedule must be nonincreasing")
    if not getattr(schedule, "square_summable", False):
        raise PreconditionError("schedule must be square-summable (power decay with p > 1/2)")
    dtheta = np.diff(trace.thetas, axis=0)
    dv = np.diff(trace.vs, axis=0)
    sym = np.sum(dv * dtheta, axis=-1)
    sq = np.sum(dtheta * dtheta, axis=-1)
    while sym.ndim > 1:  # seed axes, if any
        sym = sym.mean(axis=-1)
        sq = sq.mean(axis=-1)
    k_tail = max(1, int(round(tail_frac * len(sym))))
    shares = []
    for series in (sym, sq):
        total = float(series.sum())
        tail = float(series[-k_tail:].sum())
        shares.append(tail / total if total > 0 else 0.0)
    margin = float(max(shares) - tail_share)
    return CheckReport(
        check="summability",
        passed=margin <= 0,
        margin=margin,
        tol=tail_share,
        details=(
            f"steps={len(sym)} tail_steps={k_tail} "
            f"sym_share={shares[0]:.4f} sq_share={shares[1]:.4f}"
        ),
    )


def check_step_identity(trace, reg, delta, theta_star, tol=1e-9):
    """Pathwise identities linking consecutive Bregman distances to the minimizer.

    With d_k the distance at step k, both of the following hold exactly along
    any trajectory of the v-update (checked here to tol):

        d_{k+1} - d_k = -D(theta_{k+1}, theta_k; v_k)   + tau_k <g_k, theta* - theta_{k+1}>
        d_{k+1} - d_k = +D(theta_k, theta_{k+1}; v_{k+1}) + tau_k <g_k, theta* - theta_k>
    """
    th, vs, gs, taus = trace.thetas, trace.vs, trace.gs, trace.taus
    d = reg.elastic_bregman_distance(delta, theta_star, th, vs)
    lhs = np.diff(d)
    d_fwd = reg.elastic_bregman_distance(delta, th[1:], th[:-1], vs[:-1])
    rhs1 = -d_fwd + taus * np.sum(gs * (theta_star - th[1:]), axis=-1)
    d_bwd = reg.elastic_bregman_distance(delta, th[:-1], th[1:], vs[1:])
    rhs2 = d_bwd + taus * np.sum(gs * (theta_star - th[:-1]), axis=-1)
    err = np.maximum(np.abs(lhs - rhs1), np.abs(lhs - rhs2))
    bad = np.nonzero(err > tol)[0]
    return CheckReport(
        check="step_identity",
        passed=bad.size == 0,
        margin=float(err.max() - tol),
        tol=tol,
        first_violation=int(bad[0]) if bad.size else None,
        details=f"steps={len(err)} max_err={err.max():.3e}",
    )


def check_bregman_convergence(
    problem,
    channel,
    reg,
    delta,
    schedule,
    n_seeds,
    horizon,
    threshold=0.05,
    safety=1.0,
    seed=0,
    n_checkpoints=20,
    burn_in_frac=0.01,
    wiggle=1.02,
):
    """Decay of the expected Bregman distance to the minimizer under power-decay steps.

    Preconditions follow the diminishing-step convergence theorem: power decay
    with p in (1/2, 1] and c <= safety * mu / (2 * delta * L^2).  The check runs
    n_seeds independent stochastic LinBreg chains (vectorized), records the seed
    mean of d_k at logarithmic checkpoints, and requires

      - mean d_horizon <= threshold * d_0, and
      - the checkpoint sequence after burn-in to be decreasing (up to a small
        multiplicative wiggle for Monte-Carlo noise, plus a strict net decrease).
    """
    if not isinstance(schedule, PowerDecay):
        raise PreconditionError("convergence check needs a PowerDecay schedule")
    if not 0.5 < schedule.p <= 1.0:
        raise PreconditionError("power decay exponent must lie in (1/2, 1]")
    c_bound = safety * problem.mu / (2.0 * delta * problem.lip**2)
    if schedule.c > c_bound * (1 + 1e-12):
        raise PreconditionError(
            f"step constant c={schedule.c} exceeds mu/(2*delta*L^2)*safety={c_bound}"
        )
    d = problem.dim
    theta = np.zeros((n_seeds, d))
    opt = LinBreg(reg, theta, schedule, delta)
    rng = np.random.default_rng(seed)
    d0 = track_bregman_to_min(problem, reg, delta, theta, opt.v)
    cps = sorted(set(np.unique(np.logspace(0, np.log10(horizon), n_checkpoints).astype(int))))
    cps = [k for k in cps if 1 <= k <= horizon]
    if cps[-1] != horizon:
        cps.append(horizon)
    trajectory = [(0, d0)]
    next_cp = 0
    for k in range(horizon):
        g = noisy_grad(problem, channel, theta, rng)
        theta = opt.step(theta, g)
        if k + 1 == cps[next_cp]:
            trajectory.append((k + 1, track_bregman_to_min(problem, reg, delta, theta, opt.v)))
            next_cp += 1
            if next_cp >= len(cps):
                break
    final = trajectory[-1][1]
    ratio = final / d0 if d0 > 0 else 0.0
    burn_in = burn_in_frac * horizon
    post = [v for k, v in trajectory if k >= burn_in]
    monotone = all(b <= a * wiggle for a, b in zip(post, post[1:])) and post[-1] < post[0]
    return CheckReport(
        check="bregman_convergence",
        passed=(ratio <= threshold) and monotone,
        margin=float(ratio - threshold),
        tol=threshold,
        n_seeds=n_seeds,
        details=(
            f"d0={d0:.4g} d_final={final:.4g} ratio={ratio:.4f} "
            f"horizon={horizon} c={schedule.c:.4g} p={schedule.p} monotone={monotone}"
        ),
        trajectory=trajectory,
    )
