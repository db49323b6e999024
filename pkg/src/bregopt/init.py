"""Sparse masked initialization with variance rescaling and nonzero biases.

Weights start as W = W_dense * M with M ~ Bernoulli(r) and W_dense zero-mean
Gaussian of variance alpha/r, so the masked matrix keeps the target variance
alpha while only an r-fraction of entries is nonzero.  The group variant draws
one Bernoulli per group (e.g. per row) instead of per entry.  Biases are never
initialized to zero: dead-at-zero units would receive no gradient signal.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PositiveUniform:
    """Bias rule for relu-style activations: draws from uniform(lo, hi), lo > 0."""

    lo: float = 0.01
    hi: float = 0.1

    def __post_init__(self):
        if not 0 < self.lo < self.hi:
            raise ValueError("need 0 < lo < hi for the positive bias rule")

    def sample(self, n, rng):
        return rng.uniform(self.lo, self.hi, size=n)


@dataclass(frozen=True)
class SymmetricUniform:
    """Bias rule for antisymmetric activations: uniform(-a, a) with exact zeros rejected."""

    a: float = 0.1

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("a must be positive")

    def sample(self, n, rng):
        out = rng.uniform(-self.a, self.a, size=n)
        while True:
            zeros = out == 0.0
            if not zeros.any():
                return out
            out[zeros] = rng.uniform(-self.a, self.a, size=int(zeros.sum()))


def default_bias_rule(activation):
    if activation == "relu":
        return PositiveUniform()
    return SymmetricUniform()


def default_fan_mode(activation):
    return "fan_in" if activation == "relu" else "fan_both"


@dataclass(frozen=True)
class InitSpec:
    r: float = 1.0
    activation: str = "relu"
    fan_mode: str = None
    bias_rule: object = None
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")
        if self.activation not in ("relu", "antisymmetric"):
            raise ValueError(f"no init prescription for activation {self.activation!r}")
        if self.fan_mode is None:
            object.__setattr__(self, "fan_mode", default_fan_mode(self.activation))
        if self.bias_rule is None:
            object.__setattr__(self, "bias_rule", default_bias_rule(self.activation))


def variance_target(activation, fan_mode, n_out, n_in):
    """Target weight variance alpha for a layer with n_out outputs and n_in inputs.

    fan_both gives 2/(n_out*n_in) (the antisymmetric prescription); fan_in and
    fan_out give 2/n_in and 2/n_out (the relu prescriptions).
    """
    if n_out < 1 or n_in < 1:
        raise ValueError("layer sizes must be >= 1")
    if fan_mode is None:
        fan_mode = default_fan_mode(activation)
    if fan_mode == "fan_in":
        return 2.0 / n_in
    if fan_mode == "fan_out":
        return 2.0 / n_out
    if fan_mode == "fan_both":
        return 2.0 / (n_out * n_in)
    raise ValueError(f"unknown fan_mode {fan_mode!r}")


def sparse_mask(n_elements, r, rng):
    """i.i.d. Bernoulli(r) 0/1 vector of length n_elements."""
    if not 0 <= r <= 1:
        raise ValueError("r must lie in [0, 1]")
    return (rng.random(n_elements) < r).astype(np.float64)


def init_weights(shape, spec, rng):
    """Masked Gaussian init for one (n_out, n_in) weight matrix.

    Returns (flat values of length n_out*n_in, flat 0/1 mask).  The mask is
    drawn first, then the dense values, from the same generator, so a fixed
    seed reproduces the initialization bit for bit.
    """
    n_out, n_in = shape
    if spec.r <= 0:
        raise ValueError("r must be positive; r=0 would zero the whole layer")
    alpha = variance_target(spec.activation, spec.fan_mode, n_out, n_in)
    n = n_out * n_in
    mask = sparse_mask(n, spec.r, rng)
    dense = rng.normal(0.0, np.sqrt(alpha / spec.r), size=n)
    return dense * mask, mask


def init_biases(n, spec, rng):
    """Bias segment drawn from the activation's bias rule; never exactly zero."""
    if n == 0:
        return np.zeros(0)
    return spec.bias_rule.sample(n, rng)


def init_group_masked(layout, spec, rng):
    """Initialize a full parameter vector, masking per group of the layout.

    Entrywise blocks get one Bernoulli per entry (plain masked init); row and
    whole-matrix blocks get one Bernoulli per group, zeroing or keeping whole
    groups.  Kept values are Gaussian with variance alpha/r; bias blocks use the
    bias rule.  Weight blocks must carry their (n_out, n_in) shape.
    """
    theta = np.zeros(layout.total_dim)
    for b in layout.blocks:
        if b.kind == "bias":
            theta[b.start : b.stop] = init_biases(b.size, spec, rng)
            continue
        if b.shape is None:
            raise ValueError("weight block needs a shape to determine its variance target")
        n_out, n_in = b.shape
        alpha = variance_target(spec.activation, spec.fan_mode, n_out, n_in)
        if b.kind == "entrywise":
            mask = sparse_mask(b.size, spec.r, rng)
        else:
            rows = b.rows if b.kind == "row" else 1
            row_len = b.size // rows
            group_mask = sparse_mask(rows, spec.r, rng)
            mask = np.repeat(group_mask, row_len)
        dense = rng.normal(0.0, np.sqrt(alpha / spec.r), size=b.size)
        theta[b.start : b.stop] = dense * mask
    return theta
