"""Minimal fully-connected networks with manual backprop.

Parameters are stored in one flat vector laid out as
[W1 (row-major), b1, W2, b2, ..., WL, bL] with W_l of shape (n_l, n_{l-1}).
The layer map is x -> activation(W x + b) for hidden layers and W x + b for
the output layer; the loss functions below provide the gradient oracle used by
the optimizers.
"""

from dataclasses import dataclass

import numpy as np

from .regularizers import GroupBlock, GroupLayout


class NumericError(ArithmeticError):
    """Raised when a loss evaluates to a nonfinite value."""


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    activation: str = "relu"
    output: str = "logits"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if any(n < 1 for n in self.layer_sizes):
            raise ValueError("all layer sizes must be >= 1")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output not in ("logits", "linear"):
            raise ValueError(f"unknown output kind {self.output!r}")

    @property
    def num_layers(self):
        return len(self.layer_sizes) - 1

    def segments(self):
        """Per-layer (weight_slice, bias_slice, (n_out, n_in)) into the flat vector."""
        segs = []
        pos = 0
        for l in range(1, len(self.layer_sizes)):
            n_in, n_out = self.layer_sizes[l - 1], self.layer_sizes[l]
            w = slice(pos, pos + n_out * n_in)
            pos += n_out * n_in
            b = slice(pos, pos + n_out)
            pos += n_out
            segs.append((w, b, (n_out, n_in)))
        return segs

    @property
    def param_dim(self):
        return self.segments()[-1][1].stop


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError("batch must be nonempty")
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets disagree on batch size")

    def __len__(self):
        return len(self.inputs)


def _unpack(spec, theta):
    if theta.shape[-1] != spec.param_dim:
        raise ValueError(f"theta has dim {theta.shape[-1]}, spec needs {spec.param_dim}")
    out = []
    for w, b, (n_out, n_in) in spec.segments():
        out.append((theta[w].reshape(n_out, n_in), theta[b]))
    return out


def _act(spec, s):
    if spec.activation == "relu":
        return np.maximum(s, 0.0)
    return np.tanh(s)


def _act_grad(spec, s, a):
    if spec.activation == "relu":
        return (s > 0.0).astype(s.dtype)
    return 1.0 - a * a


def forward(spec, theta, x):
    """Apply the network row-wise to a batch x of shape (B, n_0)."""
    x = np.atleast_2d(x)
    if x.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[1]} does not match n_0={spec.layer_sizes[0]}")
    layers = _unpack(spec, theta)
    a = x
    for l, (w, b) in enumerate(layers):
        s = a @ w.T + b
        a = _act(spec, s) if l < len(layers) - 1 else s
    return a


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels; stabilized."""
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1))
    n = len(logits)
    loss = (lse - shifted[np.arange(n), labels]).mean()
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


def mse(outputs, targets):
    """Mean over the batch of 0.5 * squared error summed over output entries."""
    diff = outputs - targets
    n = len(outputs)
    return 0.5 * np.sum(diff * diff) / n, diff / n


def loss_and_grad(spec, theta, batch, loss_kind="softmax_ce"):
    """Batch loss and its gradient with respect to theta (reverse-mode, by hand)."""
    x = np.atleast_2d(batch.inputs)
    layers = _unpack(spec, theta)
    # forward pass, caching pre-activations and activations
    acts = [x]
    pres = []
    a = x
    for l, (w, b) in enumerate(layers):
        s = a @ w.T + b
        pres.append(s)
        a = _act(spec, s) if l < len(layers) - 1 else s
        acts.append(a)

    if loss_kind == "softmax_ce":
        loss, dz = softmax_cross_entropy(acts[-1], batch.targets)
    elif loss_kind == "mse":
        loss, dz = mse(acts[-1], batch.targets)
    else:
        raise ValueError(f"unknown loss {loss_kind!r}")
    if not np.isfinite(loss):
        raise NumericError(f"nonfinite loss value {loss!r}")

    grad = np.zeros_like(theta)
    segs = spec.segments()
    for l in range(len(layers) - 1, -1, -1):
        w_slice, b_slice, (n_out, n_in) = segs[l]
        w, _ = layers[l]
        grad[w_slice] = (dz.T @ acts[l]).ravel()
        grad[b_slice] = dz.sum(axis=0)
        if l > 0:
            da = dz @ w
            dz = da * _act_grad(spec, pres[l - 1], acts[l])
    return float(loss), grad


def default_layout(spec, regularize="entrywise"):
    """GroupLayout over the flat vector: weights regularized, biases passed through.

    "entrywise" makes every weight entry its own group; "rows" groups each row of
    each weight matrix (n_g = fan-in of the layer).
    """
    if regularize not in ("entrywise", "rows"):
        raise ValueError(f"unknown grouping {regularize!r}")
    blocks = []
    for w, b, (n_out, n_in) in spec.segments():
        if regularize == "entrywise":
            blocks.append(GroupBlock(w.start, w.stop, "entrywise", shape=(n_out, n_in)))
        else:
            blocks.append(GroupBlock(w.start, w.stop, "row", rows=n_out, shape=(n_out, n_in)))
        blocks.append(GroupBlock(b.start, b.stop, "bias"))
    return GroupLayout(spec.param_dim, tuple(blocks))
