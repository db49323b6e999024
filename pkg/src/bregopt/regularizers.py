"""Sparsity regularizers J, the elastic-net surrogate J_delta, and Bregman distances.

Parameters live in flat float64 vectors ("param vectors").  A ``GroupLayout``
describes how the flat vector decomposes into regularized groups (single
entries, matrix rows, or whole matrices) and unregularized spans (biases).
All operations accept a leading batch axis, i.e. ``theta`` may have shape
``(dim,)`` or ``(n_runs, dim)``; reductions happen over the last axis.
"""

from dataclasses import dataclass, field

import numpy as np


class LayoutError(ValueError):
    """Raised when a vector does not match a GroupLayout, or a layout is invalid."""


BLOCK_KINDS = ("entrywise", "row", "whole-matrix", "bias")


@dataclass(frozen=True)
class GroupBlock:
    """A contiguous span ``[start, stop)`` of the flat vector and its group structure.

    kind:
      - "entrywise": every scalar in the span is its own regularized group (n_g = 1)
      - "row": the span is a (rows x row_len) matrix stored row-major; each row is
        a regularized group with n_g = row_len
      - "whole-matrix": the span is a single regularized group
      - "bias": unregularized span
    shape: original (n_out, n_in) of the weight matrix occupying the span, if any.
      Used by initialization and row-count metrics; irrelevant to J itself.
    """

    start: int
    stop: int
    kind: str
    rows: int = 1
    shape: tuple = None

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise LayoutError(f"unknown block kind {self.kind!r}")
        if self.stop <= self.start:
            raise LayoutError(f"empty block [{self.start}, {self.stop})")
        n = self.stop - self.start
        if self.kind == "row":
            if self.rows < 1 or n % self.rows != 0:
                raise LayoutError(f"span of {n} entries does not split into {self.rows} rows")

    @property
    def size(self):
        return self.stop - self.start

    @property
    def row_len(self):
        if self.kind != "row":
            raise LayoutError("row_len only defined for row blocks")
        return self.size // self.rows

    @property
    def regularized(self):
        return self.kind != "bias"

    @property
    def num_groups(self):
        if self.kind == "entrywise":
            return self.size
        if self.kind == "row":
            return self.rows
        if self.kind == "whole-matrix":
            return 1
        return 0


@dataclass(frozen=True)
class GroupLayout:
    """Disjoint group structure over a flat parameter vector of length total_dim.

    Indices not covered by any block are treated as unregularized (pass-through),
    the same as "bias" spans.
    """

    total_dim: int
    blocks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        prev_stop = -1
        for b in sorted(self.blocks, key=lambda b: b.start):
            if b.start < 0 or b.stop > self.total_dim:
                raise LayoutError(
                    f"block [{b.start}, {b.stop}) outside vector of dim {self.total_dim}"
                )
            if b.start < prev_stop:
                raise LayoutError("blocks overlap")
            prev_stop = b.stop

    @classmethod
    def entrywise(cls, dim):
        """Every entry its own group (plain L1 over the whole vector)."""
        return cls(dim, (GroupBlock(0, dim, "entrywise"),))

    @classmethod
    def single_group(cls, dim):
        """The whole vector as one group."""
        return cls(dim, (GroupBlock(0, dim, "whole-matrix"),))

    def check_dim(self, theta):
        if theta.shape[-1] != self.total_dim:
            raise LayoutError(
                f"vector dim {theta.shape[-1]} does not match layout dim {self.total_dim}"
            )

    @property
    def regularized_mask(self):
        mask = np.zeros(self.total_dim, dtype=bool)
        for b in self.blocks:
            if b.regularized:
                mask[b.start : b.stop] = True
        return mask

    def num_groups(self):
        return sum(b.num_groups for b in self.blocks)

    def groups(self):
        """Yield (group_id, index_range, n_g, kind) for every regularized group.

        Intended for tests and small layouts; hot paths use the block structure.
        """
        gid = 0
        for b in self.blocks:
            if not b.regularized:
                continue
            if b.kind == "entrywise":
                for i in range(b.start, b.stop):
                    yield gid, range(i, i + 1), 1, b.kind
                    gid += 1
            elif b.kind == "row":
                rl = b.row_len
                for r in range(b.rows):
                    lo = b.start + r * rl
                    yield gid, range(lo, lo + rl), rl, b.kind
                    gid += 1
            else:
                yield gid, range(b.start, b.stop), b.size, b.kind
                gid += 1

    def weight_blocks(self):
        return [b for b in self.blocks if b.regularized]


def shrink(v, lam):
    """Soft shrinkage sign(v) * max(|v| - lam, 0), entrywise."""
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def _group_view(theta, block):
    """View the block's span as (..., rows, row_len) for row-structured kinds."""
    seg = theta[..., block.start : block.stop]
    if block.kind == "row":
        return seg.reshape(seg.shape[:-1] + (block.rows, block.row_len))
    return seg.reshape(seg.shape[:-1] + (1, block.size))


class Regularizer:
    """Common interface: eval, prox, subgradient, and Bregman distances.

    Subgradient selections are deterministic: 0 at the kink (L1 at 0, group
    norm at the zero block), so state initialization v = subgradient + theta/delta
    is reproducible and zero weights sit at the center of the threshold.
    """

    layout = None

    def eval(self, theta):
        raise NotImplementedError

    def prox(self, delta, w):
        """argmin_theta 0.5*||theta - w||^2 + delta*J(theta)."""
        raise NotImplementedError

    def subgradient(self, theta):
        raise NotImplementedError

    def elastic_subgradient(self, delta, theta):
        """An element of the elastic-net subdifferential: subgradient(theta) + theta/delta."""
        if delta <= 0:
            raise ValueError("delta must be positive")
        return self.subgradient(theta) + theta / delta

    def elastic_eval(self, delta, theta):
        """J_delta(theta) = J(theta) + ||theta||^2 / (2 delta)."""
        return self.eval(theta) + 0.5 / delta * np.sum(theta * theta, axis=-1)

    def bregman_distance(self, theta_bar, theta, p):
        """D_J^p(theta_bar, theta) = J(theta_bar) - J(theta) - <p, theta_bar - theta>."""
        return (
            self.eval(theta_bar)
            - self.eval(theta)
            - np.sum(p * (theta_bar - theta), axis=-1)
        )

    def elastic_bregman_distance(self, delta, theta_bar, theta, v):
        """D_{J_delta}^v via the split D_J^p + ||theta_bar - theta||^2/(2 delta), p = v - theta/delta."""
        p = v - theta / delta
        diff = theta_bar - theta
        return self.bregman_distance(theta_bar, theta, p) + 0.5 / delta * np.sum(
            diff * diff, axis=-1
        )

    def sym_bregman_distance(self, theta_bar, theta, p_bar, p):
        """Symmetric Bregman distance <p_bar - p, theta_bar - theta>."""
        return np.sum((p_bar - p) * (theta_bar - theta), axis=-1)


class Zero(Regularizer):
    """J = 0: prox is the identity; the Bregman optimizers reduce to their baselines."""

    def __init__(self, layout=None):
        self.layout = layout
        self.lam = 0.0

    def eval(self, theta):
        return np.zeros(theta.shape[:-1])

    def prox(self, delta, w):
        if delta <= 0:
            raise ValueError("delta must be positive")
        return w.copy()

    def subgradient(self, theta):
        return np.zeros_like(theta)


class L1(Regularizer):
    """J(theta) = lam * sum of |theta_i| over regularized entries."""

    def __init__(self, lam, layout):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)
        self.layout = layout
        self._mask = layout.regularized_mask

    def eval(self, theta):
        self.layout.check_dim(theta)
        return self.lam * np.sum(np.abs(theta) * self._mask, axis=-1)

    def prox(self, delta, w):
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.layout.check_dim(w)
        return np.where(self._mask, shrink(w, delta * self.lam), w)

    def subgradient(self, theta):
        self.layout.check_dim(theta)
        return self.lam * np.sign(theta) * self._mask


class GroupL12(Regularizer):
    """J(theta) = lam * sum over groups g of sqrt(n_g) * ||theta_g||_2.

    Entrywise groups have n_g = 1, so on them this coincides with L1; row groups
    zero out whole rows at once.
    """

    def __init__(self, lam, layout):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)
        self.layout = layout

    def eval(self, theta):
        self.layout.check_dim(theta)
        total = np.zeros(theta.shape[:-1])
        for b in self.layout.blocks:
            if not b.regularized:
                continue
            if b.kind == "entrywise":
                total = total + np.sum(np.abs(theta[..., b.start : b.stop]), axis=-1)
            else:
                g = _group_view(theta, b)
                norms = np.sqrt(np.sum(g * g, axis=-1))
                total = total + np.sqrt(b.row_len if b.kind == "row" else b.size) * np.sum(
                    norms, axis=-1
                )
        return self.lam * total

    def prox(self, delta, w):
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.layout.check_dim(w)
        out = w.copy()
        for b in self.layout.blocks:
            if not b.regularized:
                continue
            if b.kind == "entrywise":
                out[..., b.start : b.stop] = shrink(
                    w[..., b.start : b.stop], delta * self.lam
                )
                continue
            g = _group_view(w, b)
            n_g = b.row_len if b.kind == "row" else b.size
            norms = np.sqrt(np.sum(g * g, axis=-1, keepdims=True))
            thresh = delta * self.lam * np.sqrt(n_g)
            # zero-norm groups map to the zero block; guard the division
            factor = np.where(norms > 0.0, np.maximum(1.0 - thresh / np.where(norms > 0.0, norms, 1.0), 0.0), 0.0)
            out[..., b.start : b.stop] = (g * factor).reshape(
                w.shape[:-1] + (b.size,)
            )
        return out

    def subgradient(self, theta):
        self.layout.check_dim(theta)
        out = np.zeros_like(theta)
        for b in self.layout.blocks:
            if not b.regularized:
                continue
            if b.kind == "entrywise":
                out[..., b.start : b.stop] = np.sign(theta[..., b.start : b.stop])
                continue
            g = _group_view(theta, b)
            n_g = b.row_len if b.kind == "row" else b.size
            norms = np.sqrt(np.sum(g * g, axis=-1, keepdims=True))
            scale = np.where(norms > 0.0, np.sqrt(n_g) / np.where(norms > 0.0, norms, 1.0), 0.0)
            out[..., b.start : b.stop] = (g * scale).reshape(theta.shape[:-1] + (b.size,))
        return self.lam * out


def make_regularizer(name, lam, layout):
    """Map a config name {none | l1 | group-rows} to a Regularizer over layout."""
    if name == "none":
        return Zero(layout)
    if name == "l1":
        return L1(lam, layout)
    if name == "group-rows":
        return GroupL12(lam, layout)
    raise ValueError(f"unknown regularizer {name!r}")
