"""Step-based optimizers: linearized Bregman iterations and their baselines.

Every optimizer exposes ``step(theta, g) -> theta_next`` where ``g`` is a
(stochastic) gradient of the loss at ``theta``.  Optimizers never see the loss
value, so the same classes drive both network training and the convex
verification harness.  ``theta``/``g`` may carry a leading batch axis holding
independent runs (e.g. Monte-Carlo seeds); the updates are elementwise in that
axis.

The Bregman optimizers maintain the dual variable ``v`` and reconstruct
``theta = prox(reg, delta, delta * v)`` after every step, so the feasibility
invariant v in the elastic-net subdifferential at theta holds by construction.
"""

import numpy as np


class ConstantStep:
    """tau_k = tau for all k."""

    def __init__(self, tau):
        if tau <= 0:
            raise ValueError("tau must be positive")
        self.tau = float(tau)
        self.scale = 1.0  # mutable factor for plateau decay

    def __call__(self, k):
        return self.scale * self.tau

    nonincreasing = True
    square_summable = False


class PowerDecay:
    """tau_k = c / (k+1)**p for step index k >= 0.

    p in (1/2, 1] is the regime where the sum of tau_k diverges while the sum
    of tau_k**2 stays finite, which the convergence checks require.
    """

    def __init__(self, c, p):
        if c <= 0:
            raise ValueError("c must be positive")
        if not 0 < p <= 1:
            raise ValueError("p must lie in (0, 1]")
        self.c = float(c)
        self.p = float(p)
        self.scale = 1.0

    def __call__(self, k):
        return self.scale * self.c / (k + 1) ** self.p

    nonincreasing = True

    @property
    def square_summable(self):
        return self.p > 0.5


def step_size(schedule, k):
    """Evaluate a schedule at step k (k >= 0)."""
    if k < 0:
        raise ValueError("step index must be nonnegative")
    tau = schedule(k)
    if tau <= 0:
        raise ValueError("schedule produced nonpositive step size")
    return tau


def _check_dims(theta, g):
    if theta.shape != g.shape:
        raise ValueError(f"gradient shape {g.shape} does not match theta {theta.shape}")


class LinBreg:
    """Linearized Bregman iteration: v <- v - tau*g; theta <- prox(delta*J)(delta*v).

    With J = Zero and delta = 1 the trajectory coincides with SGD.
    """

    def __init__(self, reg, theta0, schedule, delta=1.0):
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.reg = reg
        self.delta = float(delta)
        self.schedule = schedule
        self.v = reg.elastic_subgradient(self.delta, theta0)
        self.k = 0

    def step(self, theta, g):
        _check_dims(self.v, g)
        tau = step_size(self.schedule, self.k)
        self.v = self.v - tau * g
        self.k += 1
        return self.reg.prox(self.delta, self.delta * self.v)


class LinBregMomentum:
    """LinBreg with gradient memory on the dual variable.

    m <- beta*m + (1-beta)*tau*g; v <- v - m; theta <- prox(delta*J)(delta*v).
    beta = 0 reproduces LinBreg exactly.
    """

    def __init__(self, reg, theta0, schedule, delta=1.0, beta=0.9):
        if delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 <= beta < 1:
            raise ValueError("beta must lie in [0, 1)")
        self.reg = reg
        self.delta = float(delta)
        self.beta = float(beta)
        self.schedule = schedule
        self.v = reg.elastic_subgradient(self.delta, theta0)
        self.m = np.zeros_like(self.v)
        self.k = 0

    def step(self, theta, g):
        _check_dims(self.v, g)
        tau = step_size(self.schedule, self.k)
        self.m = self.beta * self.m + (1 - self.beta) * tau * g
        self.v = self.v - self.m
        self.k += 1
        return self.reg.prox(self.delta, self.delta * self.v)


class AdaBreg:
    """Adam-style moment estimation applied to the dual variable v.

    k <- k+1; moments m1, m2 updated with bias correction; then
    v <- v - tau * m1_hat / (sqrt(m2_hat) + eps); theta <- prox(delta*J)(delta*v).
    With J = Zero and delta = 1 the trajectory coincides with Adam.
    """

    def __init__(self, reg, theta0, schedule, delta=1.0, beta1=0.9, beta2=0.999, eps=1e-8):
        if delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 <= beta1 < 1:
            raise ValueError("beta1 must lie in [0, 1)")
        if not 0 <= beta2 < 1:
            raise ValueError("beta2 must lie in [0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.reg = reg
        self.delta = float(delta)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.schedule = schedule
        self.v = reg.elastic_subgradient(self.delta, theta0)
        self.m1 = np.zeros_like(self.v)
        self.m2 = np.zeros_like(self.v)
        self.k = 0

    def step(self, theta, g):
        _check_dims(self.v, g)
        tau = step_size(self.schedule, self.k)
        self.k += 1
        self.m1 = self.beta1 * self.m1 + (1 - self.beta1) * g
        m1_hat = self.m1 / (1 - self.beta1**self.k)
        self.m2 = self.beta2 * self.m2 + (1 - self.beta2) * g * g
        m2_hat = self.m2 / (1 - self.beta2**self.k)
        self.v = self.v - tau * m1_hat / (np.sqrt(m2_hat) + self.eps)
        return self.reg.prox(self.delta, self.delta * self.v)


class Sgd:
    """theta <- theta - tau*g."""

    def __init__(self, schedule):
        self.schedule = schedule
        self.k = 0

    def step(self, theta, g):
        _check_dims(theta, g)
        tau = step_size(self.schedule, self.k)
        self.k += 1
        return theta - tau * g


class Adam:
    """Bias-corrected Adam on theta directly; reference for the AdaBreg reduction."""

    def __init__(self, schedule, beta1=0.9, beta2=0.999, eps=1e-8):
        if not 0 <= beta1 < 1:
            raise ValueError("beta1 must lie in [0, 1)")
        if not 0 <= beta2 < 1:
            raise ValueError("beta2 must lie in [0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.schedule = schedule
        self.m1 = None
        self.m2 = None
        self.k = 0

    def step(self, theta, g):
        _check_dims(theta, g)
        if self.m1 is None:
            self.m1 = np.zeros_like(theta)
            self.m2 = np.zeros_like(theta)
        tau = step_size(self.schedule, self.k)
        self.k += 1
        self.m1 = self.beta1 * self.m1 + (1 - self.beta1) * g
        m1_hat = self.m1 / (1 - self.beta1**self.k)
        self.m2 = self.beta2 * self.m2 + (1 - self.beta2) * g * g
        m2_hat = self.m2 / (1 - self.beta2**self.k)
        return theta - tau * m1_hat / (np.sqrt(m2_hat) + self.eps)


class ProxGd:
    """Proximal gradient descent: theta <- prox(tau*J)(theta - tau*g).

    The prox scale is the learning rate tau, not delta; this is what separates
    it from the Bregman family and produces its non-monotone sparsity paths.
    """

    def __init__(self, reg, schedule):
        self.reg = reg
        self.schedule = schedule
        self.k = 0

    def step(self, theta, g):
        _check_dims(theta, g)
        tau = step_size(self.schedule, self.k)
        self.k += 1
        return self.reg.prox(tau, theta - tau * g)


def make_optimizer(name, reg, theta0, schedule, delta=1.0, beta=0.9, beta1=0.9,
                   beta2=0.999, eps=1e-8):
    """Map a config name to an optimizer instance."""
    if name == "linbreg":
        return LinBreg(reg, theta0, schedule, delta)
    if name == "linbreg-momentum":
        return LinBregMomentum(reg, theta0, schedule, delta, beta)
    if name == "adabreg":
        return AdaBreg(reg, theta0, schedule, delta, beta1, beta2, eps)
    if name == "sgd":
        return Sgd(schedule)
    if name == "adam":
        return Adam(schedule, beta1, beta2, eps)
    if name == "proxgd":
        return ProxGd(reg, schedule)
    raise ValueError(f"unknown optimizer {name!r}")
