"""Sparse training via linearized Bregman iterations.

Modules:
  regularizers  group layouts, L1/group norms, prox operators, Bregman distances
  optim         LinBreg, LinBreg-with-momentum, AdaBreg, and baseline optimizers
  init          sparse masked initialization with variance rescaling
  nn            minimal MLPs with manual backprop (the gradient oracle)
  problems      quadratic testbeds, gradient noise channels, MNIST IDX I/O
  analysis      metrics, trace recording, convergence verification checks
  cli           config-driven experiment runner (train / convex-verify / init-stats)
"""

__version__ = "0.1.0"
