"""First-order adaptive-moment gradient descent (Adam) over numpy arrays."""

import numpy as np


class Adam:
    """Updates a fixed list of parameter arrays in place.

    `lr` may be a scalar or one entry per parameter; a per-parameter entry may
    itself be an array broadcastable against the parameter, which allows
    per-coordinate step sizes (used to freeze zero-variance coefficients).
    """

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        if np.isscalar(lr):
            lr = [lr] * len(self.params)
        self.lr = [np.asarray(v, dtype=np.float64) for v in lr]
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v, lr in zip(self.params, grads, self.m, self.v, self.lr):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
