"""Plain Adam over named parameter groups (dicts of numpy arrays)."""

import numpy as np


class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        """params: dict name -> ndarray, updated in place by step()."""
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {k: np.zeros_like(v) for k, v in params.items()}
        self._v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        """Apply one update from grads: dict name -> ndarray (same shapes).

        Missing names are skipped, so a caller can update a subset of the
        registered parameters on any given step.
        """
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for name, g in grads.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / bias1
            v_hat = v / bias2
            self.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
