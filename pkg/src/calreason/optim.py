"""Adam over PolicyParams, with optional frozen coordinates."""
import numpy as np


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, frozen=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        # frozen: per-array boolean masks; True entries never move
        self.trainable = None if frozen is None else [~f for f in frozen]

    def step(self, params, grad):
        """In-place update of ``params`` to descend ``grad``."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params.arrays(), grad.arrays())):
            if self.trainable is not None:
                g = np.where(self.trainable[i], g, 0.0)
            m, v = self.m[i], self.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.trainable is not None:
                update = np.where(self.trainable[i], update, 0.0)
            p -= update
