"""SGD with momentum and the linear-to-zero learning-rate schedule."""
import numpy as np


def linear_decay(lr, step, total_steps):
    """Learning rate at ``step`` of ``total_steps``: ``lr`` falling linearly to 0."""
    if total_steps <= 0:
        return lr
    return lr * max(0.0, 1.0 - step / total_steps)


class SGD:
    """``v <- mu*v + g (+ wd*theta)``, ``theta <- theta - lr*v``, updated in place.

    Weight decay is added only for parameters whose flag in ``decay`` is true.
    """

    def __init__(self, params, momentum=0.9, weight_decay=0.0, decay=None):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.decay = decay or {}
        self.velocity = {key: np.zeros_like(value) for key, value in params.items()}

    def step(self, grads, lr):
        for key, theta in self.params.items():
            g = grads[key]
            if g.shape != theta.shape:
                raise ValueError(f"{key}: gradient shape {g.shape} does not match {theta.shape}")
            if self.weight_decay and self.decay.get(key, False):
                g = g + self.weight_decay * theta
            v = self.velocity[key]
            v *= self.momentum
            v += g
            theta -= lr * v
