"""Shared numerical helpers: clipping, parameter transforms, finite differences."""
import numpy as np
from scipy.special import expit, logit

#: Uniform values are clipped to [CLIP_EPS, 1 - CLIP_EPS] before copula evaluation.
CLIP_EPS = 1e-12


def clip01(u, eps=None):
    e = CLIP_EPS if eps is None else eps
    return np.clip(u, e, 1.0 - e)


def check_open01(name, *arrays):
    for a in arrays:
        a = np.asarray(a)
        if not np.all((a > 0.0) & (a < 1.0)):
            raise ValueError(f"{name}: arguments must lie in the open interval (0, 1)")


# name -> (to unconstrained, to natural, d natural / d unconstrained)
TRANSFORMS = {
    "identity": (lambda x: x, lambda z: z, lambda z: 1.0),
    "log": (np.log, np.exp, np.exp),
    "logit": (logit, expit, lambda z: expit(z) * (1.0 - expit(z))),
    "log1": (lambda x: np.log(x - 1.0), lambda z: 1.0 + np.exp(z), np.exp),
}


def num_grad(f, x, rel_step=1e-6):
    """Central-difference gradient with step ``rel_step * (1 + |x_k|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * (1.0 + abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def num_hessian(f, x, rel_step=1e-4):
    """Central-difference Hessian with per-coordinate step ``rel_step * (1 + |x_k|)``."""
    x = np.asarray(x, dtype=float)
    p = x.size
    h = rel_step * (1.0 + np.abs(x))
    H = np.empty((p, p))
    f0 = f(x)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        H[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / h[i] ** 2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4.0 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    return H


class ConvergenceError(RuntimeError):
    """Raised when an optimizer fails; carries the last iterate and gradient norm."""

    def __init__(self, message, x=None, grad_norm=None, stage=None, trace=None):
        super().__init__(message)
        self.x = None if x is None else np.asarray(x)
        self.grad_norm = grad_norm
        self.stage = stage
        self.trace = trace
