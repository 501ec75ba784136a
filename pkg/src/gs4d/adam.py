"""Adam with decoupled weight decay over named parameter arrays.

The optimizer updates the arrays it was given in place, so callers keep using
their own references (a cloud's ``means``, a field's plane stack).  Parameters
are addressed by name; each name carries its own learning rate and, because
sparse stages may not touch every group each step, its own bias-correction
step count.
"""

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class AdamW:
    def __init__(self, params, lrs, betas=(BETA1, BETA2), eps=EPS, weight_decay=0.0):
        self.params = dict(params)
        missing = set(self.params) - set(lrs)
        if missing:
            raise ValueError(f"no learning rate for {sorted(missing)}")
        self.lrs = {name: float(lrs[name]) for name in self.params}
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.steps = {k: 0 for k in self.params}

    def set_lr(self, name, lr):
        self.lrs[name] = float(lr)

    def step(self, grads):
        """Apply one update from ``grads`` (name -> array, same shapes)."""
        for name, g in grads.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            p = self.params[name]
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape "
                                 f"{p.shape} for {name!r}")
            self.steps[name] += 1
            t = self.steps[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            lr = self.lrs[name]
            if self.weight_decay:
                p *= 1.0 - lr * self.weight_decay
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def replace(self, name, array, keep=None, extra=0):
        """Swap the array behind ``name`` after a resize.

        Moment rows follow ``keep`` (an index or boolean mask over the old
        rows) and gain ``extra`` zero rows at the end, so freshly added rows
        start with clean state.
        """
        m, v = self.m[name], self.v[name]
        if keep is not None:
            m, v = m[keep], v[keep]
        if extra:
            pad = (extra,) + m.shape[1:]
            m = np.concatenate([m, np.zeros(pad)])
            v = np.concatenate([v, np.zeros(pad)])
        if m.shape != array.shape:
            raise ValueError(f"moment shape {m.shape} does not match new "
                             f"parameter shape {array.shape} for {name!r}")
        self.params[name] = array
        self.m[name], self.v[name] = m, v


def exponential_decay(initial, final, step, total):
    """Learning rate at ``step`` of ``total``, sliding geometrically between
    the endpoints (both endpoints are hit exactly)."""
    if total <= 1:
        return initial
    frac = min(max(step / (total - 1), 0.0), 1.0)
    return initial * (final / initial) ** frac
