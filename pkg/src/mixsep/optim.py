"""Adam optimizer over named parameter tensors."""

import numpy as np

from .errors import InputError


class Adam:
    """Adam with bias correction over a dict of name -> Tensor.

    Moments are kept in the parameter dtype. The update is
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) with
    m_hat = m / (1 - beta1^t) and v_hat = v / (1 - beta2^t).
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise InputError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def step(self):
        """Apply one update using each parameter's accumulated gradient.

        Parameters whose grad is None are treated as having a zero gradient;
        their moments still decay, matching the usual framework convention.
        """
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise InputError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name} shape {p.data.shape}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.data.dtype
            )

    def state_tensors(self):
        """Flat name -> array view of optimizer state, for checkpointing."""
        out = {}
        for name in sorted(self.params):
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors, step_count):
        for name in sorted(self.params):
            self.m[name] = np.array(tensors[f"adam.m.{name}"])
            self.v[name] = np.array(tensors[f"adam.v.{name}"])
            if self.m[name].shape != self.params[name].data.shape:
                raise InputError(f"restored moment shape mismatch for {name}")
        self.step_count = int(step_count)
