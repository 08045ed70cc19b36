"""Dense ReLU networks with hand-written backpropagation, and Adam."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class MLP:
    """Fully connected network: ReLU on hidden layers, linear output.

    Parameters live in ``self.params`` as ``[W0, b0, W1, b1, ...]`` with
    ``W`` of shape (fan_in, fan_out).
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        shapes = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            shapes += [(fan_in, fan_out), (fan_out,)]
        self.flat = np.zeros(sum(int(np.prod(sh)) for sh in shapes))
        self.params = _views(self.flat, shapes)
        for i in range(0, len(self.params), 2):
            bound = 1.0 / np.sqrt(self.params[i].shape[0])
            self.params[i][...] = rng.uniform(-bound, bound, self.params[i].shape)
            self.params[i + 1][...] = rng.uniform(-bound, bound, self.params[i + 1].shape)

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x: np.ndarray):
        """Returns ``(output, cache)``; the cache feeds :meth:`backward`."""
        acts = [x]
        h = x
        for i in range(self.n_layers):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, grad_out: np.ndarray, params: bool = True):
        """Gradients of ``sum(grad_out * output)`` w.r.t. the input and (optionally) the parameters.

        Returns ``(flat parameter gradient or None, input gradient)``.
        """
        acts = cache
        grads = np.empty_like(self.flat) if params else None
        views = _views(grads, [p.shape for p in self.params]) if params else None
        g = grad_out
        for i in reversed(range(self.n_layers)):
            if i < self.n_layers - 1:
                g = g * (acts[i + 1] > 0)
            if params:
                np.dot(acts[i].T, g, out=views[2 * i])
                g.sum(axis=0, out=views[2 * i + 1])
            g = g @ self.params[2 * i].T
        return grads, g

    # -- flat views (checkpoints, finite differences, soft updates) ------

    def get_flat(self) -> np.ndarray:
        return self.flat.copy()

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, float)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        self.flat[...] = flat

    @property
    def n_params(self) -> int:
        return self.flat.size

    def copy(self) -> "MLP":
        out = MLP.__new__(MLP)
        out.sizes = self.sizes
        out.flat = self.flat.copy()
        out.params = _views(out.flat, [p.shape for p in self.params])
        return out

    def soft_update_from(self, src: "MLP", tau: float) -> None:
        """theta <- tau * src + (1 - tau) * theta, in place."""
        self.flat *= 1.0 - tau
        self.flat += tau * src.flat


def _views(flat: np.ndarray, shapes) -> list[np.ndarray]:
    out, i = [], 0
    for sh in shapes:
        n = int(np.prod(sh))
        out.append(flat[i:i + n].reshape(sh))
        i += n
    return out


@dataclass
class Adam:
    """Adam on one flat parameter vector (updated in place)."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def step(self, param: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (grad * grad)
        denom = np.sqrt(self.v / c2)
        denom += self.eps
        param -= (self.lr / c1) * self.m / denom

    def state_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "t": self.t,
            "m": None if self.m is None else self.m.tolist(),
            "v": None if self.v is None else self.v.tolist(),
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "Adam":
        opt = cls(d["lr"], d["beta1"], d["beta2"], d["eps"], d["t"])
        if d["m"] is not None:
            opt.m = np.array(d["m"], float)
            opt.v = np.array(d["v"], float)
        return opt
