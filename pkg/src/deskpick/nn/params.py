"""Named parameter store with Adam state and flat-vector views."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(RuntimeError):
    pass


class ParamStore:
    """Ordered mapping of parameter name -> leaf Tensor, plus Adam moments.

    Insertion order defines the layout of the flattened parameter vector
    used by the trust-region optimizer and the checkpoint writer.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.ascontiguousarray(array), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    @property
    def size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def grads_populated(self) -> bool:
        return all(t.grad is not None for t in self._params.values())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._params.values()])

    def set_flat(self, vec: np.ndarray):
        if vec.size != self.size:
            raise ValueError(f"flat vector size {vec.size} != store size {self.size}")
        i = 0
        for t in self._params.values():
            n = t.data.size
            t.data[...] = vec[i:i + n].reshape(t.data.shape)
            i += n

    def get_flat_grad(self) -> np.ndarray:
        parts = []
        for name, t in self._params.items():
            if t.grad is None:
                raise NonFiniteGradientError(f"gradient not populated for {name!r}")
            parts.append(t.grad.ravel())
        return np.concatenate(parts)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        for name, t in self._params.items():
            src = arrays[name]
            if src.shape != t.data.shape:
                raise ValueError(f"parameter {name!r}: shape {src.shape} != {t.data.shape}")
            t.data[...] = src

    def adam_snapshot(self) -> dict:
        out = {"step_count": self.step_count}
        for name in self._params:
            out[f"m.{name}"] = self._m[name].copy()
            out[f"v.{name}"] = self._v[name].copy()
        return out

    def load_adam_snapshot(self, snap: dict):
        self.step_count = int(snap["step_count"])
        for name in self._params:
            self._m[name][...] = snap[f"m.{name}"]
            self._v[name][...] = snap[f"v.{name}"]


def adam_step(store: ParamStore, lr: float, betas=(0.9, 0.999), eps=1e-8):
    """One Adam update with bias correction over every parameter in the store.

    A non-finite gradient anywhere rejects the whole step before any
    parameter or moment buffer is touched.
    """
    b1, b2 = betas
    for name, t in store.items():
        if t.grad is None:
            raise NonFiniteGradientError(f"gradient not populated for {name!r}")
        if not np.all(np.isfinite(t.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in {name!r}")
    store.step_count += 1
    t_step = store.step_count
    bc1 = 1.0 - b1 ** t_step
    bc2 = 1.0 - b2 ** t_step
    for name, p in store.items():
        g = p.grad
        m = store._m[name]
        v = store._v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
