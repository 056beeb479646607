"""Named parameter storage, initialisation, and the Adam optimiser."""

from __future__ import annotations

import copy

import numpy as np

from gamfq.nncore.autodiff import DTYPE, Tape, Tensor, constant

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class OptimizerError(RuntimeError):
    pass


class ParamStore:
    """Parameters, their gradients and Adam moments, keyed by name.

    Gradients are only materialised once a backward pass touches a
    parameter; ``adam_step`` refuses to run if nothing was accumulated.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self._fresh_grads = False

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def add(self, name: str, value) -> None:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=DTYPE)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def set(self, name: str, value) -> None:
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != self.params[name].shape:
            raise ValueError(f"{name}: shape {value.shape} != {self.params[name].shape}")
        self.params[name] = value.copy()

    def accumulate_grad(self, name: str, g: np.ndarray) -> None:
        self.grads[name] = self.grads[name] + g
        self._fresh_grads = True

    def zero_grad(self) -> None:
        for name in self.grads:
            self.grads[name] = np.zeros_like(self.params[name])
        self._fresh_grads = False

    def grad_norm(self, prefix: str = "") -> float:
        return float(np.sqrt(sum(float((g * g).sum()) for n, g in self.grads.items() if n.startswith(prefix))))

    def bind(self, tape: Tape | None = None) -> "BoundParams":
        return BoundParams(self, tape)

    def snapshot(self) -> "ParamStore":
        """Point-in-time copy of the parameter values (fresh optimiser state)."""
        other = ParamStore()
        for name, value in self.params.items():
            other.add(name, value)
        return other

    def clone(self) -> "ParamStore":
        return copy.deepcopy(self)

    # -- initialisers ---------------------------------------------------------

    def init_fc(self, name: str, din: int, dout: int, rng: np.random.Generator) -> None:
        bound = 1.0 / np.sqrt(din)
        self.add(f"{name}/W", rng.uniform(-bound, bound, size=(din, dout)))
        self.add(f"{name}/b", np.zeros(dout))

    def init_lstm(self, name: str, din: int, hidden: int, rng: np.random.Generator) -> None:
        bx, bh = 1.0 / np.sqrt(din), 1.0 / np.sqrt(hidden)
        self.add(f"{name}/Wx", rng.uniform(-bx, bx, size=(din, 4 * hidden)))
        self.add(f"{name}/Wh", rng.uniform(-bh, bh, size=(hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate
        self.add(f"{name}/b", b)

    def init_gat(self, name: str, dim: int, rng: np.random.Generator) -> None:
        bw, ba = 1.0 / np.sqrt(dim), 1.0 / np.sqrt(2 * dim)
        self.add(f"{name}/W", rng.uniform(-bw, bw, size=(dim, dim)))
        self.add(f"{name}/a", rng.uniform(-ba, ba, size=(2 * dim, 1)))


class BoundParams:
    """Parameter lookup for one forward pass: taped leaves, or constants when untaped."""

    def __init__(self, store: ParamStore, tape: Tape | None):
        self.store = store
        self.tape = tape
        self._cache: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        t = self._cache.get(name)
        if t is None:
            if self.tape is None:
                t = constant(self.store.params[name])
            else:
                t = self.tape.param(self.store, name)
            self._cache[name] = t
        return t


def adam_step(store: ParamStore, lr: float) -> None:
    """One bias-corrected Adam update over every parameter, then clear gradients."""
    if not store._fresh_grads:
        raise OptimizerError("adam_step called without gradients from a backward pass")
    store.step += 1
    t = store.step
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for name, p in store.params.items():
        g = store.grads[name]
        m = ADAM_BETA1 * store.m[name] + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * store.v[name] + (1.0 - ADAM_BETA2) * g * g
        store.m[name] = m
        store.v[name] = v
        store.params[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    store.zero_grad()


def soft_update(online: ParamStore, target: ParamStore, tau: float) -> None:
    """``target <- tau * online + (1 - tau) * target`` over a matching manifest."""
    if set(online.params) != set(target.params):
        raise KeyError("soft_update: parameter manifests differ")
    for name, p in online.params.items():
        tp = target.params[name]
        if tp.shape != p.shape:
            raise ValueError(f"soft_update: {name} shape mismatch")
        if tau == 1.0:
            target.params[name] = p.copy()
        elif tau != 0.0:
            target.params[name] = tau * p + (1.0 - tau) * tp
