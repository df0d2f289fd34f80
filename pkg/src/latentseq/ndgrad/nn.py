"""Parameter containers, recurrent cells and the Adam optimizer."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .core import Value, add, broadcast_to, matmul, mul, sigmoid, sub, tanh


class Params:
    """Ordered name -> trainable Value mapping."""

    def __init__(self):
        self._values: dict[str, Value] = {}

    def add(self, name: str, data) -> Value:
        if name in self._values:
            raise KeyError(f"duplicate parameter {name!r}")
        v = Value(np.array(data, dtype=np.float64), requires_grad=True)
        self._values[name] = v
        return v

    def __getitem__(self, name: str) -> Value:
        return self._values[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def items(self):
        return self._values.items()

    def values(self):
        return self._values.values()

    def __len__(self) -> int:
        return len(self._values)

    def subset(self, *prefixes: str) -> "Params":
        """A view sharing the Values whose names start with any of ``prefixes``."""
        view = Params()
        view._values = {k: v for k, v in self._values.items() if k.startswith(prefixes)}
        if not view._values:
            raise KeyError(f"no parameters match {prefixes}")
        return view

    @classmethod
    def join(cls, *groups: "Params") -> "Params":
        """A view over several containers; names must not collide."""
        view = cls()
        for group in groups:
            for k, v in group.items():
                if k in view._values:
                    raise KeyError(f"duplicate parameter {k!r}")
                view._values[k] = v
        return view

    def zero_grad(self) -> None:
        for v in self._values.values():
            v.zero_grad()

    def n_scalars(self) -> int:
        return sum(v.size for v in self._values.values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._values.items()}

    def load(self, state: dict[str, np.ndarray]) -> None:
        for k, v in self._values.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != v.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {v.shape}")
            v.data = arr.copy()


def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def affine(x: Value, weight: Value, bias: Value | None = None) -> Value:
    """``x @ weight + bias`` with the bias expanded explicitly."""
    out = matmul(x, weight)
    return out if bias is None else add(out, broadcast_to(bias, out.shape))


class GRUCell:
    """Gated recurrent cell whose input projection can be hoisted out of the time loop."""

    def __init__(self, params: Params, prefix: str, n_in: int, n_hidden: int, rng: np.random.Generator):
        self.n_hidden = n_hidden
        self.w_in = params.add(f"{prefix}.w_in", glorot(rng, (n_in, 3 * n_hidden)))
        self.w_rec = params.add(f"{prefix}.w_rec", glorot(rng, (n_hidden, 3 * n_hidden)))
        self.bias = params.add(f"{prefix}.bias", np.zeros(3 * n_hidden))

    def project_inputs(self, x: Value) -> Value:
        return affine(x, self.w_in, self.bias)

    def step(self, projected: Value, h: Value) -> Value:
        H = self.n_hidden
        rec = matmul(h, self.w_rec)
        gates = sigmoid(add(projected[..., : 2 * H], rec[..., : 2 * H]))
        reset, update = gates[..., :H], gates[..., H:]
        candidate = tanh(add(projected[..., 2 * H :], mul(reset, rec[..., 2 * H :])))
        return add(candidate, mul(update, sub(h, candidate)))


class Adam:
    """Adam with global-norm gradient clipping."""

    def __init__(
        self,
        params: Params,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: float | None = 5.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(v.grad * v.grad)) for v in self.params.values())))

    def step(self) -> float:
        """Apply one update from the current ``.grad`` slots; returns the pre-clip norm."""
        norm = self.grad_norm()
        if not np.isfinite(norm):
            raise FloatingPointError("non-finite gradient norm")
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad * scale
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return norm
