"""Parameters, the small layer set the model needs, Adam and a gradient checker."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor

CHECKPOINT_HEADER = "DEFT-CKPT v1"


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class ParameterStore:
    """Named parameters with unique names, created from one seeded generator."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(value, name)
        self._params[name] = p
        return p

    def glorot(self, name: str, fan_in: int, fan_out: int) -> Parameter:
        return self.add(name, glorot(self.rng, fan_in, fan_out))

    def zeros(self, name: str, rows: int, cols: int) -> Parameter:
        return self.add(name, np.zeros((rows, cols)))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.value.copy() for n, p in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for n, v in state.items():
            v = np.asarray(v, dtype=np.float64)
            if v.shape != self._params[n].shape:
                raise ShapeError(f"{n}: checkpoint shape {v.shape} != {self._params[n].shape}")
            self._params[n].value = v.copy()


# -- layers -------------------------------------------------------------------


@dataclass
class GRUParams:
    """Weights of a GRU cell, row-vector convention: x (b, n_in), h (b, n_h)."""

    W_z: Parameter
    U_z: Parameter
    b_z: Parameter
    W_r: Parameter
    U_r: Parameter
    b_r: Parameter
    W_h: Parameter
    U_h: Parameter
    b_h: Parameter

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, n_in: int, n_hidden: int) -> "GRUParams":
        kw = {}
        for gate in "zrh":
            kw[f"W_{gate}"] = store.glorot(f"{prefix}.W_{gate}", n_in, n_hidden)
            kw[f"U_{gate}"] = store.glorot(f"{prefix}.U_{gate}", n_hidden, n_hidden)
            kw[f"b_{gate}"] = store.zeros(f"{prefix}.b_{gate}", 1, n_hidden)
        return cls(**kw)

    def parameters(self) -> list[Parameter]:
        return [getattr(self, f) for f in self.__dataclass_fields__]


def gru_cell(x: Tensor | None, h: Tensor, p: GRUParams) -> Tensor:
    """h' = (1 - z) * h + z * tanh(x W_h + (r * h) U_h + b_h).

    ``x=None`` means a zero input.
    """
    if h.shape[1] != p.U_z.shape[0]:
        raise ShapeError(f"gru_cell: state width {h.shape[1]} != {p.U_z.shape[0]}")

    def pre(W, U, b, state):
        out = ag.add(state @ U, b)
        if x is not None:
            out = ag.add(out, x @ W)
        return out

    z = ag.sigmoid(pre(p.W_z, p.U_z, p.b_z, h))
    r = ag.sigmoid(pre(p.W_r, p.U_r, p.b_r, h))
    cand = ag.tanh(pre(p.W_h, p.U_h, p.b_h, ag.mul(r, h)))
    return ag.add(h, ag.mul(z, ag.sub(cand, h)))


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    out = x @ W
    return out if b is None else ag.add(out, b)


def mlp2(
    x: Tensor,
    W1: Tensor,
    W2: Tensor,
    activation: str = "leaky_relu",
    b1: Tensor | None = None,
    b2: Tensor | None = None,
) -> Tensor:
    """sigma(x W1 [+ b1]) W2 [+ b2]; rows of x are samples."""
    if activation not in ag.ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    hidden = ag.ACTIVATIONS[activation](linear(x, W1, b1))
    return linear(hidden, W2, b2)


# -- optimisation --------------------------------------------------------------


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def gradient_pairs(
    f: Callable[[], Tensor],
    params: Iterable[Parameter],
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Flat arrays (analytic, numeric) of backward() and central-difference derivatives.

    ``max_coords`` samples that many coordinates per parameter instead of all.
    """
    params = list(params)
    for p in params:
        p.grad = None
    f().backward()
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    out_a, out_n = [], []
    with ag.no_grad():
        for p, a in zip(params, analytic):
            coords = list(np.ndindex(*p.shape))
            if max_coords is not None and len(coords) > max_coords:
                coords = [coords[i] for i in rng.choice(len(coords), max_coords, replace=False)]
            for idx in coords:
                orig = p.value[idx]
                p.value[idx] = orig + step
                hi = f().item()
                p.value[idx] = orig - step
                lo = f().item()
                p.value[idx] = orig
                out_a.append(a[idx])
                out_n.append((hi - lo) / (2 * step))
    return np.array(out_a), np.array(out_n)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def gradient_check(
    f: Callable[[], Tensor],
    params: Iterable[Parameter],
    step: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between backward() and central differences.

    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    a, n = gradient_pairs(f, params, step, max_coords, seed)
    return float(relative_errors(a, n).max()) if len(a) else 0.0


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(state: Mapping[str, np.ndarray], path, meta: Mapping[str, str] | None = None):
    lines = [CHECKPOINT_HEADER]
    for k, v in (meta or {}).items():
        lines.append(f"META {k} {v}")
    for name, value in state.items():
        value = np.asarray(value, dtype=np.float64)
        lines.append(f"PARAM {name} {value.shape[0]} {value.shape[1]}")
        for row in value:
            lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != CHECKPOINT_HEADER:
        raise ValueError(f"{path}: missing {CHECKPOINT_HEADER!r} header")
    state, meta = {}, {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "META" and len(parts) >= 3:
            meta[parts[1]] = " ".join(parts[2:])
        elif parts[0] == "PARAM" and len(parts) == 4:
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            block = lines[i : i + rows]
            if len(block) != rows:
                raise ValueError(f"{path}:{i}: parameter {name} is truncated")
            value = np.array([[float(x) for x in r.split()] for r in block]).reshape(rows, cols)
            state[name] = value
            i += rows
        else:
            raise ValueError(f"{path}:{i}: unexpected line {lines[i - 1]!r}")
    return state, meta
