"""Small feed-forward networks with hand-written backprop and Adam.

Everything is float64. Parameters live in one flat vector so that the
optimizer, checkpointing and finite-difference checks can treat every
network the same way. Inputs may be a single vector ``(in,)`` or a batch
``(B, in)``; parameter gradients are always summed over the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DimensionError, NonFiniteError

LAYER_NORM_EPS = 1e-6


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    layer_widths: tuple[int, ...]
    output_dim: int
    activation: str = "elu"
    first_layer_norm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if not self.layer_widths:
            raise ValueError("layer_widths must be non-empty")
        if any(w < 1 for w in self.layer_widths) or self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"all widths must be positive: {self}")
        if self.activation != "elu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return _layout(self)[-1]

    def to_header(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layer_widths": list(self.layer_widths),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "first_layer_norm": self.first_layer_norm,
        }


@lru_cache(maxsize=None)
def _layout(arch: Architecture):
    """Slices of the flat vector: a list of (W, b, ln_gain, ln_bias) per layer, then total size."""
    dims = (arch.input_dim, *arch.layer_widths, arch.output_dim)
    layers = []
    pos = 0
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = slice(pos, pos + d_in * d_out)
        pos += d_in * d_out
        b = slice(pos, pos + d_out)
        pos += d_out
        g = beta = None
        if i == 0 and arch.first_layer_norm:
            g = slice(pos, pos + d_out)
            pos += d_out
            beta = slice(pos, pos + d_out)
            pos += d_out
        layers.append(((d_out, d_in), w, b, g, beta))
    return layers, pos


def param_count(arch: Architecture) -> int:
    return arch.n_params


@dataclass(frozen=True, eq=False)
class ParamSet:
    values: np.ndarray
    arch: Architecture

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.arch.n_params,):
            raise DimensionError(
                f"expected {self.arch.n_params} parameters for {self.arch}, got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)

    def copy(self) -> "ParamSet":
        return ParamSet(self.values.copy(), self.arch)

    def with_values(self, values) -> "ParamSet":
        return ParamSet(values, self.arch)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def init_params(arch: Architecture, rng: np.random.Generator) -> ParamSet:
    """Fan-in scaled uniform weights, zero biases, unit layer-norm gain."""
    values = np.zeros(arch.n_params)
    layers, _ = _layout(arch)
    for shape, w, _b, g, _beta in layers:
        bound = 1.0 / np.sqrt(shape[1])
        values[w] = rng.uniform(-bound, bound, size=shape[0] * shape[1])
        if g is not None:
            values[g] = 1.0
    return ParamSet(values, arch)


def _elu(z):
    out = np.minimum(z, 0.0)
    np.expm1(out, out=out)
    out += np.maximum(z, 0.0)
    return out


def _elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _as_batch(params: ParamSet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.input_dim:
        raise DimensionError(f"input shape {x.shape} does not match input_dim {params.arch.input_dim}")
    return x, single


def forward_trace(params: ParamSet, x):
    """Forward pass returning the output and the activations backward() needs."""
    xb, single = _as_batch(params, x)
    layers, _ = _layout(params.arch)
    v = params.values
    h = xb
    trace = []
    for i, (shape, w, b, g, beta) in enumerate(layers):
        W = v[w].reshape(shape)
        z = h @ W.T + v[b]
        last = i == len(layers) - 1
        if last:
            trace.append((h, None, None))
            h = z
            break
        ln = None
        if g is not None:
            mu = z.mean(axis=1, keepdims=True)
            sd = np.sqrt(z.var(axis=1, keepdims=True) + LAYER_NORM_EPS)
            n = (z - mu) / sd
            ln = (n, sd)
            z = n * v[g] + v[beta]
        trace.append((h, z, ln))
        h = _elu(z)
    out = h[0] if single else h
    return out, (trace, single)


def forward(params: ParamSet, x) -> np.ndarray:
    return forward_trace(params, x)[0]


def backward(params: ParamSet, x, upstream_grad, trace=None, need_param_grad: bool = True):
    """Gradients of ``sum(forward(x) * upstream_grad)``.

    Returns ``(param_grad, input_grad)``; ``param_grad`` is summed over the
    batch, ``input_grad`` has the shape of ``x``. Pass ``trace`` from
    :func:`forward_trace` to skip recomputing the forward pass.
    """
    if trace is None:
        _, trace = forward_trace(params, x)
    layers_trace, single = trace
    dy = np.asarray(upstream_grad, dtype=np.float64)
    if single:
        dy = dy[None, :]
    batch = layers_trace[0][0].shape[0]
    if dy.shape != (batch, params.arch.output_dim):
        raise DimensionError(f"upstream_grad shape {dy.shape} does not match output_dim {params.arch.output_dim}")

    layers, total = _layout(params.arch)
    v = params.values
    grad = np.zeros(total) if need_param_grad else None
    dz = dy
    for i in range(len(layers) - 1, -1, -1):
        shape, w, b, g, beta = layers[i]
        h_in, _, _ = layers_trace[i]
        if i < len(layers) - 1:
            _, z_post, ln = layers_trace[i]
            dz = dz * _elu_grad(z_post)
            if ln is not None:
                n, sd = ln
                if need_param_grad:
                    grad[g] = np.sum(dz * n, axis=0)
                    grad[beta] = np.sum(dz, axis=0)
                dn = dz * v[g]
                dz = (dn - dn.mean(axis=1, keepdims=True) - n * np.mean(dn * n, axis=1, keepdims=True)) / sd
        W = v[w].reshape(shape)
        if need_param_grad:
            grad[w] = (dz.T @ h_in).ravel()
            grad[b] = dz.sum(axis=0)
        dz = dz @ W
    dx = dz[0] if single else dz
    return grad, dx


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    @classmethod
    def zeros(cls, size: int, learning_rate: float = 2e-4, **kw) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, learning_rate, **kw)

    def copy(self) -> "AdamState":
        return replace(self, first_moment=self.first_moment.copy(), second_moment=self.second_moment.copy())


def adam_update(state: AdamState, values, grad) -> tuple[np.ndarray, AdamState]:
    """One descent step on a raw array. Returns new values and a new state."""
    values = np.asarray(values, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != values.shape or grad.shape != state.first_moment.shape:
        raise DimensionError(
            f"adam: grad {grad.shape}, values {values.shape}, state {state.first_moment.shape}"
        )
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad.ravel()))
        raise NonFiniteError(f"adam: non-finite gradient at {bad.size} entries (first index {bad[0]})")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grad
    s = state.beta2 * state.second_moment + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**t)
    s_hat = s / (1 - state.beta2**t)
    new_values = values - state.learning_rate * m_hat / (np.sqrt(s_hat) + state.eps_hat)
    return new_values, replace(state, first_moment=m, second_moment=s, step_count=t)


def adam_step(state: AdamState, params: ParamSet, grad) -> tuple[ParamSet, AdamState]:
    values, state = adam_update(state, params.values, grad)
    return ParamSet(values, params.arch), state


def save_params(path, params: ParamSet) -> None:
    """Header line (JSON architecture) followed by little-endian float64 values."""
    header = dict(params.arch.to_header(), n_params=params.arch.n_params)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(params.values.astype("<f8").tobytes())


def load_params(path) -> ParamSet:
    raw = Path(path).read_bytes()
    head, sep, body = raw.partition(b"\n")
    if not sep:
        raise ValueError(f"{path}: missing checkpoint header line")
    meta = json.loads(head)
    n = meta.pop("n_params")
    arch = Architecture(
        input_dim=meta["input_dim"],
        layer_widths=tuple(meta["layer_widths"]),
        output_dim=meta["output_dim"],
        activation=meta["activation"],
        first_layer_norm=meta["first_layer_norm"],
    )
    if len(body) != 8 * n or n != arch.n_params:
        raise ValueError(f"{path}: expected {arch.n_params} float64 values, found {len(body) / 8}")
    return ParamSet(np.frombuffer(body, dtype="<f8").astype(np.float64), arch)
