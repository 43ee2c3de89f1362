"""Small feedforward networks with hand-written reverse-mode gradients.

Parameters live in one flat vector; ``MlpParams.layers`` exposes reshaped
views (weights stored ``(fan_in, fan_out)``, then biases, layer by layer).
Inputs are ``(batch, in)`` or a single ``(in,)`` vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class MlpSpec:
    widths: Tuple[int, ...]
    activation: str = "tanh"
    output_activation: str = "linear"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError("need input and output widths, all >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_activation != "linear":
            raise ValueError("only a linear output head is supported")
        object.__setattr__(self, "widths", widths)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def layout(self) -> List[Tuple[str, int, Tuple[int, ...]]]:
        """``(name, offset, shape)`` for every parameter block."""
        out, off = [], 0
        for i, (a, b) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            out.append((f"W{i}", off, (a, b)))
            off += a * b
            out.append((f"b{i}", off, (b,)))
            off += b
        return out

    @property
    def n_params(self) -> int:
        name, off, shape = self.layout()[-1]
        return off + int(np.prod(shape))


@dataclass
class MlpParams:
    spec: MlpSpec
    flat: np.ndarray
    _views: list = field(init=False, repr=False)

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=float)
        if self.flat.shape != (self.spec.n_params,):
            raise ValueError(f"expected {self.spec.n_params} parameters, got {self.flat.shape}")
        self._rebuild()

    def _rebuild(self):
        blocks = [self.flat[off : off + int(np.prod(shape))].reshape(shape) for _, off, shape in self.spec.layout()]
        self._views = list(zip(blocks[0::2], blocks[1::2]))

    @property
    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return self._views

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat.copy())

    def assign(self, flat: np.ndarray) -> None:
        """Overwrite values in place so existing views stay valid."""
        self.flat[...] = flat


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases."""
    flat = np.empty(spec.n_params)
    for name, off, shape in spec.layout():
        bound = 1.0 / np.sqrt(spec.widths[int(name[1:])])
        size = int(np.prod(shape))
        flat[off : off + size] = rng.uniform(-bound, bound, size)
    return MlpParams(spec, flat)


def zero_params(spec: MlpSpec) -> MlpParams:
    return MlpParams(spec, np.zeros(spec.n_params))


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name, z, h):
    # relu subgradient at exactly 0 is 0
    return 1.0 - h**2 if name == "tanh" else (z > 0).astype(float)


def _as_batch(spec, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = x[None] if single else x
    if x.ndim != 2 or x.shape[1] != spec.in_dim:
        raise ValueError(f"expected input width {spec.in_dim}, got shape {np.shape(x)}")
    return x, single


def forward_cache(spec: MlpSpec, params: MlpParams, x):
    """Forward pass returning ``(output, cache)`` for :func:`backward`."""
    h, single = _as_batch(spec, x)
    hs, zs = [h], []
    for i, (W, b) in enumerate(params.layers):
        z = h @ W + b
        last = i == spec.n_layers - 1
        h = z if last else _act(spec.activation, z)
        zs.append(z)
        hs.append(h)
    return (h[0] if single else h), (hs, zs, single)


def forward(spec: MlpSpec, params: MlpParams, x) -> np.ndarray:
    return forward_cache(spec, params, x)[0]


def backward(spec: MlpSpec, params: MlpParams, cache, cotangent, need_params: bool = True):
    """Vector-Jacobian products for parameters and inputs.

    Returns:
        ``(flat_param_grad or None, input_grad)``; parameter gradients are
        summed over the batch.
    """
    hs, zs, single = cache
    delta = np.asarray(cotangent, dtype=float)
    delta = delta[None] if single else delta
    grads = np.empty(spec.n_params) if need_params else None
    layout = spec.layout()
    for i in reversed(range(spec.n_layers)):
        W, _ = params.layers[i]
        if i < spec.n_layers - 1:
            delta = delta * _act_grad(spec.activation, zs[i], hs[i + 1])
        if need_params:
            _, w_off, w_shape = layout[2 * i]
            _, b_off, b_shape = layout[2 * i + 1]
            grads[w_off : w_off + W.size] = (hs[i].T @ delta).ravel()
            grads[b_off : b_off + b_shape[0]] = delta.sum(axis=0)
        delta = delta @ W.T
    return grads, (delta[0] if single else delta)


def param_gradient(spec: MlpSpec, params: MlpParams, x, cotangent) -> np.ndarray:
    _, cache = forward_cache(spec, params, x)
    return backward(spec, params, cache, cotangent)[0]


def input_gradient(spec: MlpSpec, params: MlpParams, x, cotangent) -> np.ndarray:
    _, cache = forward_cache(spec, params, x)
    return backward(spec, params, cache, cotangent, need_params=False)[1]


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    skipped: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def sgd_adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState, hp: AdamHyper = AdamHyper()):
    """One bias-corrected Adam step (descent). Returns ``(new_params, new_state)``.

    A non-finite gradient leaves parameters and moments untouched and bumps
    ``state.skipped``.
    """
    if not np.all(np.isfinite(grad)):
        return params, AdamState(state.m, state.v, state.t, state.skipped + 1)
    t = state.t + 1
    m = hp.beta1 * state.m + (1.0 - hp.beta1) * grad
    v = hp.beta2 * state.v + (1.0 - hp.beta2) * grad**2
    m_hat = m / (1.0 - hp.beta1**t)
    v_hat = v / (1.0 - hp.beta2**t)
    return params - hp.lr * m_hat / (np.sqrt(v_hat) + hp.eps), AdamState(m, v, t, state.skipped)


class Adam:
    """In-place optimizer bound to one :class:`MlpParams`."""

    def __init__(self, params: MlpParams, hp: AdamHyper = AdamHyper()):
        self.params = params
        self.hp = hp
        self.state = AdamState.zeros(params.spec.n_params)

    def step(self, grad: np.ndarray) -> None:
        new, self.state = sgd_adam_step(self.params.flat, grad, self.state, self.hp)
        self.params.assign(new)


def save_checkpoint(path, params: MlpParams) -> None:
    """Text header line (JSON layout) followed by raw little-endian float64."""
    spec = params.spec
    header = {
        "widths": list(spec.widths),
        "activation": spec.activation,
        "output_activation": spec.output_activation,
        "dtype": "<f8",
        "layout": [[name, off, list(shape)] for name, off, shape in spec.layout()],
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> MlpParams:
    raw = Path(path).read_bytes()
    head, body = raw.split(b"\n", 1)
    header = json.loads(head)
    spec = MlpSpec(tuple(header["widths"]), header["activation"], header["output_activation"])
    return MlpParams(spec, np.frombuffer(body, dtype=header["dtype"]).astype(float))


def mlp(widths: Sequence[int], activation: str = "tanh") -> MlpSpec:
    return MlpSpec(tuple(widths), activation)
