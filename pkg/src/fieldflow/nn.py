"""Minimal differentiable-compute kernel: dense nets, an LSTM cell, Adam.

Everything runs in 64-bit floats on numpy arrays. Only the fixed
architectures used by this package are differentiated (reverse mode, written
out by hand); there is no general computation graph. Parameters live in
:class:`ParamBundle`, a set of named arrays backed by one flat buffer so the
optimizer and the finite-difference checker can treat a network as a single
vector.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractViolation, TrainingDiverged

_CKPT_MAGIC = b"RXW1"


# ---------------------------------------------------------------------------
# parameter container
# ---------------------------------------------------------------------------

class ParamBundle:
    """Named parameter arrays sharing one flat float64 buffer.

    Array views handed out are read-only; all mutation goes through
    ``__setitem__``/``set_flat``/``add_flat`` so forward caches can detect
    parameters changing under them.
    """

    def __init__(self, arrays):
        items = list(arrays.items() if isinstance(arrays, dict) else arrays)
        if not items:
            raise ContractViolation("empty parameter bundle")
        self._names = tuple(name for name, _ in items)
        if len(set(self._names)) != len(self._names):
            raise ContractViolation("duplicate parameter names")
        shapes, chunks = [], []
        for _, value in items:
            arr = np.asarray(value, dtype=float)
            shapes.append(arr.shape)
            chunks.append(arr.ravel())
        self._shapes = tuple(shapes)
        self._flat = np.concatenate(chunks) if chunks else np.zeros(0)
        offsets = np.cumsum([0] + [int(np.prod(s)) if s else 1 for s in shapes])
        self._slices = tuple(slice(int(a), int(b)) for a, b in zip(offsets, offsets[1:]))
        self._mutations = 0

    @property
    def names(self):
        return self._names

    @property
    def size(self) -> int:
        return len(self._flat)

    @property
    def flat(self) -> np.ndarray:
        view = self._flat.view()
        view.setflags(write=False)
        return view

    @property
    def mutations(self) -> int:
        return self._mutations

    def shape(self, name) -> tuple:
        return self._shapes[self._names.index(name)]

    def __contains__(self, name) -> bool:
        return name in self._names

    def __getitem__(self, name) -> np.ndarray:
        i = self._names.index(name)
        view = self._flat[self._slices[i]].reshape(self._shapes[i])
        view.setflags(write=False)
        return view

    def __setitem__(self, name, value) -> None:
        i = self._names.index(name)
        arr = np.asarray(value, dtype=float)
        if arr.shape != self._shapes[i]:
            raise ContractViolation(
                f"{name}: shape {arr.shape} does not match {self._shapes[i]}")
        self._flat[self._slices[i]] = arr.ravel()
        self._mutations += 1

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ContractViolation(f"flat vector must have length {self.size}")
        self._flat[:] = vec
        self._mutations += 1

    def add_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.size,):
            raise ContractViolation(f"flat vector must have length {self.size}")
        self._flat += vec
        self._mutations += 1

    def copy(self) -> "ParamBundle":
        return ParamBundle.from_flat(self, self._flat)

    def __reduce__(self):
        # views into the shared buffer do not survive pickling on their own
        return (ParamBundle, ([(n, np.array(self[n])) for n in self._names],))

    @classmethod
    def from_flat(cls, template: "ParamBundle", vec) -> "ParamBundle":
        out = cls.zeros_like(template)
        out.set_flat(vec)
        return out

    @classmethod
    def zeros_like(cls, template: "ParamBundle") -> "ParamBundle":
        return cls([(n, np.zeros(s)) for n, s in zip(template._names, template._shapes)])

    def to_dict(self) -> dict:
        return {n: np.array(self[n]) for n in self._names}


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# multilayer perceptron: tanh hidden layers, identity last layer
# ---------------------------------------------------------------------------

def mlp_init(rng: np.random.Generator, widths) -> ParamBundle:
    """Glorot-uniform weights, zero biases; widths = [in, hidden..., out]."""
    if len(widths) < 2:
        raise ContractViolation("need at least input and output widths")
    arrays = []
    for layer, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        arrays.append((f"w{layer}", glorot_uniform(rng, n_in, n_out, (n_out, n_in))))
        arrays.append((f"b{layer}", np.zeros(n_out)))
    return ParamBundle(arrays)


def mlp_widths(params: ParamBundle) -> list:
    widths = [params.shape("w0")[1]]
    layer = 0
    while f"w{layer}" in params:
        widths.append(params.shape(f"w{layer}")[0])
        layer += 1
    return widths


@dataclass
class MlpCache:
    params: ParamBundle
    token: int
    lead_shape: tuple
    activations: list  # [x, a_1, ..., a_{L-1}] flattened to (B, width)


def _flatten_lead(x, width: int):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (width,):
        raise ContractViolation(f"last axis must have width {width}, got {x.shape}")
    lead = x.shape[:-1]
    return x.reshape(-1, width), lead


def mlp_forward(params: ParamBundle, x) -> tuple:
    """y = W_L tanh(... tanh(W_1 x + b_1) ...) + b_L over any leading axes."""
    n_layers = len(mlp_widths(params)) - 1
    a, lead = _flatten_lead(x, params.shape("w0")[1])
    activations = [a]
    for layer in range(n_layers):
        s = a @ params[f"w{layer}"].T + params[f"b{layer}"]
        a = s if layer == n_layers - 1 else np.tanh(s)
        if layer < n_layers - 1:
            activations.append(a)
    cache = MlpCache(params=params, token=params.mutations, lead_shape=lead,
                     activations=activations)
    return a.reshape(lead + (a.shape[-1],)), cache


def mlp_backward(cache: MlpCache, dy) -> tuple:
    """Exact reverse-mode gradients; returns (grads bundle, dx)."""
    params = cache.params
    if params.mutations != cache.token:
        raise ContractViolation("parameters changed since forward; cache is stale")
    n_layers = len(cache.activations)
    dy = np.asarray(dy, dtype=float)
    ds = dy.reshape(-1, params.shape(f"w{n_layers - 1}")[0])
    grads = {}
    for layer in range(n_layers - 1, -1, -1):
        a_prev = cache.activations[layer]
        grads[f"w{layer}"] = ds.T @ a_prev
        grads[f"b{layer}"] = ds.sum(axis=0)
        da = ds @ params[f"w{layer}"]
        if layer > 0:
            ds = da * (1.0 - cache.activations[layer] ** 2)
    dx = da.reshape(cache.lead_shape + (da.shape[-1],))
    bundle = ParamBundle([(n, grads[n]) for n in params.names])
    return bundle, dx


# ---------------------------------------------------------------------------
# LSTM cell (single layer; gates input/forget/candidate/output)
# ---------------------------------------------------------------------------

def lstm_init(rng: np.random.Generator, input_width: int, hidden_width: int) -> ParamBundle:
    h = hidden_width
    return ParamBundle([
        ("wx", glorot_uniform(rng, input_width, h, (4 * h, input_width))),
        ("wh", glorot_uniform(rng, h, h, (4 * h, h))),
        ("b", np.zeros(4 * h)),
    ])


def lstm_hidden_width(params: ParamBundle) -> int:
    return params.shape("wh")[1]


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class LstmCache:
    params: ParamBundle
    token: int
    x: np.ndarray
    z_prev: np.ndarray
    c_prev: np.ndarray
    gates: tuple  # (i, f, g, o)
    c: np.ndarray


def lstm_step(params: ParamBundle, z_prev, c_prev, x) -> tuple:
    """One recurrence step; all arguments may carry a leading batch axis."""
    h = lstm_hidden_width(params)
    x2, lead = _flatten_lead(x, params.shape("wx")[1])
    z2 = np.asarray(z_prev, dtype=float).reshape(-1, h)
    c2 = np.asarray(c_prev, dtype=float).reshape(-1, h)
    if not (len(x2) == len(z2) == len(c2)):
        raise ContractViolation("batch sizes of input and state disagree")
    pre = x2 @ params["wx"].T + z2 @ params["wh"].T + params["b"]
    i = _sigmoid(pre[:, :h])
    f = _sigmoid(pre[:, h:2 * h])
    g = np.tanh(pre[:, 2 * h:3 * h])
    o = _sigmoid(pre[:, 3 * h:])
    c = f * c2 + i * g
    z = o * np.tanh(c)
    cache = LstmCache(params=params, token=params.mutations, x=x2, z_prev=z2,
                      c_prev=c2, gates=(i, f, g, o), c=c)
    return z.reshape(lead + (h,)), c.reshape(lead + (h,)), cache


def lstm_step_backward(cache: LstmCache, dz, dc) -> tuple:
    """Reverse one step: returns (grads, dz_prev, dc_prev, dx)."""
    params = cache.params
    if params.mutations != cache.token:
        raise ContractViolation("parameters changed since forward; cache is stale")
    h = lstm_hidden_width(params)
    i, f, g, o = cache.gates
    dz2 = np.asarray(dz, dtype=float).reshape(-1, h)
    dc2 = np.asarray(dc, dtype=float).reshape(-1, h)
    tc = np.tanh(cache.c)
    do = dz2 * tc
    dc_total = dc2 + dz2 * o * (1.0 - tc ** 2)
    dpre = np.concatenate([
        dc_total * g * i * (1.0 - i),
        dc_total * cache.c_prev * f * (1.0 - f),
        dc_total * i * (1.0 - g ** 2),
        do * o * (1.0 - o),
    ], axis=1)
    grads = ParamBundle([
        ("wx", dpre.T @ cache.x),
        ("wh", dpre.T @ cache.z_prev),
        ("b", dpre.sum(axis=0)),
    ])
    dx = dpre @ params["wx"]
    dz_prev = dpre @ params["wh"]
    dc_prev = dc_total * f
    return grads, dz_prev.reshape(np.shape(dz)), dc_prev.reshape(np.shape(dc)), \
        dx.reshape(np.shape(dz)[:-1] + (cache.x.shape[-1],))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adaptive-moment optimizer memory for one parameter bundle."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    @classmethod
    def for_bundle(cls, params: ParamBundle, lr: float) -> "AdamState":
        return cls(lr=lr, m=np.zeros(params.size), v=np.zeros(params.size))


def adam_update(state: AdamState, params: ParamBundle, grads: ParamBundle) -> ParamBundle:
    """One bias-corrected step; mutates ``state``, returns updated copy of params."""
    g = grads.flat
    if g.shape != params.flat.shape:
        raise ContractViolation("gradient bundle does not match parameters")
    if not np.all(np.isfinite(g)):
        raise TrainingDiverged("non-finite gradient in optimizer step")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    out = params.copy()
    out.add_flat(-state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def grad_check(loss_fn, params: ParamBundle, h: float = 1e-6,
               n_coords: int = 200, rng: np.random.Generator | None = None,
               tolerance: float | None = None) -> float:
    """Max relative gap between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)``. All coordinates are checked unless
    the bundle is larger than ``n_coords``, in which case a seeded random
    subsample of that size is used. Relative error is measured against
    max(1, |analytic|, |numeric|).
    """
    _, grads = loss_fn(params)
    analytic = grads.flat
    if params.size <= n_coords:
        coords = np.arange(params.size)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = rng.choice(params.size, size=n_coords, replace=False)
    base = np.array(params.flat)
    worst = 0.0
    probe = params.copy()
    for j in coords:
        step = np.zeros_like(base)
        step[j] = h
        probe.set_flat(base + step)
        loss_plus = float(loss_fn(probe)[0])
        probe.set_flat(base - step)
        loss_minus = float(loss_fn(probe)[0])
        fd = (loss_plus - loss_minus) / (2.0 * h)
        a = float(analytic[j])
        rel = abs(a - fd) / max(1.0, abs(a), abs(fd))
        worst = max(worst, rel)
    if tolerance is not None and worst > tolerance:
        raise ContractViolation(f"gradient check failed: {worst:.3e} > {tolerance:.3e}")
    return worst


# ---------------------------------------------------------------------------
# checkpoint format: magic "RXW1", u32 manifest length, JSON manifest
# {"arrays": [[name, shape], ...], "meta": {...}}, then the flat f64 payload
# in manifest order
# ---------------------------------------------------------------------------

def save_params(path, params: ParamBundle, meta: dict | None = None) -> None:
    manifest = {
        "arrays": [[n, list(params.shape(n))] for n in params.names],
        "meta": meta or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.flat.astype("<f8").tobytes())


def load_params(path) -> tuple:
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise ContractViolation(f"{path}: bad magic {raw[:4]!r}")
    (blob_len,) = struct.unpack("<I", raw[4:8])
    manifest = json.loads(raw[8:8 + blob_len].decode())
    payload = np.frombuffer(raw[8 + blob_len:], dtype="<f8")
    sizes = [int(np.prod(shape)) if shape else 1 for _, shape in manifest["arrays"]]
    if len(payload) != sum(sizes):
        raise ContractViolation(f"{path}: payload has {len(payload)} floats, "
                                f"manifest wants {sum(sizes)}")
    arrays, pos = [], 0
    for (name, shape), size in zip(manifest["arrays"], sizes):
        arrays.append((name, payload[pos:pos + size].reshape(shape).copy()))
        pos += size
    return ParamBundle(arrays), manifest["meta"]
