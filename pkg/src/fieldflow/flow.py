"""Flow-function network: encoder, recurrent cell, two-state interpolation.

Approximates the flow map of the projected dynamics. The initial coefficient
vector is encoded into the recurrent hidden state; the cell then consumes one
(input-coefficients, exposure-fraction) pair per hold period up to the query
time; the last two hidden states are blended linearly by the fractional
exposure of the final period and decoded back to coefficient space. The
blend makes the output continuous in t across period boundaries.

Conventions: the cell state of the LSTM starts at zero and never leaves the
recurrence; only the hidden state is interpolated. A query at an exact
period boundary has final weight zero, so when the trailing profile does not
exist (query at the very end of the signal) that weight-zero step is skipped,
which provably leaves the output unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .nn import (
    ParamBundle,
    load_params,
    lstm_hidden_width,
    lstm_init,
    lstm_step,
    lstm_step_backward,
    mlp_backward,
    mlp_forward,
    mlp_init,
    mlp_widths,
    save_params,
)
from .pod import ProjectedInputSequence, ProjectedState


# ---------------------------------------------------------------------------
# time bookkeeping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeSchedule:
    """Exposure fractions of the hold periods covering [0, t]."""

    t: float
    delta: float
    k_t: int
    taus: np.ndarray  # (k_t + 1,)


def schedule(t: float, delta: float) -> TimeSchedule:
    """tau_k = min((t - k*delta)/delta, 1) for k = 0..floor(t/delta)."""
    if delta <= 0:
        raise ContractViolation("delta must be positive")
    if t < 0:
        raise ContractViolation(f"negative query time {t}")
    k_t = int(np.floor(t / delta))
    k = np.arange(k_t + 1)
    taus = np.minimum((t - k * delta) / delta, 1.0)
    return TimeSchedule(t=t, delta=delta, k_t=k_t, taus=taus)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FlowNetParams:
    """Encoder MLP, LSTM cell and decoder MLP sharing one hidden width."""

    encoder: ParamBundle
    cell: ParamBundle
    decoder: ParamBundle

    def __post_init__(self):
        enc_w = mlp_widths(self.encoder)
        dec_w = mlp_widths(self.decoder)
        h = lstm_hidden_width(self.cell)
        if enc_w[-1] != h or dec_w[0] != h:
            raise ContractViolation("encoder/cell/decoder hidden widths disagree")
        if self.cell.shape("wx")[1] != enc_w[0] + 1:
            raise ContractViolation("cell input width must be r + 1")
        if dec_w[-1] != enc_w[0]:
            raise ContractViolation("decoder output width must equal r")

    @property
    def r(self) -> int:
        return mlp_widths(self.encoder)[0]

    @property
    def hidden_dim(self) -> int:
        return lstm_hidden_width(self.cell)


@dataclass
class FlowGrads:
    encoder: ParamBundle
    cell: ParamBundle
    decoder: ParamBundle


def flow_init(rng: np.random.Generator, r: int, hidden_dim: int = 250,
              encoder_hidden: tuple = (500, 500),
              decoder_hidden: tuple = (250, 250, 250)) -> FlowNetParams:
    return FlowNetParams(
        encoder=mlp_init(rng, [r, *encoder_hidden, hidden_dim]),
        cell=lstm_init(rng, r + 1, hidden_dim),
        decoder=mlp_init(rng, [hidden_dim, *decoder_hidden, r]),
    )


# ---------------------------------------------------------------------------
# batched rollout
# ---------------------------------------------------------------------------

@dataclass
class FlowRolloutCache:
    params: FlowNetParams
    enc_cache: object
    step_caches: list
    dec_cache: object
    lo: np.ndarray     # (B,) index of the earlier blended state
    hi: np.ndarray     # (B,) index of the later blended state
    taus: np.ndarray   # (B,) final-period exposure fraction
    n_states: int
    batch: int


def _validate_rollout(times, delta, n_profiles):
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise ContractViolation("negative query time")
    k_t = np.floor(times / delta).astype(int)
    taus = (times - k_t * delta) / delta
    short = (k_t > n_profiles) | ((k_t == n_profiles) & (taus > 0))
    if np.any(short):
        t_bad = float(times[short][0])
        raise ContractViolation(
            f"input signal ({n_profiles} profiles of {delta}) does not cover t={t_bad}")
    return times, k_t, taus


def flow_rollout(params: FlowNetParams, a0: np.ndarray, profiles: np.ndarray,
                 times, delta: float) -> tuple:
    """Evaluate a batch of queries; returns ((B, r) coefficients, cache).

    ``a0`` is (B, r), ``profiles`` (B, K, r), ``times`` (B,). Every query runs
    the same number of cell steps (the max needed in the batch); states past a
    query's own blend point get zero weight and zero gradient.
    """
    a0 = np.asarray(a0, dtype=float)
    profiles = np.asarray(profiles, dtype=float)
    b, k_profiles = profiles.shape[0], profiles.shape[1]
    times, k_t, taus = _validate_rollout(times, delta, k_profiles)
    if a0.shape[0] != b or len(times) != b:
        raise ContractViolation("batch sizes of a0, profiles and times disagree")

    z, enc_cache = mlp_forward(params.encoder, a0)
    c = np.zeros_like(z)
    hi = np.minimum(k_t + 1, k_profiles)
    n_steps = int(hi.max()) if b else 0
    states = [z]
    step_caches = []
    for k in range(n_steps):
        tau_k = np.clip((times - k * delta) / delta, 0.0, 1.0)
        x = np.concatenate([profiles[:, k, :], tau_k[:, None]], axis=1)
        z, c, cache = lstm_step(params.cell, z, c, x)
        states.append(z)
        step_caches.append(cache)
    rows = np.arange(b)
    stack = np.stack(states)                      # (n_steps+1, B, H)
    z_blend = (1.0 - taus)[:, None] * stack[k_t, rows] + taus[:, None] * stack[hi, rows]
    out, dec_cache = mlp_forward(params.decoder, z_blend)
    cache = FlowRolloutCache(params=params, enc_cache=enc_cache,
                             step_caches=step_caches, dec_cache=dec_cache,
                             lo=k_t, hi=hi, taus=taus, n_states=n_steps + 1, batch=b)
    return out, cache


def flow_rollout_backward(cache: FlowRolloutCache, d_out) -> tuple:
    """Reverse the rollout; returns (FlowGrads, d_a0)."""
    params = cache.params
    dec_grads, dz_blend = mlp_backward(cache.dec_cache, d_out)
    h = params.hidden_dim
    rows = np.arange(cache.batch)
    scatter = np.zeros((cache.n_states, cache.batch, h))
    np.add.at(scatter, (cache.lo, rows), (1.0 - cache.taus)[:, None] * dz_blend)
    np.add.at(scatter, (cache.hi, rows), cache.taus[:, None] * dz_blend)

    cell_acc = np.zeros(params.cell.size)
    dz = scatter[-1]
    dc = np.zeros_like(dz)
    for k in range(len(cache.step_caches) - 1, -1, -1):
        grads, dz, dc, _ = lstm_step_backward(cache.step_caches[k], dz, dc)
        cell_acc += grads.flat
        dz = dz + scatter[k]
    enc_grads, d_a0 = mlp_backward(cache.enc_cache, dz)
    return FlowGrads(encoder=enc_grads,
                     cell=ParamBundle.from_flat(params.cell, cell_acc),
                     decoder=dec_grads), d_a0


# ---------------------------------------------------------------------------
# public single-query and per-trajectory entry points
# ---------------------------------------------------------------------------

def flow_forward(params: FlowNetParams, a0: ProjectedState,
                 f_seq: ProjectedInputSequence, t: float) -> ProjectedState:
    """Approximate flow-map output at one query time."""
    out, _ = flow_rollout(params, np.asarray(a0.coeffs)[None, :],
                          f_seq.coeff_profiles[None, :, :], np.array([t]),
                          f_seq.delta)
    return ProjectedState(coeffs=out[0])


def flow_eval_times(params: FlowNetParams, a0: ProjectedState,
                    f_seq: ProjectedInputSequence, times) -> np.ndarray:
    """All query times of one trajectory in a single batched rollout."""
    times = np.asarray(times, dtype=float)
    n = len(times)
    prof = np.broadcast_to(f_seq.coeff_profiles,
                           (n,) + f_seq.coeff_profiles.shape)
    a0_b = np.broadcast_to(np.asarray(a0.coeffs), (n, len(a0.coeffs)))
    out, _ = flow_rollout(params, a0_b, prof, times, f_seq.delta)
    return out


def flow_backward(cache: FlowRolloutCache, d_out) -> FlowGrads:
    grads, _ = flow_rollout_backward(cache, d_out)
    return grads


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_flow_net(path, params: FlowNetParams, extra_meta: dict | None = None) -> None:
    arrays = [(f"enc_{n}", params.encoder[n]) for n in params.encoder.names]
    arrays += [(f"cell_{n}", params.cell[n]) for n in params.cell.names]
    arrays += [(f"dec_{n}", params.decoder[n]) for n in params.decoder.names]
    meta = {
        "kind": "flow",
        "r": params.r,
        "hidden_dim": params.hidden_dim,
        "encoder_widths": mlp_widths(params.encoder),
        "decoder_widths": mlp_widths(params.decoder),
        **(extra_meta or {}),
    }
    save_params(path, ParamBundle(arrays), meta)


def load_flow_net(path) -> tuple:
    bundle, meta = load_params(path)
    if meta.get("kind") != "flow":
        raise ContractViolation(f"{path}: not a flow checkpoint")

    def sub(prefix):
        return ParamBundle([(n[len(prefix):], np.array(bundle[n]))
                            for n in bundle.names if n.startswith(prefix)])

    params = FlowNetParams(encoder=sub("enc_"), cell=sub("cell_"), decoder=sub("dec_"))
    return params, meta
