"""Nonlinear output reconstruction and the assembled end-to-end surrogate.

A prediction at (x, t) is the readout network applied to the elementwise
product of the flow-map coefficients at t and the learned basis values at x.
Both factors are grid-free, so the surrogate evaluates at arbitrary points.
The readout and flow nets are the trainable stage-2 parts; the basis enters
as a frozen constant and receives no gradients here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BasisNetParams, eval_basis, load_basis_net, save_basis_net
from .errors import ContractViolation
from .flow import (
    FlowNetParams,
    flow_rollout,
    flow_rollout_backward,
    load_flow_net,
    save_flow_net,
)
from .nn import (
    ParamBundle,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_init,
    mlp_widths,
    save_params,
)
from .pod import ProjectedState, project, project_input_signal
from .sim import Grid1D, PiecewiseConstantInput


# ---------------------------------------------------------------------------
# readout network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReconNetParams:
    """Scalar readout h_u of the coefficient-basis Hadamard product."""

    mlp: ParamBundle

    def __post_init__(self):
        if mlp_widths(self.mlp)[-1] != 1:
            raise ContractViolation("readout must produce one scalar")

    @property
    def r(self) -> int:
        return mlp_widths(self.mlp)[0]


def recon_init(rng: np.random.Generator, r: int, hidden: tuple = (50, 50)) -> ReconNetParams:
    return ReconNetParams(mlp=mlp_init(rng, [r, *hidden, 1]))


def reconstruct_output(recon: ReconNetParams, a_hat, phi_x) -> float:
    """u_hat(x, t) = h_u(a_hat(t) * phi_hat(x)), elementwise product."""
    a = a_hat.coeffs if isinstance(a_hat, ProjectedState) else np.asarray(a_hat, float)
    phi = np.asarray(phi_x, dtype=float)
    if a.shape != phi.shape or a.ndim != 1:
        raise ContractViolation("coefficients and basis values differ in length")
    y, _ = mlp_forward(recon.mlp, a * phi)
    return float(y[0])


# ---------------------------------------------------------------------------
# assembled model
# ---------------------------------------------------------------------------

@dataclass
class SurrogateModel:
    """Basis + flow + readout, with the grid and hold period they were fit on."""

    basis: BasisNetParams
    flow: FlowNetParams
    recon: ReconNetParams
    grid: Grid1D
    delta: float
    manifest: dict

    def __post_init__(self):
        if not (self.basis.r == self.flow.r == self.recon.r):
            raise ContractViolation(
                f"rank mismatch: basis {self.basis.r}, flow {self.flow.r}, "
                f"recon {self.recon.r}")

    @property
    def r(self) -> int:
        return self.basis.r


def project_initial_state(model: SurrogateModel, u0: np.ndarray) -> ProjectedState:
    """a0 through the learned basis on the model grid."""
    u0 = np.asarray(u0, dtype=float)
    if u0.shape != (model.grid.n_points,):
        raise ContractViolation("u0 does not live on the model grid")
    phi_grid = eval_basis(model.grid.nodes, model.basis)
    return project(u0, phi_grid, model.grid.quad_weights)


def project_input(model: SurrogateModel, input: PiecewiseConstantInput):
    phi_grid = eval_basis(model.grid.nodes, model.basis)
    return project_input_signal(input, phi_grid, model.grid.quad_weights)


def predict(model: SurrogateModel, u0: np.ndarray, input: PiecewiseConstantInput,
            queries) -> np.ndarray:
    """u_hat at arbitrary (x, t) pairs; flow coefficients shared per distinct t.

    ``queries`` is an array-like of shape (Q, 2) holding (x, t) rows. Off-grid
    positions and t beyond the training horizon are fine as long as the input
    signal covers every query time.
    """
    queries = np.asarray(queries, dtype=float)
    if queries.ndim != 2 or queries.shape[1] != 2:
        raise ContractViolation("queries must be (Q, 2) rows of (x, t)")
    a0 = project_initial_state(model, u0)
    f_seq = project_input(model, input)
    xs, ts = queries[:, 0], queries[:, 1]
    unique_t, inverse = np.unique(ts, return_inverse=True)
    n = len(unique_t)
    prof = np.broadcast_to(f_seq.coeff_profiles, (n,) + f_seq.coeff_profiles.shape)
    a0_b = np.broadcast_to(a0.coeffs, (n, model.r))
    a_hat_unique, _ = flow_rollout(model.flow, a0_b, prof, unique_t, f_seq.delta)
    a_hat = a_hat_unique[inverse]
    phi = eval_basis(xs, model.basis)
    y, _ = mlp_forward(model.recon.mlp, a_hat * phi)
    return y[:, 0]


def predict_grid(model: SurrogateModel, u0: np.ndarray,
                 input: PiecewiseConstantInput, xs, times) -> np.ndarray:
    """Dense space-time evaluation; returns (len(times), len(xs)).

    Exploits the lattice structure: the basis is evaluated once per position
    and the flow once per time, the readout once over the product lattice.
    """
    xs = np.asarray(xs, dtype=float)
    times = np.asarray(times, dtype=float)
    a0 = project_initial_state(model, u0)
    f_seq = project_input(model, input)
    n = len(times)
    prof = np.broadcast_to(f_seq.coeff_profiles, (n,) + f_seq.coeff_profiles.shape)
    a0_b = np.broadcast_to(a0.coeffs, (n, model.r))
    a_hat, _ = flow_rollout(model.flow, a0_b, prof, times, f_seq.delta)
    phi = eval_basis(xs, model.basis)
    prod = a_hat[:, None, :] * phi[None, :, :]
    y, _ = mlp_forward(model.recon.mlp, prod)
    return y[..., 0]


# ---------------------------------------------------------------------------
# stage-2 training plumbing: joint forward/backward over (trajectory, time)
# query batches at fixed evaluation points, basis frozen
# ---------------------------------------------------------------------------

@dataclass
class BatchCache:
    flow_cache: object
    recon_cache: object
    phi_pts: np.ndarray
    a_hat: np.ndarray


def batch_forward(flow: FlowNetParams, recon: ReconNetParams, phi_pts: np.ndarray,
                  a0s: np.ndarray, profiles: np.ndarray, times, delta: float) -> tuple:
    """Predictions (B, P) for B queries at P shared points; returns cache."""
    a_hat, flow_cache = flow_rollout(flow, a0s, profiles, times, delta)
    prod = a_hat[:, None, :] * phi_pts[None, :, :]
    y, recon_cache = mlp_forward(recon.mlp, prod)
    cache = BatchCache(flow_cache=flow_cache, recon_cache=recon_cache,
                       phi_pts=phi_pts, a_hat=a_hat)
    return y[..., 0], cache


def batch_backward(cache: BatchCache, d_y) -> tuple:
    """Gradients of the batch predictions: (FlowGrads, readout grads).

    The basis values are constants here, so stage-2 steps leave the basis
    checkpoint untouched.
    """
    d_y = np.asarray(d_y, dtype=float)
    recon_grads, d_prod = mlp_backward(cache.recon_cache, d_y[..., None])
    d_a_hat = np.sum(d_prod * cache.phi_pts[None, :, :], axis=1)
    flow_grads, _ = flow_rollout_backward(cache.flow_cache, d_a_hat)
    return flow_grads, recon_grads


# ---------------------------------------------------------------------------
# model directory: three checkpoints plus a JSON manifest
# ---------------------------------------------------------------------------

def save_recon_net(path, params: ReconNetParams, extra_meta: dict | None = None) -> None:
    meta = {"kind": "recon", "widths": mlp_widths(params.mlp), **(extra_meta or {})}
    save_params(path, params.mlp, meta)


def load_recon_net(path) -> tuple:
    bundle, meta = load_params(path)
    if meta.get("kind") != "recon":
        raise ContractViolation(f"{path}: not a readout checkpoint")
    return ReconNetParams(mlp=bundle), meta


def save_model(model: SurrogateModel, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_basis_net(out / "basis.rxw", model.basis)
    save_flow_net(out / "flow.rxw", model.flow)
    save_recon_net(out / "recon.rxw", model.recon)
    manifest = {
        "r": model.r,
        "delta": model.delta,
        "grid": {"x_min": model.grid.x_min, "x_max": model.grid.x_max,
                 "n_points": model.grid.n_points},
        **model.manifest,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_model(in_dir) -> SurrogateModel:
    src = Path(in_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    basis, _ = load_basis_net(src / "basis.rxw")
    flow, _ = load_flow_net(src / "flow.rxw")
    recon, _ = load_recon_net(src / "recon.rxw")
    grid = Grid1D(**manifest["grid"])
    extra = {k: v for k, v in manifest.items() if k not in ("r", "delta", "grid")}
    return SurrogateModel(basis=basis, flow=flow, recon=recon, grid=grid,
                          delta=manifest["delta"], manifest=extra)
