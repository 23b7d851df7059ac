"""Learned continuous basis functions.

A frozen random-Fourier-feature map feeds a small tanh network whose r
outputs are trained to match POD modes, with an L1 orthonormality penalty
(entrywise) on the discrete Gram of the predictions. The result is a
grid-free basis: it evaluates at any position, on or off the training grid.

Normalization convention: training targets are the POD mode columns (unit
euclidean norm on the N_x sample points). ``eval_basis`` rescales the raw
network output by 1/sqrt(dx) of the POD sampling so the returned values
behave like continuum-orthonormal functions under quadrature inner products.
The raw discrete scale is available via ``eval_basis_discrete``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, TrainingDiverged
from .nn import (
    AdamState,
    ParamBundle,
    adam_update,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_init,
    save_params,
)
from .pod import PodBasis


@dataclass(frozen=True)
class FourierFeatureMap:
    """Frozen random frequencies; output dimension is 2x the row count."""

    b: np.ndarray  # (L, 1)
    std: float

    def __post_init__(self):
        if np.asarray(self.b).ndim != 2 or self.b.shape[1] != 1:
            raise ContractViolation("frequency matrix must be Lx1")

    @property
    def n_features(self) -> int:
        return self.b.shape[0]


def make_feature_map(rng: np.random.Generator, n_features: int = 128,
                     std: float = 0.5) -> FourierFeatureMap:
    return FourierFeatureMap(b=rng.normal(0.0, std, size=(n_features, 1)), std=std)


def fourier_features(x, feature_map: FourierFeatureMap) -> np.ndarray:
    """concat(cos(Bx), sin(Bx)); x may be a scalar or an array of positions."""
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    bx = x.reshape(-1, 1) @ feature_map.b.T
    out = np.concatenate([np.cos(bx), np.sin(bx)], axis=1)
    return out[0] if scalar else out.reshape(x.shape + (2 * feature_map.n_features,))


@dataclass(frozen=True)
class BasisNetParams:
    """Feature map + coordinate network + the normalization bookkeeping."""

    feature_map: FourierFeatureMap
    mlp: ParamBundle
    x_min: float
    x_max: float
    cont_scale: float  # 1/sqrt(dx) of the POD sampling

    @property
    def r(self) -> int:
        layer = 0
        while f"w{layer}" in self.mlp:
            layer += 1
        return self.mlp.shape(f"w{layer - 1}")[0]

    def normalize(self, x):
        return 2.0 * (np.asarray(x, dtype=float) - self.x_min) \
            / (self.x_max - self.x_min) - 1.0


def eval_basis_discrete(x, params: BasisNetParams) -> np.ndarray:
    """Raw network output: the scale of the discrete POD training targets."""
    feats = fourier_features(params.normalize(x), params.feature_map)
    y, _ = mlp_forward(params.mlp, feats)
    return y


def eval_basis(x, params: BasisNetParams) -> np.ndarray:
    """Continuum-scale basis values at arbitrary positions (grid-free)."""
    return params.cont_scale * eval_basis_discrete(x, params)


# ---------------------------------------------------------------------------
# loss: ||phi - targets||_1 + ||phi^T phi - I||_1, both entrywise sums
# ---------------------------------------------------------------------------

def basis_loss(phi_matrix: np.ndarray, pod_targets: np.ndarray) -> float:
    phi_matrix = np.asarray(phi_matrix, dtype=float)
    pod_targets = np.asarray(pod_targets, dtype=float)
    if phi_matrix.shape != pod_targets.shape:
        raise ContractViolation("prediction and target shapes differ")
    r = phi_matrix.shape[1]
    gram = phi_matrix.T @ phi_matrix
    return float(np.sum(np.abs(phi_matrix - pod_targets))
                 + np.sum(np.abs(gram - np.eye(r))))


def basis_loss_grad(phi_matrix: np.ndarray, pod_targets: np.ndarray) -> tuple:
    """(loss, d loss / d phi); the subgradient at kinks uses sign(0)=0."""
    phi_matrix = np.asarray(phi_matrix, dtype=float)
    pod_targets = np.asarray(pod_targets, dtype=float)
    if phi_matrix.shape != pod_targets.shape:
        raise ContractViolation("prediction and target shapes differ")
    r = phi_matrix.shape[1]
    diff = phi_matrix - pod_targets
    gram_err = phi_matrix.T @ phi_matrix - np.eye(r)
    loss = float(np.sum(np.abs(diff)) + np.sum(np.abs(gram_err)))
    s = np.sign(gram_err)
    dphi = np.sign(diff) + phi_matrix @ (s + s.T)
    return loss, dphi


# ---------------------------------------------------------------------------
# training (stage 1)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisTrainConfig:
    """Full-batch Adam on the basis loss; the target matrix is tiny.

    The entrywise-L1 objective gives constant-magnitude sign gradients, so
    the achievable floor scales with the learning rate; halving on plateau
    (``decay_patience`` epochs without a new best) is what lets the fit
    sharpen. Training stops after ``patience`` epochs without improvement.
    """

    x_min: float = -10.0
    x_max: float = 10.0
    n_features: int = 128
    feature_std: float = 0.5
    hidden: tuple = (100, 100, 100, 100)
    lr: float = 1e-3
    max_epochs: int = 5000
    decay_patience: int = 100
    patience: int = 700


@dataclass
class BasisTrainResult:
    params: BasisNetParams
    losses: list
    best_loss: float
    best_epoch: int


def train_basis(pod_basis: PodBasis, train_cfg: BasisTrainConfig = BasisTrainConfig(),
                seed: int = 0, grid_points: np.ndarray | None = None) -> BasisTrainResult:
    """Fit the coordinate network to POD modes; deterministic per seed.

    Keeps the best-loss parameters seen, stopping early once ``patience``
    epochs pass without improvement.
    """
    points = pod_basis.spatial_points if grid_points is None else np.asarray(grid_points)
    targets = pod_basis.modes
    if len(points) != targets.shape[0]:
        raise ContractViolation("training points and POD targets disagree")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    feature_map = make_feature_map(rng, train_cfg.n_features, train_cfg.feature_std)
    widths = [2 * train_cfg.n_features, *train_cfg.hidden, pod_basis.r]
    mlp = mlp_init(rng, widths)

    span = train_cfg.x_max - train_cfg.x_min
    x_norm = 2.0 * (points - train_cfg.x_min) / span - 1.0
    feats = fourier_features(x_norm, feature_map)
    dx_pod = span / len(points)

    state = AdamState.for_bundle(mlp, lr=train_cfg.lr)
    losses = []
    best_loss, best_epoch, best_flat = np.inf, -1, np.array(mlp.flat)
    since_decay = 0
    for epoch in range(train_cfg.max_epochs):
        phi, cache = mlp_forward(mlp, feats)
        loss, dphi = basis_loss_grad(phi, targets)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"basis loss non-finite at epoch {epoch}")
        losses.append(loss)
        if loss < best_loss:
            best_loss, best_epoch = loss, epoch
            best_flat = np.array(mlp.flat)
            since_decay = 0
        else:
            if epoch - best_epoch >= train_cfg.patience:
                break
            since_decay += 1
            if since_decay >= train_cfg.decay_patience:
                state.lr *= 0.5
                since_decay = 0
        grads, _ = mlp_backward(cache, dphi)
        mlp = adam_update(state, mlp, grads)
    mlp = ParamBundle.from_flat(mlp, best_flat)
    params = BasisNetParams(feature_map=feature_map, mlp=mlp,
                            x_min=train_cfg.x_min, x_max=train_cfg.x_max,
                            cont_scale=1.0 / np.sqrt(dx_pod))
    return BasisTrainResult(params=params, losses=losses,
                            best_loss=best_loss, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# serialization (shared checkpoint container)
# ---------------------------------------------------------------------------

def save_basis_net(path, params: BasisNetParams, extra_meta: dict | None = None) -> None:
    arrays = [("feature_b", params.feature_map.b)]
    arrays += [(f"mlp_{n}", params.mlp[n]) for n in params.mlp.names]
    meta = {
        "kind": "basis",
        "feature_std": params.feature_map.std,
        "x_min": params.x_min,
        "x_max": params.x_max,
        "cont_scale": params.cont_scale,
        "r": params.r,
        **(extra_meta or {}),
    }
    save_params(path, ParamBundle(arrays), meta)


def load_basis_net(path) -> tuple:
    bundle, meta = load_params(path)
    if meta.get("kind") != "basis":
        raise ContractViolation(f"{path}: not a basis checkpoint")
    feature_map = FourierFeatureMap(b=np.array(bundle["feature_b"]),
                                    std=meta["feature_std"])
    mlp_items = [(n[len("mlp_"):], np.array(bundle[n])) for n in bundle.names
                 if n.startswith("mlp_")]
    params = BasisNetParams(feature_map=feature_map, mlp=ParamBundle(mlp_items),
                            x_min=meta["x_min"], x_max=meta["x_max"],
                            cont_scale=meta["cont_scale"])
    return params, meta


def with_cont_scale(params: BasisNetParams, cont_scale: float) -> BasisNetParams:
    return replace(params, cont_scale=cont_scale)
