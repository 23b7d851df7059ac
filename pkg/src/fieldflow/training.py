"""Two-stage training, transfer fine-tuning, and trajectory-level evaluation.

Stage 2 fits the flow and readout networks jointly with Adam on randomly
time-sampled snapshots: each epoch walks minibatches of (trajectory, time)
pairs evaluated at a fixed spatial sensor lattice, the learning rate halves
whenever the validation loss plateaus, and training stops after a long
plateau, returning the best-validation weights. The baseline trains through
the same harness with teacher forcing (each window starts from the recorded
state) and is scored autoregressively. Evaluation reduces a trajectory to
one relative l2 error over its full space-time sensor lattice.

Minibatch members are evaluated together as one vectorized call, so the
gradient reduction is a deterministic sum regardless of worker count.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisNetParams, BasisTrainConfig, BasisTrainResult, eval_basis, train_basis
from .deeponet import (
    DeepOnetParams,
    don_batch_backward,
    don_batch_forward,
    don_init,
    don_rollout,
    input_windows,
)
from .errors import ContractViolation, TrainingDiverged
from .flow import FlowNetParams, flow_init
from .nn import AdamState, adam_update, mlp_widths
from .operator import (
    ReconNetParams,
    SurrogateModel,
    batch_backward,
    batch_forward,
    predict,
    predict_grid,
    recon_init,
)
from .pod import PodBasis, assemble_snapshots, pod, project_batch, uniform_subsample
from .sim import Dataset, Grid1D, Trajectory


# ---------------------------------------------------------------------------
# configuration and schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Optimizer schedule plus the stage-2 network sizes."""

    batch_size: int = 128
    lr0: float = 1.2e-4
    lr_decay: float = 0.5
    plateau: int = 5          # epochs without a new best before halving
    early_stop: int = 30      # epochs without a new best before stopping
    n_time_samples: int = 200  # per trajectory, drawn once per run
    split: tuple = (0.7, 0.2, 0.1)
    seed: int = 0
    max_epochs: int = 400
    n_spatial: int = 100      # sensor lattice for losses and metrics
    hidden_dim: int = 250
    encoder_hidden: tuple = (500, 500)
    decoder_hidden: tuple = (250, 250, 250)
    recon_hidden: tuple = (50, 50)

    def __post_init__(self):
        if min(self.batch_size, self.plateau, self.early_stop,
               self.n_time_samples, self.max_epochs, self.n_spatial) < 1:
            raise ContractViolation("hyperparameters must be positive")
        if self.lr0 <= 0 or not 0 < self.lr_decay < 1:
            raise ContractViolation("need lr0 > 0 and 0 < lr_decay < 1")
        if len(self.split) != 3 or min(self.split) < 0 or \
                abs(sum(self.split) - 1.0) > 1e-9:
            raise ContractViolation("split fractions must be >= 0 and sum to 1")


@dataclass
class PlateauSchedule:
    """Halve on a short validation plateau, stop on a long one.

    An epoch counts toward both plateaus unless it sets a new best loss;
    halving resets only the decay counter, so the stop counter keeps
    running through decays.
    """

    decay: float
    plateau: int
    early_stop: int
    best: float = np.inf
    since_improve: int = 0
    since_decay: int = 0

    def update(self, val_loss: float) -> tuple:
        """(decayed, stop) flags after observing one epoch's validation loss."""
        if val_loss < self.best:
            self.best = val_loss
            self.since_improve = 0
            self.since_decay = 0
            return False, False
        self.since_improve += 1
        self.since_decay += 1
        decayed = self.since_decay >= self.plateau
        if decayed:
            self.since_decay = 0
        return decayed, self.since_improve >= self.early_stop


# ---------------------------------------------------------------------------
# sampling and splitting
# ---------------------------------------------------------------------------

def lhs_times(horizon: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified draw: exactly one uniform sample per subinterval, sorted."""
    if n < 1:
        raise ContractViolation("need at least one time sample")
    width = horizon / n
    return np.sort(width * np.arange(n) + rng.uniform(0.0, width, size=n))


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split_dataset(n: int, split=(0.7, 0.2, 0.1), seed: int = 0) -> SplitIndices:
    """Disjoint train/val/test indices; a pure function of (seed, n)."""
    n_val = max(int(round(split[1] * n)), 1)
    n_test = max(int(round(split[2] * n)), 1)
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ContractViolation(f"{n} trajectories are too few to split")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(train=perm[:n_train],
                        val=perm[n_train:n_train + n_val],
                        test=perm[n_train + n_val:])


def subset(dataset: Dataset, indices) -> Dataset:
    """Shallow view of selected trajectories; metadata carries over."""
    return Dataset(grid=dataset.grid,
                   trajectories=[dataset.trajectories[i] for i in indices],
                   meta=dataset.meta)


def _seed_tree(seed: int, n_traj: int):
    init_ss, times_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(3)
    return init_ss, times_ss.spawn(n_traj), shuffle_ss


def _check_uniform(dataset: Dataset) -> Trajectory:
    first = dataset.trajectories[0]
    for traj in dataset.trajectories:
        if traj.states.shape != first.states.shape or \
                traj.input.profiles.shape != first.input.profiles.shape:
            raise ContractViolation("trajectories must share one configuration")
    return first


def _sample_steps(times: np.ndarray, n_samples: int, rng) -> np.ndarray:
    """Stratified times snapped to the nearest stored step (truth is exact there)."""
    drawn = lhs_times(float(times[-1]), n_samples, rng)
    dt = times[1] - times[0]
    return np.clip(np.round(drawn / dt).astype(int), 0, len(times) - 1)


# ---------------------------------------------------------------------------
# stage 1: basis from the training split
# ---------------------------------------------------------------------------

def train_stage1(dataset: Dataset, r: int, config: TrainConfig,
                 basis_cfg: BasisTrainConfig | None = None,
                 time_stride: int | None = None) -> tuple:
    """Snapshot POD on the training split, then the coordinate-network fit.

    Returns (PodBasis, BasisTrainResult). The basis config's spatial bounds
    are forced to the dataset grid so the continuum rescaling is consistent.
    """
    split = split_dataset(dataset.n, config.split, config.seed)
    sel = slice(None, None, time_stride) if time_stride else None
    snaps = assemble_snapshots(subset(dataset, split.train), config.n_spatial, sel)
    basis = pod(snaps, r)
    if basis_cfg is None:
        basis_cfg = BasisTrainConfig()
    basis_cfg = dataclasses.replace(basis_cfg, x_min=dataset.grid.x_min,
                                    x_max=dataset.grid.x_max)
    return basis, train_basis(basis, basis_cfg, seed=config.seed)


# ---------------------------------------------------------------------------
# stage 2: flow + readout on the projected dataset
# ---------------------------------------------------------------------------

@dataclass
class _Stage2Data:
    phi_pts: np.ndarray    # (n_spatial, r) frozen basis at the sensor lattice
    a0: np.ndarray         # (N, r)
    coeffs: np.ndarray     # (N, K_profiles, r)
    truth: np.ndarray      # (N, n_steps + 1, n_spatial)
    times: np.ndarray      # (n_steps + 1,) shared stored times
    delta: float


def _prepare_stage2(dataset: Dataset, basisnet: BasisNetParams,
                    n_spatial: int) -> _Stage2Data:
    first = _check_uniform(dataset)
    grid = dataset.grid
    idx, pts = uniform_subsample(grid, n_spatial)
    w = grid.quad_weights
    phi_grid = eval_basis(grid.nodes, basisnet)
    a0 = np.stack([project_batch(t.u0, phi_grid, w) for t in dataset.trajectories])
    coeffs = np.stack([project_batch(t.input.profiles, phi_grid, w)
                       for t in dataset.trajectories])
    truth = np.stack([t.states[:, idx] for t in dataset.trajectories])
    return _Stage2Data(phi_pts=eval_basis(pts, basisnet), a0=a0, coeffs=coeffs,
                       truth=truth, times=first.times.copy(),
                       delta=first.input.delta)


def _surrogate_batches(flow, recon, data, traj_idx, steps, batch_size,
                       order=None, states=None):
    """Yield (loss_sum, count) per batch; update parameters when states given."""
    order = np.arange(len(traj_idx)) if order is None else order
    for lo in range(0, len(order), batch_size):
        rows = order[lo:lo + batch_size]
        ti, si = traj_idx[rows], steps[rows]
        y, cache = batch_forward(flow, recon, data.phi_pts, data.a0[ti],
                                 data.coeffs[ti], data.times[si], data.delta)
        resid = y - data.truth[ti, si]
        if states is not None:
            flow_grads, recon_grads = batch_backward(cache, (2.0 / resid.size) * resid)
            st_enc, st_cell, st_dec, st_rec = states
            flow = FlowNetParams(
                encoder=adam_update(st_enc, flow.encoder, flow_grads.encoder),
                cell=adam_update(st_cell, flow.cell, flow_grads.cell),
                decoder=adam_update(st_dec, flow.decoder, flow_grads.decoder))
            recon = ReconNetParams(mlp=adam_update(st_rec, recon.mlp, recon_grads))
        yield float(np.sum(resid ** 2)), resid.size, flow, recon


def _loss_over(flow, recon, data, traj_idx, steps, batch_size) -> float:
    total = count = 0
    for sq, n, _, _ in _surrogate_batches(flow, recon, data, traj_idx, steps,
                                          batch_size):
        total, count = total + sq, count + n
    return total / count


@dataclass
class TrainResult:
    model: SurrogateModel
    curves: np.ndarray        # rows (epoch, train_loss, val_loss, lr)
    best_epoch: int
    best_val: float
    split: SplitIndices


def write_curves(path, curves) -> None:
    lines = ["epoch,train_loss,val_loss,lr"]
    for epoch, train_loss, val_loss, lr in curves:
        lines.append(f"{int(epoch)},{float(train_loss)!r},"
                     f"{float(val_loss)!r},{float(lr)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _sample_plan(split_part, per_traj_steps):
    traj_idx = np.concatenate([np.full(len(per_traj_steps[i]), i)
                               for i in split_part])
    steps = np.concatenate([per_traj_steps[i] for i in split_part])
    return traj_idx, steps


def _run_stage2(dataset: Dataset, basisnet: BasisNetParams, config: TrainConfig,
                flow: FlowNetParams, recon: ReconNetParams,
                curves_path=None) -> TrainResult:
    split = split_dataset(dataset.n, config.split, config.seed)
    _, time_children, shuffle_ss = _seed_tree(config.seed, dataset.n)
    data = _prepare_stage2(dataset, basisnet, config.n_spatial)
    per_traj_steps = {
        int(i): _sample_steps(data.times, config.n_time_samples,
                              np.random.default_rng(time_children[i]))
        for i in np.concatenate([split.train, split.val])}
    train_ti, train_steps = _sample_plan(split.train, per_traj_steps)
    val_ti, val_steps = _sample_plan(split.val, per_traj_steps)

    shuffle_rng = np.random.default_rng(shuffle_ss)
    states = tuple(AdamState.for_bundle(b, config.lr0) for b in
                   (flow.encoder, flow.cell, flow.decoder, recon.mlp))
    sched = PlateauSchedule(decay=config.lr_decay, plateau=config.plateau,
                            early_stop=config.early_stop)
    lr = config.lr0
    curves = []
    best = (np.inf, 0, flow, recon)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_ti))
        total = count = 0
        for sq, n, flow, recon in _surrogate_batches(
                flow, recon, data, train_ti, train_steps, config.batch_size,
                order, states):
            total, count = total + sq, count + n
        train_loss = total / count
        val_loss = _loss_over(flow, recon, data, val_ti, val_steps,
                              config.batch_size)
        curves.append((epoch, train_loss, val_loss, lr))
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        if val_loss < best[0]:
            best = (val_loss, epoch, flow, recon)
        decayed, stop = sched.update(val_loss)
        if decayed:
            lr *= config.lr_decay
            for st in states:
                st.lr = lr
        if stop:
            break

    best_val, best_epoch, flow, recon = best
    model = SurrogateModel(basis=basisnet, flow=flow, recon=recon,
                           grid=dataset.grid, delta=data.delta,
                           manifest={"best_epoch": best_epoch,
                                     "best_val": best_val,
                                     "n_spatial": config.n_spatial,
                                     "seed": config.seed})
    curves = np.asarray(curves, dtype=float)
    if curves_path is not None:
        write_curves(curves_path, curves)
    return TrainResult(model=model, curves=curves, best_epoch=best_epoch,
                       best_val=best_val, split=split)


def train_stage2(dataset: Dataset, basisnet: BasisNetParams,
                 config: TrainConfig = TrainConfig(),
                 curves_path=None) -> TrainResult:
    """Fit flow + readout from fresh weights against the frozen basis."""
    init_ss, _, _ = _seed_tree(config.seed, dataset.n)
    rng = np.random.default_rng(init_ss)
    flow = flow_init(rng, basisnet.r, config.hidden_dim, config.encoder_hidden,
                     config.decoder_hidden)
    recon = recon_init(rng, basisnet.r, config.recon_hidden)
    return _run_stage2(dataset, basisnet, config, flow, recon, curves_path)


def fine_tune(pretrained: SurrogateModel, small_dataset: Dataset,
              config: TrainConfig = TrainConfig(),
              basis_cfg: BasisTrainConfig | None = None,
              time_stride: int | None = None, curves_path=None) -> TrainResult:
    """Adapt a trained model to new dynamics from a small dataset.

    The basis is retrained on the new data's POD (cheap); flow and readout
    weights start from the pretrained model instead of fresh draws. Sampling
    and shuffling match a from-scratch run with the same config, so loss
    curves are directly comparable.
    """
    if small_dataset.grid != pretrained.grid:
        raise ContractViolation("small dataset lives on a different grid")
    base = pretrained.basis
    if basis_cfg is None:
        basis_cfg = BasisTrainConfig(
            n_features=base.feature_map.n_features,
            feature_std=base.feature_map.std,
            hidden=tuple(mlp_widths(base.mlp)[1:-1]))
    _, basis_res = train_stage1(small_dataset, pretrained.r, config, basis_cfg,
                                time_stride)
    flow0 = FlowNetParams(encoder=pretrained.flow.encoder.copy(),
                          cell=pretrained.flow.cell.copy(),
                          decoder=pretrained.flow.decoder.copy())
    recon0 = ReconNetParams(mlp=pretrained.recon.mlp.copy())
    return _run_stage2(small_dataset, basis_res.params, config, flow0, recon0,
                       curves_path)


# ---------------------------------------------------------------------------
# baseline training (teacher forcing on window starts)
# ---------------------------------------------------------------------------

@dataclass
class BaselineTrainResult:
    params: DeepOnetParams
    curves: np.ndarray
    best_epoch: int
    best_val: float
    split: SplitIndices


@dataclass
class _BaselineData:
    pts: np.ndarray          # (n_spatial,)
    window_u0: np.ndarray    # (N, n_windows, n_spatial) recorded window starts
    window_f: np.ndarray     # (N, n_windows, n_spatial)
    truth: np.ndarray        # (N, n_steps + 1, n_spatial)
    times: np.ndarray
    window: float


def _prepare_baseline(dataset: Dataset, n_spatial: int, window: float
                      ) -> _BaselineData:
    first = _check_uniform(dataset)
    idx, pts = uniform_subsample(dataset.grid, n_spatial)
    truth = np.stack([t.states[:, idx] for t in dataset.trajectories])
    window_f = np.stack([input_windows(t.input, window)[:, idx]
                         for t in dataset.trajectories])
    dt = first.times[1] - first.times[0]
    starts = np.round(np.arange(window_f.shape[1]) * window / dt).astype(int)
    if np.any(np.abs(first.times[starts] - np.arange(len(starts)) * window) > 1e-9):
        raise ContractViolation("window boundaries must land on stored steps")
    return _BaselineData(pts=pts, window_u0=truth[:, starts], window_f=window_f,
                         truth=truth, times=first.times.copy(), window=window)


def _baseline_batches(params, data, traj_idx, steps, batch_size,
                      order=None, states=None):
    n_win = data.window_f.shape[1]
    order = np.arange(len(traj_idx)) if order is None else order
    for lo in range(0, len(order), batch_size):
        rows = order[lo:lo + batch_size]
        ti, si = traj_idx[rows], steps[rows]
        t = data.times[si]
        wi = np.minimum((t / data.window).astype(int), n_win - 1)
        t_local = np.clip(t - wi * data.window, 0.0, data.window)
        xs = np.broadcast_to(data.pts, (len(rows), len(data.pts)))
        y, cache = don_batch_forward(params, data.window_u0[ti, wi],
                                     data.window_f[ti, wi], xs, t_local)
        resid = y - data.truth[ti, si]
        if states is not None:
            grads = don_batch_backward(cache, (2.0 / resid.size) * resid)
            branch, trunk, recon = (adam_update(st, bundle, g) for st, bundle, g
                                    in zip(states, (params.branch, params.trunk,
                                                    params.recon), grads))
            params = dataclasses.replace(params, branch=branch, trunk=trunk,
                                         recon=recon)
        yield float(np.sum(resid ** 2)), resid.size, params


def _baseline_loss(params, data, traj_idx, steps, batch_size) -> float:
    total = count = 0
    for sq, n, _ in _baseline_batches(params, data, traj_idx, steps, batch_size):
        total, count = total + sq, count + n
    return total / count


def train_baseline(dataset: Dataset, config: TrainConfig, reference_count: int,
                   window: float | None = None, curves_path=None,
                   r_b: int = 700) -> BaselineTrainResult:
    """Teacher-forced baseline fit sized to parameter parity with a reference.

    Each training sample evaluates one window from the recorded state at the
    window start; feeding predictions forward happens only at evaluation.
    """
    if window is None:
        try:
            window = dataset.meta["delta"] * dataset.meta["block_len"]
        except KeyError:
            raise ContractViolation("window not given and absent from metadata")
    split = split_dataset(dataset.n, config.split, config.seed)
    init_ss, time_children, shuffle_ss = _seed_tree(config.seed, dataset.n)
    data = _prepare_baseline(dataset, config.n_spatial, float(window))
    per_traj_steps = {
        int(i): _sample_steps(data.times, config.n_time_samples,
                              np.random.default_rng(time_children[i]))
        for i in np.concatenate([split.train, split.val])}
    train_ti, train_steps = _sample_plan(split.train, per_traj_steps)
    val_ti, val_steps = _sample_plan(split.val, per_traj_steps)

    params = don_init(np.random.default_rng(init_ss), reference_count,
                      data.pts, r_b=r_b, recon_hidden=config.recon_hidden,
                      window=float(window), x_min=dataset.grid.x_min,
                      x_max=dataset.grid.x_max)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    states = tuple(AdamState.for_bundle(b, config.lr0) for b in
                   (params.branch, params.trunk, params.recon))
    sched = PlateauSchedule(decay=config.lr_decay, plateau=config.plateau,
                            early_stop=config.early_stop)
    lr = config.lr0
    curves = []
    best = (np.inf, 0, params)
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(train_ti))
        total = count = 0
        for sq, n, params in _baseline_batches(params, data, train_ti,
                                               train_steps, config.batch_size,
                                               order, states):
            total, count = total + sq, count + n
        train_loss = total / count
        val_loss = _baseline_loss(params, data, val_ti, val_steps,
                                  config.batch_size)
        curves.append((epoch, train_loss, val_loss, lr))
        if not np.isfinite(train_loss) or not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        if val_loss < best[0]:
            best = (val_loss, epoch, params)
        decayed, stop = sched.update(val_loss)
        if decayed:
            lr *= config.lr_decay
            for st in states:
                st.lr = lr
        if stop:
            break

    best_val, best_epoch, params = best
    curves = np.asarray(curves, dtype=float)
    if curves_path is not None:
        write_curves(curves_path, curves)
    return BaselineTrainResult(params=params, curves=curves,
                               best_epoch=best_epoch, best_val=best_val,
                               split=split)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def relative_l2(truth, pred) -> float:
    """Frobenius norm of the error over the norm of the truth."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape:
        raise ContractViolation(f"shape mismatch {truth.shape} vs {pred.shape}")
    denom = float(np.linalg.norm(truth))
    if denom == 0.0:
        raise ContractViolation("relative error undefined for zero truth")
    return float(np.linalg.norm(pred - truth)) / denom


def _lattice_truth(traj: Trajectory, grid: Grid1D, queries: np.ndarray
                   ) -> np.ndarray:
    """Recorded field values at queries that lie on the stored lattice."""
    xi = np.round((queries[:, 0] - grid.x_min) / grid.dx).astype(int)
    if np.any(np.abs(grid.x_min + xi * grid.dx - queries[:, 0]) > 1e-9):
        raise ContractViolation("query position off the stored grid")
    dt = traj.times[1] - traj.times[0]
    si = np.round(queries[:, 1] / dt).astype(int)
    if np.any(si < 0) or np.any(si >= len(traj.times)) or \
            np.any(np.abs(traj.times[np.clip(si, 0, len(traj.times) - 1)]
                          - queries[:, 1]) > 1e-9):
        raise ContractViolation("query time off the stored steps")
    return traj.states[si, xi % grid.n_points]


def _sensor_indices(grid: Grid1D, points: np.ndarray) -> np.ndarray:
    idx = np.round((points - grid.x_min) / grid.dx).astype(int)
    if np.any(np.abs(grid.x_min + idx * grid.dx - points) > 1e-9):
        raise ContractViolation("sensor points are not grid nodes")
    return idx % grid.n_points


def empirical_loss(model, batch, grid: Grid1D | None = None) -> float:
    """Mean squared prediction error over (trajectory, queries) pairs.

    Queries must lie on the stored space-time lattice so the truth is exact.
    `model` is a surrogate, baseline weights, or any callable
    (trajectory, queries) -> predictions.
    """
    if grid is None and isinstance(model, SurrogateModel):
        grid = model.grid
    if grid is None:
        raise ContractViolation("grid required to look up recorded truth")
    total, count = 0.0, 0
    for traj, queries in batch:
        q = np.asarray(queries, dtype=float)
        if q.ndim != 2 or q.shape[1] != 2:
            raise ContractViolation("queries must be (n, 2) rows of (x, t)")
        truth = _lattice_truth(traj, grid, q)
        if isinstance(model, SurrogateModel):
            pred = predict(model, traj.u0, traj.input, q)
        elif isinstance(model, DeepOnetParams):
            idx = _sensor_indices(grid, model.sensor_points)
            pred = don_rollout(model, traj.u0[idx],
                               input_windows(traj.input, model.window)[:, idx], q)
        elif callable(model):
            pred = np.asarray(model(traj, q), dtype=float)
        else:
            raise ContractViolation(f"cannot evaluate {type(model).__name__}")
        total += float(np.sum((pred - truth) ** 2))
        count += q.shape[0]
    if count == 0:
        raise ContractViolation("empty batch")
    return total / count


# ---------------------------------------------------------------------------
# evaluation reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    """Per-trajectory relative l2 errors over one evaluation horizon."""

    trajectory_ids: np.ndarray
    errors: np.ndarray
    horizon: float

    def __post_init__(self):
        ids = np.asarray(self.trajectory_ids, dtype=int)
        errors = np.asarray(self.errors, dtype=float)
        if ids.shape != errors.shape or errors.ndim != 1:
            raise ContractViolation("ids and errors must be matching 1-D arrays")
        if errors.size and (not np.all(np.isfinite(errors)) or errors.min() < 0):
            raise ContractViolation("errors must be finite and non-negative")
        object.__setattr__(self, "trajectory_ids", ids)
        object.__setattr__(self, "errors", errors)

    @property
    def mean(self) -> float:
        return float(np.mean(self.errors))

    @property
    def std(self) -> float:
        return float(np.std(self.errors))

    @property
    def quartiles(self) -> np.ndarray:
        return np.percentile(self.errors, [25, 50, 75])

    def to_csv(self, path) -> None:
        lines = ["trajectory_id,rel_l2"]
        for i, e in zip(self.trajectory_ids, self.errors):
            lines.append(f"{int(i)},{float(e)!r}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _eval_window(traj: Trajectory, horizon: float) -> np.ndarray:
    if horizon > traj.times[-1] + 1e-9:
        raise ContractViolation(
            f"horizon {horizon} not covered by stored steps up to {traj.times[-1]}")
    return traj.times[traj.times <= horizon + 1e-9]


def _eval_one(model: SurrogateModel, traj: Trajectory, horizon: float,
              n_spatial: int) -> float:
    idx, pts = uniform_subsample(model.grid, n_spatial)
    times = _eval_window(traj, horizon)
    pred = predict_grid(model, traj.u0, traj.input, pts, times)
    return relative_l2(traj.states[:len(times), idx], pred)


def evaluate(model: SurrogateModel, dataset: Dataset, indices=None,
             horizon: float | None = None, n_spatial: int = 100,
             n_jobs: int = 1) -> EvalReport:
    """Score trajectories on the full sensor lattice up to `horizon`.

    Trajectories are independent, so they may be scored in parallel; results
    are reduced in index order either way.
    """
    if dataset.grid != model.grid:
        raise ContractViolation("dataset grid differs from the model grid")
    indices = range(dataset.n) if indices is None else list(indices)
    trajs = [dataset.trajectories[i] for i in indices]
    if not trajs:
        raise ContractViolation("nothing to evaluate")
    if horizon is None:
        horizon = float(trajs[0].times[-1])
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            errors = list(pool.map(_eval_one, [model] * len(trajs), trajs,
                                   [horizon] * len(trajs),
                                   [n_spatial] * len(trajs)))
    else:
        errors = [_eval_one(model, traj, horizon, n_spatial) for traj in trajs]
    ids = [traj.meta.get("index", i) for i, traj in zip(indices, trajs)]
    return EvalReport(trajectory_ids=np.asarray(ids), errors=np.asarray(errors),
                      horizon=float(horizon))


def _eval_one_baseline(params: DeepOnetParams, traj: Trajectory, idx: np.ndarray,
                       pts: np.ndarray, horizon: float) -> float:
    times = _eval_window(traj, horizon)
    f_win = input_windows(traj.input, params.window)[:, idx]
    queries = np.column_stack([np.tile(pts, len(times)),
                               np.repeat(times, len(pts))])
    pred = don_rollout(params, traj.u0[idx], f_win,
                       queries).reshape(len(times), len(pts))
    return relative_l2(traj.states[:len(times), idx], pred)


def evaluate_baseline(params: DeepOnetParams, dataset: Dataset, indices=None,
                      horizon: float | None = None, n_spatial: int = 100,
                      n_jobs: int = 1) -> EvalReport:
    """Autoregressive rollout scored on the same lattice as `evaluate`."""
    idx, pts = uniform_subsample(dataset.grid, n_spatial)
    if not np.array_equal(pts, params.sensor_points):
        raise ContractViolation("dataset sensors differ from the baseline's")
    indices = range(dataset.n) if indices is None else list(indices)
    trajs = [dataset.trajectories[i] for i in indices]
    if not trajs:
        raise ContractViolation("nothing to evaluate")
    if horizon is None:
        horizon = float(trajs[0].times[-1])
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            errors = list(pool.map(_eval_one_baseline, [params] * len(trajs),
                                   trajs, [idx] * len(trajs),
                                   [pts] * len(trajs), [horizon] * len(trajs)))
    else:
        errors = [_eval_one_baseline(params, traj, idx, pts, horizon)
                  for traj in trajs]
    ids = [traj.meta.get("index", i) for i, traj in zip(indices, trajs)]
    return EvalReport(trajectory_ids=np.asarray(ids), errors=np.asarray(errors),
                      horizon=float(horizon))
