"""DeepONet-style baseline: branch/trunk factorization with nonlinear readout.

The branch network encodes the sampled initial condition together with the
currently held input profile; the trunk network encodes one space-time query
coordinate. Their Hadamard product feeds a readout of the same form the
surrogate uses. A single forward pass covers one input-hold window with a
window-local clock; longer horizons chain windows by evaluating the
prediction at the boundary on the sensor grid and feeding it back in as the
next window's initial condition.

Hidden widths are not free knobs: they are solved at construction so the
total trainable parameter count matches a given reference count within one
percent, keeping capacity comparisons against the surrogate fair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .nn import (
    ParamBundle,
    load_params,
    mlp_backward,
    mlp_forward,
    mlp_init,
    mlp_widths,
    save_params,
)
from .operator import SurrogateModel
from .sim import PiecewiseConstantInput

DEFAULT_MODES = 700
DEFAULT_WINDOW = 5.0


@dataclass(frozen=True)
class DeepOnetParams:
    """Branch/trunk/readout weights plus the fixed sensor geometry."""

    branch: ParamBundle
    trunk: ParamBundle
    recon: ParamBundle
    sensor_points: np.ndarray  # (n_sensors,) sampling locations for u0 and f
    window: float              # span of the window-local clock
    x_min: float
    x_max: float

    def __post_init__(self):
        pts = np.asarray(self.sensor_points, dtype=float)
        if pts.ndim != 1 or pts.size == 0 or not np.all(np.isfinite(pts)):
            raise ContractViolation("sensor points must be a finite 1-D array")
        object.__setattr__(self, "sensor_points", pts)
        bw, tw, rw = (mlp_widths(p) for p in (self.branch, self.trunk, self.recon))
        if bw[-1] != tw[-1]:
            raise ContractViolation(
                f"branch width {bw[-1]} != trunk width {tw[-1]}")
        if bw[0] != 2 * pts.size:
            raise ContractViolation(
                f"branch expects {bw[0]} inputs, sensors give {2 * pts.size}")
        if tw[0] != 2:
            raise ContractViolation("trunk input must be (x, t) pairs")
        if rw[0] != bw[-1] or rw[-1] != 1:
            raise ContractViolation("readout must map the Hadamard product to a scalar")
        if not self.window > 0 or not self.x_max > self.x_min:
            raise ContractViolation("window and spatial bounds must be positive spans")

    @property
    def n_sensors(self) -> int:
        return self.sensor_points.size

    @property
    def r_b(self) -> int:
        return mlp_widths(self.branch)[-1]


def don_param_count(params: DeepOnetParams) -> int:
    return params.branch.size + params.trunk.size + params.recon.size


def surrogate_param_count(model: SurrogateModel) -> int:
    """Trainable scalars of the surrogate; the frozen feature map is excluded."""
    flow = model.flow
    return (model.basis.mlp.size + flow.encoder.size + flow.cell.size
            + flow.decoder.size + model.recon.mlp.size)


# ---------------------------------------------------------------------------
# parameter-parity width search
# ---------------------------------------------------------------------------

def _mlp_count(widths) -> int:
    return sum((widths[i] + 1) * widths[i + 1] for i in range(len(widths) - 1))


def parity_widths(reference_count: int, branch_in: int, r_b: int = DEFAULT_MODES,
                  recon_hidden: tuple = (50, 50), depth: int = 4) -> tuple:
    """Solve hidden widths so the full baseline matches `reference_count`.

    All hidden layers share one width; the trunk's last hidden layer is then
    adjusted separately because its unit cost (one fan-in plus one fan-out
    row) is the finest granularity available. Raises when even the best
    achievable count misses the reference by more than 1 percent.
    """
    if depth < 2:
        raise ContractViolation("parity search needs at least two hidden layers")
    if reference_count <= 0 or branch_in < 1 or r_b < 1:
        raise ContractViolation("parity search arguments must be positive")
    recon_count = _mlp_count([r_b, *recon_hidden, 1])

    def layout(w, t):
        branch = [branch_in, *([w] * depth), r_b]
        trunk = [2, *([w] * (depth - 1)), t, r_b]
        return branch, trunk

    def total(w, t):
        branch, trunk = layout(w, t)
        return _mlp_count(branch) + _mlp_count(trunk) + recon_count

    w = 1
    while total(w + 1, w + 1) <= reference_count:
        w += 1
    best = None
    for w0 in (max(w - 1, 1), w, w + 1):
        # total is affine in the trunk's last hidden width
        slope = w0 + 1 + r_b
        t_star = max(1 + round((reference_count - total(w0, 1)) / slope), 1)
        for t in (max(t_star - 1, 1), t_star, t_star + 1):
            gap = abs(total(w0, t) - reference_count)
            if best is None or gap < best[0]:
                best = (gap, w0, t)
    gap, w0, t0 = best
    if gap > 0.01 * reference_count:
        raise ContractViolation(
            f"parameter parity unreachable: best count misses {reference_count} "
            f"by {gap} (> 1%)")
    return layout(w0, t0)


def don_init(rng: np.random.Generator, reference_count: int, sensor_points,
             *, r_b: int = DEFAULT_MODES, depth: int = 4,
             recon_hidden: tuple = (50, 50), window: float = DEFAULT_WINDOW,
             x_min: float = -10.0, x_max: float = 10.0) -> DeepOnetParams:
    """Build baseline weights sized to parity with a reference model count."""
    pts = np.asarray(sensor_points, dtype=float)
    if pts.ndim != 1 or pts.size == 0:
        raise ContractViolation("sensor points must be a non-empty 1-D array")
    branch_w, trunk_w = parity_widths(reference_count, 2 * pts.size, r_b,
                                      tuple(recon_hidden), depth)
    branch = mlp_init(rng, branch_w)
    trunk = mlp_init(rng, trunk_w)
    recon = mlp_init(rng, [r_b, *recon_hidden, 1])
    return DeepOnetParams(branch=branch, trunk=trunk, recon=recon,
                          sensor_points=pts, window=float(window),
                          x_min=float(x_min), x_max=float(x_max))


# ---------------------------------------------------------------------------
# forward evaluation
# ---------------------------------------------------------------------------

def _norm_x(params: DeepOnetParams, x):
    x = np.asarray(x, dtype=float)
    return 2.0 * (x - params.x_min) / (params.x_max - params.x_min) - 1.0


def _norm_t(params: DeepOnetParams, t_local):
    t = np.asarray(t_local, dtype=float)
    if np.any(t < -1e-9) or np.any(t > params.window + 1e-9):
        raise ContractViolation(
            f"window-local time outside [0, {params.window}]")
    return 2.0 * np.clip(t, 0.0, params.window) / params.window - 1.0


def don_forward(params: DeepOnetParams, u0_samples, f_samples, x, t_local):
    """Prediction u_hat(x, t_local) for one (initial condition, held input) pair.

    `x` and `t_local` broadcast against each other; the result keeps their
    broadcast shape (a float for scalar queries).
    """
    u0 = np.asarray(u0_samples, dtype=float)
    f = np.asarray(f_samples, dtype=float)
    if u0.shape != (params.n_sensors,) or f.shape != (params.n_sensors,):
        raise ContractViolation(
            f"expected {params.n_sensors} sensor samples, got "
            f"{u0.shape} and {f.shape}")
    xn, tn = np.broadcast_arrays(_norm_x(params, x), _norm_t(params, t_local))
    out_shape = xn.shape
    coords = np.stack([xn.ravel(), tn.ravel()], axis=-1)
    b_out, _ = mlp_forward(params.branch, np.concatenate([u0, f])[None, :])
    t_out, _ = mlp_forward(params.trunk, coords)
    y, _ = mlp_forward(params.recon, b_out * t_out)
    out = y[:, 0].reshape(out_shape)
    if out.shape == ():
        return float(out)
    return out


@dataclass
class DonBatchCache:
    branch_cache: object
    trunk_cache: object
    recon_cache: object
    branch_out: np.ndarray
    trunk_out: np.ndarray


def don_batch_forward(params: DeepOnetParams, u0_samples, f_samples,
                      xs, t_locals) -> tuple:
    """Predictions (B, P) for B windows at P points each; returns cache.

    Each batch row carries its own initial condition, held input, and
    window-local time, shared across that row's P spatial points.
    """
    u0 = np.asarray(u0_samples, dtype=float)
    f = np.asarray(f_samples, dtype=float)
    if u0.ndim != 2 or u0.shape[1] != params.n_sensors or f.shape != u0.shape:
        raise ContractViolation("batch sensor samples must be (B, n_sensors)")
    n_batch = u0.shape[0]
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[0] != n_batch:
        raise ContractViolation("query points must be (B, P)")
    t = np.asarray(t_locals, dtype=float)
    if t.shape != (n_batch,):
        raise ContractViolation("window-local times must be (B,)")
    xn = _norm_x(params, xs)
    tn = np.broadcast_to(_norm_t(params, t)[:, None], xn.shape)
    coords = np.stack([xn, tn], axis=-1)
    b_out, b_cache = mlp_forward(params.branch, np.concatenate([u0, f], axis=1))
    t_out, t_cache = mlp_forward(params.trunk, coords)
    y, r_cache = mlp_forward(params.recon, b_out[:, None, :] * t_out)
    cache = DonBatchCache(branch_cache=b_cache, trunk_cache=t_cache,
                          recon_cache=r_cache, branch_out=b_out, trunk_out=t_out)
    return y[..., 0], cache


def don_batch_backward(cache: DonBatchCache, d_y) -> tuple:
    """Gradients (branch, trunk, readout) of a weighted batch output sum."""
    d_y = np.asarray(d_y, dtype=float)
    recon_grads, d_prod = mlp_backward(cache.recon_cache, d_y[..., None])
    trunk_grads, _ = mlp_backward(cache.trunk_cache,
                                  d_prod * cache.branch_out[:, None, :])
    branch_grads, _ = mlp_backward(cache.branch_cache,
                                   np.sum(d_prod * cache.trunk_out, axis=1))
    return branch_grads, trunk_grads, recon_grads


# ---------------------------------------------------------------------------
# rollout across input-hold windows
# ---------------------------------------------------------------------------

def input_windows(signal: PiecewiseConstantInput, window: float = DEFAULT_WINDOW
                  ) -> np.ndarray:
    """Window-held profiles (n_windows, n_points) of a piecewise input.

    The signal must hold each profile constant over whole windows; anything
    else makes the single-branch-input-per-window model ill-posed.
    """
    if window <= 0:
        raise ContractViolation("window must be positive")
    per = window / signal.delta
    per_i = int(round(per))
    if per_i < 1 or abs(per - per_i) > 1e-9 * max(1.0, per):
        raise ContractViolation(
            "window must be an integer number of hold periods")
    profiles = signal.profiles
    if profiles.shape[0] % per_i != 0:
        raise ContractViolation("signal does not cover a whole number of windows")
    grouped = profiles.reshape(profiles.shape[0] // per_i, per_i, -1)
    if not np.all(grouped == grouped[:, :1, :]):
        raise ContractViolation("input varies inside a window")
    return grouped[:, 0, :].copy()


def don_rollout(params: DeepOnetParams, u0_samples, f_windows, queries
                ) -> np.ndarray:
    """Answer (x, t) queries over chained windows.

    At every window boundary the model's own prediction on the sensor grid
    becomes the next window's initial condition, so the fed-forward state is
    continuous by construction. Queries are answered inside their window via
    the window-local clock; a query at an interior boundary belongs to the
    later window (local time 0), and the very end of the horizon clamps to
    the last window's full span.
    """
    u0 = np.asarray(u0_samples, dtype=float)
    if u0.shape != (params.n_sensors,):
        raise ContractViolation(f"initial condition must have {params.n_sensors} samples")
    f_win = np.asarray(f_windows, dtype=float)
    if f_win.ndim != 2 or f_win.shape[1] != params.n_sensors:
        raise ContractViolation("window profiles must be (n_windows, n_sensors)")
    q = np.asarray(queries, dtype=float)
    if q.ndim != 2 or q.shape[1] != 2:
        raise ContractViolation("queries must be (n, 2) pairs (x, t)")
    if q.shape[0] == 0:
        return np.zeros(0)
    n_win = f_win.shape[0]
    horizon = n_win * params.window
    ts = q[:, 1]
    if np.any(ts < -1e-9) or np.any(ts > horizon + 1e-9):
        raise ContractViolation(f"query time outside covered horizon [0, {horizon}]")
    ts = np.clip(ts, 0.0, horizon)
    idx = np.minimum(np.floor(ts / params.window).astype(int), n_win - 1)
    t_loc = np.clip(ts - idx * params.window, 0.0, params.window)

    states = [u0]
    for w in range(1, int(idx.max()) + 1):
        states.append(don_forward(params, states[w - 1], f_win[w - 1],
                                  params.sensor_points, params.window))
    out = np.empty(q.shape[0])
    for w in np.unique(idx):
        mask = idx == w
        out[mask] = don_forward(params, states[w], f_win[w], q[mask, 0],
                                t_loc[mask])
    return out


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

def save_don(path, params: DeepOnetParams, extra_meta: dict | None = None) -> None:
    arrays = [("sensor_points", params.sensor_points)]
    arrays += [(f"branch_{n}", params.branch[n]) for n in params.branch.names]
    arrays += [(f"trunk_{n}", params.trunk[n]) for n in params.trunk.names]
    arrays += [(f"recon_{n}", params.recon[n]) for n in params.recon.names]
    meta = {
        "kind": "deeponet",
        "r_b": params.r_b,
        "window": params.window,
        "x_min": params.x_min,
        "x_max": params.x_max,
        "branch_widths": mlp_widths(params.branch),
        "trunk_widths": mlp_widths(params.trunk),
        "recon_widths": mlp_widths(params.recon),
        **(extra_meta or {}),
    }
    save_params(path, ParamBundle(arrays), meta)


def load_don(path) -> tuple:
    bundle, meta = load_params(path)
    if meta.get("kind") != "deeponet":
        raise ContractViolation(f"{path}: not a baseline checkpoint")

    def sub(prefix):
        return ParamBundle([(n[len(prefix):], np.array(bundle[n]))
                            for n in bundle.names if n.startswith(prefix)])

    params = DeepOnetParams(branch=sub("branch_"), trunk=sub("trunk_"),
                            recon=sub("recon_"),
                            sensor_points=np.array(bundle["sensor_points"]),
                            window=float(meta["window"]),
                            x_min=float(meta["x_min"]),
                            x_max=float(meta["x_max"]))
    return params, meta
