"""Ground-truth simulator for an input-driven neural-field equation.

The field u(x, t) on a periodic 1-D domain evolves as

    du/dt = f(x, t) - u(x, t) + (k * h(u - theta))(x)

where k is a lateral-coupling kernel (difference of Gaussians plus a
constant offset), h is a steep sigmoid firing rate and f is a
piecewise-constant-in-time stimulus. Trajectories are integrated with
forward Euler; the spatial convolution is circular and can be evaluated
either directly or through the FFT.

Note on the kernel sign: the difference-of-Gaussians is implemented with
decaying exponents exp(-x^2 / (2 w^2)). A growing variant would make the
coupling integral blow up on any unbounded evaluation and has no physical
reading as a synaptic footprint.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractViolation, SimulationDiverged

_TRAJ_MAGIC = b"RXT1"


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on [x_min, x_max) with no duplicated endpoint.

    Node i sits at ``x_min + i * dx`` with ``dx = (x_max - x_min) / n_points``.
    Quadrature is the periodic rectangle rule, ``w_j = dx``, which is
    spectrally accurate for periodic integrands.
    """

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 2:
            raise ContractViolation(f"n_points must be >= 2, got {self.n_points}")
        if not self.x_max > self.x_min:
            raise ContractViolation("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def quad_weights(self) -> np.ndarray:
        return np.full(self.n_points, self.dx)


@dataclass(frozen=True)
class KernelParams:
    """Coefficients of the lateral-coupling kernel: sum of Gaussians + offset."""

    amplitudes: tuple = (3.0, -1.5)
    widths: tuple = (1.5, 3.0)
    offset: float = -0.2

    def __post_init__(self):
        if len(self.amplitudes) != len(self.widths):
            raise ContractViolation("amplitudes and widths must pair up")
        if any(w <= 0 for w in self.widths):
            raise ContractViolation("kernel widths must be positive")


def gaussian_kernel_params(amplitude: float = 2.0, width: float = 1.5,
                           offset: float = -0.4) -> KernelParams:
    """Single-Gaussian coupling, used as the transfer-learning source system.

    The defaults roughly balance excitation against the constant offset so
    fields stay on the same amplitude scale as under the two-Gaussian
    kernel; a pretrained model then transfers without a scale shock.
    """
    return KernelParams(amplitudes=(amplitude,), widths=(width,), offset=offset)


@dataclass
class NeuralFieldModel:
    """Field dynamics parameters: firing threshold/steepness and kernel."""

    theta: float = 1.0
    slope: float = 1000.0
    kernel: KernelParams = field(default_factory=KernelParams)
    _kernel_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def kernel_samples(self, grid: Grid1D) -> np.ndarray:
        """Kernel evaluated at periodic node offsets (even by construction)."""
        key = (grid.x_min, grid.x_max, grid.n_points)
        if key not in self._kernel_cache:
            i = np.arange(grid.n_points)
            dist = np.minimum(i, grid.n_points - i) * grid.dx
            self._kernel_cache[key] = eval_kernel(dist, self.kernel)
        return self._kernel_cache[key]


@dataclass(frozen=True)
class PiecewiseConstantInput:
    """Stimulus held fixed on each interval [k*delta, (k+1)*delta).

    ``profiles`` has one spatial profile per row; ``bound`` records the
    amplitude bound M used when the profiles were sampled.
    """

    delta: float
    profiles: np.ndarray  # (n_profiles, n_points)
    t_end: float
    bound: float = 5.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ContractViolation("delta must be positive")
        expected = int(np.ceil(self.t_end / self.delta - 1e-12))
        if self.profiles.shape[0] != expected:
            raise ContractViolation(
                f"need ceil(t_end/delta)={expected} profiles, got {self.profiles.shape[0]}"
            )

    @property
    def n_profiles(self) -> int:
        return self.profiles.shape[0]

    def profile_at(self, t: float) -> np.ndarray:
        k = min(int(np.floor(t / self.delta)), self.n_profiles - 1)
        return self.profiles[k]


@dataclass(frozen=True)
class Trajectory:
    """One simulated realization: initial state, stimulus and dense states."""

    u0: np.ndarray           # (n_points,)
    input: PiecewiseConstantInput
    times: np.ndarray        # (K,)
    states: np.ndarray       # (K, n_points)
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


@dataclass(frozen=True)
class Dataset:
    grid: Grid1D
    trajectories: list
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.trajectories)


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------

def eval_kernel(x, params: KernelParams):
    """Difference-of-Gaussians kernel value(s) at offset x; even in x."""
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, params.offset)
    for a, w in zip(params.amplitudes, params.widths):
        out += a * np.exp(-0.5 * (x / w) ** 2)
    return out if out.ndim else float(out)


# exponent clamp: slope=1000 would overflow exp() for any |u-theta| > 0.7
_EXP_CLAMP = 700.0


def firing_rate(u, theta: float, slope: float):
    """Sigmoid firing rate 1 / (1 + exp(-slope*(u-theta))), overflow-safe."""
    e = np.clip(-slope * (np.asarray(u, dtype=float) - theta), -_EXP_CLAMP, _EXP_CLAMP)
    out = 1.0 / (1.0 + np.exp(e))
    return out if out.ndim else float(out)


def circular_convolve(kernel_samples: np.ndarray, field_samples: np.ndarray,
                      dx: float, backend: str = "fft") -> np.ndarray:
    """Periodic convolution ``dx * sum_j kernel[(i-j) mod n] field[j]``.

    ``backend="direct"`` is the O(n^2) reference sum, ``backend="fft"`` the
    transform route; the two agree to 1e-10 on unit-scale data and any n.
    """
    kernel_samples = np.asarray(kernel_samples, dtype=float)
    field_samples = np.asarray(field_samples, dtype=float)
    if kernel_samples.shape != field_samples.shape or kernel_samples.ndim != 1:
        raise ContractViolation(
            f"kernel/field shape mismatch: {kernel_samples.shape} vs {field_samples.shape}"
        )
    n = len(kernel_samples)
    if backend == "fft":
        out = np.fft.irfft(np.fft.rfft(kernel_samples) * np.fft.rfft(field_samples), n=n)
    elif backend == "direct":
        idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
        out = kernel_samples[idx] @ field_samples
    else:
        raise ContractViolation(f"unknown backend {backend!r}")
    return dx * out


def rhs(u: np.ndarray, f_now: np.ndarray, model: NeuralFieldModel, grid: Grid1D,
        _kernel_samples: np.ndarray | None = None) -> np.ndarray:
    """Time derivative f - u + k * h(u - theta) on the grid."""
    u = np.asarray(u, dtype=float)
    f_now = np.asarray(f_now, dtype=float)
    if u.shape != (grid.n_points,) or f_now.shape != (grid.n_points,):
        raise ContractViolation("state/input must live on the grid")
    k = model.kernel_samples(grid) if _kernel_samples is None else _kernel_samples
    rate = firing_rate(u, model.theta, model.slope)
    return f_now - u + circular_convolve(k, rate, grid.dx)


def simulate(u0: np.ndarray, input: PiecewiseConstantInput, dt: float, t_end: float,
             model: NeuralFieldModel, grid: Grid1D, meta: dict | None = None) -> Trajectory:
    """Forward-Euler integration with states recorded at every step.

    ``dt`` must divide the input hold period, so profile switches align with
    steps. Raises :class:`SimulationDiverged` if the state goes non-finite.
    """
    u0 = np.asarray(u0, dtype=float)
    if dt <= 0:
        raise ContractViolation("dt must be positive")
    if u0.shape != (grid.n_points,):
        raise ContractViolation("u0 must live on the grid")
    steps_per_profile = int(round(input.delta / dt))
    if abs(steps_per_profile * dt - input.delta) > 1e-9:
        raise ContractViolation(f"dt={dt} does not divide delta={input.delta}")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9:
        raise ContractViolation(f"dt={dt} does not divide t_end={t_end}")
    if input.t_end < t_end - 1e-9:
        raise ContractViolation("input does not cover the integration horizon")

    kernel = model.kernel_samples(grid)
    states = np.empty((n_steps + 1, grid.n_points))
    states[0] = u0
    u = u0.copy()
    for s in range(n_steps):
        f_now = input.profiles[min(s // steps_per_profile, input.n_profiles - 1)]
        u = u + dt * rhs(u, f_now, model, grid, _kernel_samples=kernel)
        if not np.all(np.isfinite(u)):
            raise SimulationDiverged(s + 1)
        states[s + 1] = u
    times = dt * np.arange(n_steps + 1)
    return Trajectory(u0=u0, input=input, times=times, states=states, meta=meta or {})


# ---------------------------------------------------------------------------
# randomized sampling
# ---------------------------------------------------------------------------

def gaussian_bump_sum(x: np.ndarray, amps, mus, sigmas) -> np.ndarray:
    """Sum of Gaussian bumps A_i exp(-(x-mu_i)^2 / (2 sigma_i^2))."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for a, m, s in zip(amps, mus, sigmas):
        out += a * np.exp(-((x - m) ** 2) / (2.0 * s ** 2))
    return out


@dataclass(frozen=True)
class SamplingRanges:
    """Uniform ranges for bump amplitude/width/center draws."""

    amp: tuple = (1.0, 5.0)
    width: tuple = (0.5, 2.5)
    # center range defaults to the domain; None means [x_min, x_max]
    center: tuple | None = None

    def center_range(self, grid: Grid1D) -> tuple:
        return self.center if self.center is not None else (grid.x_min, grid.x_max)


def sample_initial_condition(rng: np.random.Generator, grid: Grid1D,
                             ranges: SamplingRanges = SamplingRanges(),
                             n_bumps: int = 2) -> np.ndarray:
    """Random initial state: sum of ``n_bumps`` Gaussian bumps."""
    lo, hi = ranges.center_range(grid)
    amps = rng.uniform(*ranges.amp, size=n_bumps)
    sigmas = rng.uniform(*ranges.width, size=n_bumps)
    mus = rng.uniform(lo, hi, size=n_bumps)
    return gaussian_bump_sum(grid.nodes, amps, mus, sigmas)


def sample_input_signal(rng: np.random.Generator, grid: Grid1D, t_end: float,
                        delta: float = 0.5, block_len: int = 10,
                        ranges: SamplingRanges = SamplingRanges()) -> PiecewiseConstantInput:
    """Random stimulus: a fresh Gaussian bump every ``block_len`` hold periods.

    With the defaults (delta=0.5, block_len=10) the stimulus profile changes
    every 5 time units while remaining formally piecewise constant on the
    finer delta lattice.
    """
    n_profiles = int(np.ceil(t_end / delta - 1e-12))
    lo, hi = ranges.center_range(grid)
    profiles = np.empty((n_profiles, grid.n_points))
    for start in range(0, n_profiles, block_len):
        a = rng.uniform(*ranges.amp)
        s = rng.uniform(*ranges.width)
        m = rng.uniform(lo, hi)
        bump = gaussian_bump_sum(grid.nodes, [a], [m], [s])
        profiles[start:start + block_len] = bump
    return PiecewiseConstantInput(delta=delta, profiles=profiles, t_end=t_end,
                                  bound=ranges.amp[1])


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    """Everything needed to regenerate a dataset from a master seed."""

    grid: Grid1D = Grid1D(-10.0, 10.0, 800)
    model: NeuralFieldModel = field(default_factory=NeuralFieldModel)
    dt: float = 0.025
    t_end: float = 50.0
    delta: float = 0.5
    block_len: int = 10
    n_trajectories: int = 1000
    ranges: SamplingRanges = SamplingRanges()

    def with_horizon(self, t_end: float) -> "SimConfig":
        """Same config and seeds, longer horizon: trajectories extend exactly."""
        return replace(self, t_end=t_end)


def _simulate_one(config: SimConfig, master_seed: int, index: int) -> Trajectory:
    # spawn children locally so the call is picklable for process pools;
    # draw order (u0 first, then input blocks) is part of the format
    child = np.random.SeedSequence(master_seed).spawn(config.n_trajectories)[index]
    rng = np.random.default_rng(child)
    u0 = sample_initial_condition(rng, config.grid, config.ranges)
    signal = sample_input_signal(rng, config.grid, config.t_end, config.delta,
                                 config.block_len, config.ranges)
    try:
        return simulate(u0, signal, config.dt, config.t_end, config.model, config.grid,
                        meta={"master_seed": master_seed, "index": index})
    except SimulationDiverged as err:
        raise SimulationDiverged(err.step, detail=f"trajectory {index}") from err


def generate_dataset(config: SimConfig, seed: int, n_jobs: int = 1) -> Dataset:
    """Simulate ``config.n_trajectories`` independent draws.

    Per-trajectory seeds are spawned from the master seed, so the parallel
    path returns output identical to the sequential one.
    """
    n = config.n_trajectories
    if n < 1:
        raise ContractViolation("need at least one trajectory")
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            trajectories = list(pool.map(_simulate_one, [config] * n, [seed] * n, range(n)))
    else:
        trajectories = [_simulate_one(config, seed, i) for i in range(n)]
    meta = {
        "master_seed": seed,
        "dt": config.dt,
        "t_end": config.t_end,
        "delta": config.delta,
        "block_len": config.block_len,
        "input_bound": config.ranges.amp[1],
    }
    return Dataset(grid=config.grid, trajectories=trajectories, meta=meta)


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------
# One directory per dataset: meta.json plus traj_#####.rxt files. Each .rxt is
# magic "RXT1", u32 n_points/K/n_profiles, then little-endian f64 blocks:
# u0, profiles (row-major), times, states (row-major).

def _write_trajectory(path: Path, traj: Trajectory) -> None:
    n_points = len(traj.u0)
    k = len(traj.times)
    n_profiles = traj.input.n_profiles
    with open(path, "wb") as fh:
        fh.write(_TRAJ_MAGIC)
        fh.write(struct.pack("<III", n_points, k, n_profiles))
        fh.write(traj.u0.astype("<f8").tobytes())
        fh.write(traj.input.profiles.astype("<f8").tobytes())
        fh.write(traj.times.astype("<f8").tobytes())
        fh.write(traj.states.astype("<f8").tobytes())


def read_trajectory(path, delta: float, t_end: float, bound: float = 5.0,
                    meta: dict | None = None) -> Trajectory:
    """Read one .rxt file; delta/t_end/bound come from the dataset manifest."""
    raw = Path(path).read_bytes()
    if raw[:4] != _TRAJ_MAGIC:
        raise ContractViolation(f"{path}: bad magic {raw[:4]!r}")
    n_points, k, n_profiles = struct.unpack("<III", raw[4:16])
    body = np.frombuffer(raw[16:], dtype="<f8")
    expected = n_points + n_profiles * n_points + k + k * n_points
    if len(body) != expected:
        raise ContractViolation(f"{path}: payload has {len(body)} floats, expected {expected}")
    pos = 0
    u0 = body[pos:pos + n_points].copy(); pos += n_points
    profiles = body[pos:pos + n_profiles * n_points].reshape(n_profiles, n_points).copy()
    pos += n_profiles * n_points
    times = body[pos:pos + k].copy(); pos += k
    states = body[pos:].reshape(k, n_points).copy()
    signal = PiecewiseConstantInput(delta=delta, profiles=profiles, t_end=t_end, bound=bound)
    return Trajectory(u0=u0, input=signal, times=times, states=states, meta=meta or {})


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, traj in enumerate(dataset.trajectories):
        name = f"traj_{i:05d}.rxt"
        _write_trajectory(out / name, traj)
        files.append(name)
    meta = {
        "format": "RXT1",
        "grid": {"x_min": dataset.grid.x_min, "x_max": dataset.grid.x_max,
                 "n_points": dataset.grid.n_points},
        "n_trajectories": dataset.n,
        "trajectory_files": files,
        **dataset.meta,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    meta = json.loads((src / "meta.json").read_text())
    grid = Grid1D(**meta["grid"])
    trajectories = []
    for i, name in enumerate(meta["trajectory_files"]):
        trajectories.append(read_trajectory(
            src / name, delta=meta["delta"], t_end=meta["t_end"],
            bound=meta.get("input_bound", 5.0), meta={"index": i}))
    extra = {k: v for k, v in meta.items()
             if k not in ("format", "grid", "n_trajectories", "trajectory_files")}
    return Dataset(grid=grid, trajectories=trajectories, meta=extra)
