"""Experiment configuration: INI files <-> typed config objects.

One file describes a full experiment: the simulated system and dataset size,
the POD rank, both training stages, the comparison operator network, and
evaluation options.  Every key has a default taken from the corresponding
dataclass, so a config file only needs to list what it overrides.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .basis import BasisTrainConfig
from .errors import ContractViolation
from .sim import Grid1D, KernelParams, NeuralFieldModel, SamplingRanges, SimConfig
from .training import TrainConfig

_SECTIONS = ("simulation", "pod", "basis", "training", "baseline", "evaluation")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything the command-line pipeline needs, in one object."""

    sim: SimConfig = field(default_factory=SimConfig)
    r: int = 50
    basis: BasisTrainConfig = field(default_factory=BasisTrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    r_b: int = 700
    window: float | None = None
    horizon: float | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.r < 1:
            raise ContractViolation("r must be at least 1")
        if self.r_b < 1:
            raise ContractViolation("r_b must be at least 1")
        if self.n_jobs < 1:
            raise ContractViolation("n_jobs must be at least 1")


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(float(v)) if isinstance(v, float) else str(v)
                         for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _floats(text: str) -> tuple:
    return tuple(float(part) for part in text.split(","))


def _ints(text: str) -> tuple:
    return tuple(int(part) for part in text.split(","))


def _opt_float(text: str):
    return None if text.strip().lower() == "none" else float(text)


class _Section:
    """Typed reads from one INI section with dataclass-backed defaults."""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self._items = dict(parser.items(name)) if parser.has_section(name) else {}
        self._name = name

    def pop(self, key: str, default, kind):
        if key not in self._items:
            return default
        raw = self._items.pop(key)
        try:
            return kind(raw)
        except ValueError as exc:
            raise ContractViolation(
                f"[{self._name}] {key}: cannot parse {raw!r}") from exc

    def check_empty(self):
        if self._items:
            unknown = ", ".join(sorted(self._items))
            raise ContractViolation(f"[{self._name}]: unknown keys: {unknown}")


def _read_simulation(sec: _Section, base: SimConfig) -> SimConfig:
    grid = Grid1D(x_min=sec.pop("x_min", base.grid.x_min, float),
                  x_max=sec.pop("x_max", base.grid.x_max, float),
                  n_points=sec.pop("n_points", base.grid.n_points, int))
    kernel = KernelParams(
        amplitudes=sec.pop("kernel_amplitudes", base.model.kernel.amplitudes, _floats),
        widths=sec.pop("kernel_widths", base.model.kernel.widths, _floats),
        offset=sec.pop("kernel_offset", base.model.kernel.offset, float))
    model = NeuralFieldModel(theta=sec.pop("theta", base.model.theta, float),
                             slope=sec.pop("slope", base.model.slope, float),
                             kernel=kernel)
    center = sec.pop("center_range", base.ranges.center,
                     lambda s: None if s.strip().lower() == "none" else _floats(s))
    ranges = SamplingRanges(amp=sec.pop("amp_range", base.ranges.amp, _floats),
                            width=sec.pop("width_range", base.ranges.width, _floats),
                            center=center)
    return SimConfig(grid=grid, model=model,
                     dt=sec.pop("dt", base.dt, float),
                     t_end=sec.pop("t_end", base.t_end, float),
                     delta=sec.pop("delta", base.delta, float),
                     block_len=sec.pop("block_len", base.block_len, int),
                     n_trajectories=sec.pop("n_trajectories", base.n_trajectories, int),
                     ranges=ranges)


def _read_basis(sec: _Section, base: BasisTrainConfig) -> BasisTrainConfig:
    return BasisTrainConfig(
        x_min=sec.pop("x_min", base.x_min, float),
        x_max=sec.pop("x_max", base.x_max, float),
        n_features=sec.pop("n_features", base.n_features, int),
        feature_std=sec.pop("feature_std", base.feature_std, float),
        hidden=sec.pop("hidden", base.hidden, _ints),
        lr=sec.pop("lr", base.lr, float),
        max_epochs=sec.pop("max_epochs", base.max_epochs, int),
        decay_patience=sec.pop("decay_patience", base.decay_patience, int),
        patience=sec.pop("patience", base.patience, int))


def _read_training(sec: _Section, base: TrainConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=sec.pop("batch_size", base.batch_size, int),
        lr0=sec.pop("lr0", base.lr0, float),
        lr_decay=sec.pop("lr_decay", base.lr_decay, float),
        plateau=sec.pop("plateau", base.plateau, int),
        early_stop=sec.pop("early_stop", base.early_stop, int),
        n_time_samples=sec.pop("n_time_samples", base.n_time_samples, int),
        split=sec.pop("split", base.split, _floats),
        seed=sec.pop("seed", base.seed, int),
        max_epochs=sec.pop("max_epochs", base.max_epochs, int),
        n_spatial=sec.pop("n_spatial", base.n_spatial, int),
        hidden_dim=sec.pop("hidden_dim", base.hidden_dim, int),
        encoder_hidden=sec.pop("encoder_hidden", base.encoder_hidden, _ints),
        decoder_hidden=sec.pop("decoder_hidden", base.decoder_hidden, _ints),
        recon_hidden=sec.pop("recon_hidden", base.recon_hidden, _ints))


def load_config(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse a key=value INI file, filling gaps from ``base`` (or defaults)."""
    path = Path(path)
    if not path.is_file():
        raise ContractViolation(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ContractViolation(f"unknown config section [{name}]")
    base = base if base is not None else ExperimentConfig()

    sections = {name: _Section(parser, name) for name in _SECTIONS}
    sim = _read_simulation(sections["simulation"], base.sim)
    r = sections["pod"].pop("r", base.r, int)
    basis = _read_basis(sections["basis"], base.basis)
    train = _read_training(sections["training"], base.train)
    r_b = sections["baseline"].pop("r_b", base.r_b, int)
    window = sections["baseline"].pop("window", base.window, _opt_float)
    horizon = sections["evaluation"].pop("horizon", base.horizon, _opt_float)
    n_jobs = sections["evaluation"].pop("n_jobs", base.n_jobs, int)
    for sec in sections.values():
        sec.check_empty()
    return ExperimentConfig(sim=sim, r=r, basis=basis, train=train, r_b=r_b,
                            window=window, horizon=horizon, n_jobs=n_jobs)


def save_config(config: ExperimentConfig, path) -> None:
    """Write every field explicitly; load_config round-trips the result."""
    sim, ranges, kernel = config.sim, config.sim.ranges, config.sim.model.kernel
    data = {
        "simulation": {
            "x_min": sim.grid.x_min, "x_max": sim.grid.x_max,
            "n_points": sim.grid.n_points, "dt": sim.dt, "t_end": sim.t_end,
            "delta": sim.delta, "block_len": sim.block_len,
            "n_trajectories": sim.n_trajectories,
            "theta": sim.model.theta, "slope": sim.model.slope,
            "kernel_amplitudes": kernel.amplitudes,
            "kernel_widths": kernel.widths, "kernel_offset": kernel.offset,
            "amp_range": ranges.amp, "width_range": ranges.width,
            "center_range": ranges.center,
        },
        "pod": {"r": config.r},
        "basis": {f.name: getattr(config.basis, f.name)
                  for f in dataclasses.fields(config.basis)},
        "training": {f.name: getattr(config.train, f.name)
                     for f in dataclasses.fields(config.train)},
        "baseline": {"r_b": config.r_b, "window": config.window},
        "evaluation": {"horizon": config.horizon, "n_jobs": config.n_jobs},
    }
    parser = configparser.ConfigParser()
    for name, items in data.items():
        parser[name] = {key: _fmt(value) for key, value in items.items()}
    with open(path, "w") as fh:
        parser.write(fh)


def preset(name: str) -> ExperimentConfig:
    """Built-in experiment scales.

    ``full``  - the reference problem: 800-node grid, 1000 trajectories,
                horizon 50, rank 50.  Hours of CPU time.
    ``desk``  - same physics on a 256-node grid, 200 trajectories, horizon
                20, rank 20 and slimmer networks.  Minutes of CPU time.
    ``micro`` - smoke-test scale for exercising the pipeline end to end.
    """
    if name == "full":
        return ExperimentConfig()
    if name == "desk":
        sim = SimConfig(grid=Grid1D(-10.0, 10.0, 256), dt=0.05, t_end=20.0,
                        delta=0.5, block_len=10, n_trajectories=200)
        # the 20 modes of the smaller problem oscillate fast relative to the
        # domain, so the coordinate net needs higher-frequency features than
        # the full-scale default to resolve them
        basis = BasisTrainConfig(feature_std=3.0, decay_patience=150,
                                 patience=1200)
        train = TrainConfig(batch_size=128, lr0=1e-3, n_time_samples=100,
                            max_epochs=400, n_spatial=100, hidden_dim=64,
                            encoder_hidden=(128, 128), decoder_hidden=(64, 64),
                            recon_hidden=(32, 32))
        return ExperimentConfig(sim=sim, r=20, basis=basis, train=train)
    if name == "micro":
        sim = SimConfig(grid=Grid1D(-10.0, 10.0, 64), dt=0.1, t_end=5.0,
                        delta=0.5, block_len=5, n_trajectories=12)
        basis = BasisTrainConfig(n_features=16, hidden=(24, 24),
                                 max_epochs=150, lr=3e-3)
        train = TrainConfig(batch_size=32, lr0=3e-3, n_time_samples=8,
                            max_epochs=3, n_spatial=16, hidden_dim=8,
                            encoder_hidden=(10,), decoder_hidden=(10,),
                            recon_hidden=(12,))
        return ExperimentConfig(sim=sim, r=4, basis=basis, train=train, r_b=20)
    raise ContractViolation(f"unknown preset {name!r}; use full, desk or micro")
