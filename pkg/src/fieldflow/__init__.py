"""fieldflow: flow-map surrogate modeling of input-driven neural-field dynamics.

The pipeline: simulate ground-truth trajectories of a periodic neural-field
equation, extract a reduced spatial basis (POD targets fitted by a small
coordinate network), learn the flow map of the projected dynamics with a
recurrent architecture, and reconstruct space-time predictions through a
nonlinear readout. A branch/trunk operator baseline and a fine-tuning path
for transferring a trained model to a related system are included.
"""

from .basis import (
    BasisNetParams,
    BasisTrainConfig,
    eval_basis,
    eval_basis_discrete,
    load_basis_net,
    save_basis_net,
    train_basis,
)
from .config import ExperimentConfig, load_config, preset, save_config
from .deeponet import (
    DeepOnetParams,
    don_forward,
    don_init,
    don_rollout,
    input_windows,
    load_don,
    parity_widths,
    save_don,
    surrogate_param_count,
)
from .errors import ContractViolation, SimulationDiverged, TrainingDiverged
from .flow import FlowNetParams, flow_init, flow_rollout, load_flow_net, save_flow_net
from .nn import AdamState, ParamBundle, adam_update, grad_check, mlp_forward, mlp_init
from .operator import (
    ReconNetParams,
    SurrogateModel,
    load_model,
    predict,
    predict_grid,
    recon_init,
    save_model,
)
from .pod import (
    PodBasis,
    ProjectedInputSequence,
    ProjectedState,
    SnapshotMatrix,
    assemble_snapshots,
    load_pod_basis,
    pod,
    project,
    project_batch,
    project_input_signal,
    reconstruct_linear,
    save_pod_basis,
    uniform_subsample,
)
from .sim import (
    Dataset,
    Grid1D,
    KernelParams,
    NeuralFieldModel,
    PiecewiseConstantInput,
    SimConfig,
    Trajectory,
    circular_convolve,
    eval_kernel,
    firing_rate,
    gaussian_kernel_params,
    generate_dataset,
    load_dataset,
    save_dataset,
    simulate,
)
from .training import (
    EvalReport,
    TrainConfig,
    TrainResult,
    empirical_loss,
    evaluate,
    evaluate_baseline,
    fine_tune,
    lhs_times,
    relative_l2,
    split_dataset,
    subset,
    train_baseline,
    train_stage1,
    train_stage2,
)

__all__ = [
    "AdamState",
    "BasisNetParams",
    "BasisTrainConfig",
    "ContractViolation",
    "Dataset",
    "DeepOnetParams",
    "EvalReport",
    "ExperimentConfig",
    "FlowNetParams",
    "Grid1D",
    "KernelParams",
    "NeuralFieldModel",
    "ParamBundle",
    "PiecewiseConstantInput",
    "PodBasis",
    "ProjectedInputSequence",
    "ProjectedState",
    "ReconNetParams",
    "SimConfig",
    "SimulationDiverged",
    "SnapshotMatrix",
    "SurrogateModel",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "Trajectory",
    "adam_update",
    "assemble_snapshots",
    "circular_convolve",
    "don_forward",
    "don_init",
    "don_rollout",
    "empirical_loss",
    "eval_basis",
    "eval_basis_discrete",
    "eval_kernel",
    "evaluate",
    "evaluate_baseline",
    "fine_tune",
    "firing_rate",
    "flow_init",
    "flow_rollout",
    "gaussian_kernel_params",
    "generate_dataset",
    "grad_check",
    "input_windows",
    "lhs_times",
    "load_basis_net",
    "load_config",
    "load_dataset",
    "load_don",
    "load_flow_net",
    "load_model",
    "load_pod_basis",
    "mlp_forward",
    "mlp_init",
    "parity_widths",
    "pod",
    "predict",
    "predict_grid",
    "preset",
    "project",
    "project_batch",
    "project_input_signal",
    "recon_init",
    "reconstruct_linear",
    "relative_l2",
    "save_basis_net",
    "save_config",
    "save_dataset",
    "save_don",
    "save_flow_net",
    "save_model",
    "save_pod_basis",
    "simulate",
    "split_dataset",
    "subset",
    "surrogate_param_count",
    "train_baseline",
    "train_basis",
    "train_stage1",
    "train_stage2",
    "uniform_subsample",
]
