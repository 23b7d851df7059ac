"""Command-line pipeline: generate, project, train, compare and evaluate.

Every subcommand accepts ``--config`` (INI overrides), ``--preset``
(built-in scale: full, desk or micro), ``--seed`` and ``--out``.  Exit
codes: 0 on success, 2 when an input violates a contract, 3 when a
simulation or training run diverges.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config, preset
from .deeponet import load_don, save_don, surrogate_param_count
from .errors import ContractViolation, SimulationDiverged, TrainingDiverged
from .flow import flow_init
from .nn import mlp_init
from .operator import load_model, predict, recon_init, save_model
from .pod import assemble_snapshots, load_pod_basis, pod, save_pod_basis
from .sim import generate_dataset, load_dataset, read_trajectory, save_dataset
from .basis import train_basis, save_basis_net
from .training import (
    evaluate,
    evaluate_baseline,
    fine_tune,
    split_dataset,
    train_baseline,
    train_stage1,
    train_stage2,
)


def _resolve_config(args) -> ExperimentConfig:
    cfg = preset(args.preset)
    if args.config is not None:
        cfg = load_config(args.config, base=cfg)
    return cfg


def _resolve_seed(args, cfg: ExperimentConfig) -> int:
    return args.seed if args.seed is not None else cfg.train.seed


def _train_config(args, cfg: ExperimentConfig):
    return dataclasses.replace(cfg.train, seed=_resolve_seed(args, cfg))


def _reference_count(cfg: ExperimentConfig) -> int:
    """Trainable-parameter total of the surrogate the config describes."""
    rng = np.random.default_rng(0)
    tc = cfg.train
    flow = flow_init(rng, cfg.r, tc.hidden_dim, tc.encoder_hidden,
                     tc.decoder_hidden)
    recon = recon_init(rng, cfg.r, tc.recon_hidden)
    basis_mlp = mlp_init(rng, [2 * cfg.basis.n_features, *cfg.basis.hidden,
                               cfg.r])
    return (basis_mlp.size + flow.encoder.size + flow.cell.size
            + flow.decoder.size + recon.mlp.size)


def _read_queries(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for record in csv.reader(fh):
            if not record or not record[0].strip():
                continue
            try:
                rows.append((float(record[0]), float(record[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ContractViolation(f"{path}: bad query row {record}")
                continue  # header line
    if not rows:
        raise ContractViolation(f"{path}: no (x, t) query rows found")
    return np.array(rows)


def _load_trajectory(path):
    """Read one trajectory file using the manifest of its dataset directory."""
    path = Path(path)
    meta_path = path.parent / "meta.json"
    if not meta_path.is_file():
        raise ContractViolation(
            f"{path}: expected dataset manifest next to it at {meta_path}")
    meta = json.loads(meta_path.read_text())
    return read_trajectory(path, delta=meta["delta"], t_end=meta["t_end"],
                           bound=meta.get("input_bound", 5.0))


def _pick_indices(args, dataset, seed, cfg) -> np.ndarray:
    if args.subset == "all":
        return np.arange(dataset.n)
    split = split_dataset(dataset.n, cfg.train.split, seed)
    return getattr(split, args.subset)


def _report_summary(report, label: str) -> None:
    print(f"{label}: n={len(report.errors)} mean_rel_l2={report.mean:.6f} "
          f"std={report.std:.6f} horizon={report.horizon}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    dataset = generate_dataset(cfg.sim, seed=_resolve_seed(args, cfg),
                               n_jobs=args.jobs or cfg.n_jobs)
    save_dataset(dataset, args.out)
    print(f"wrote {dataset.n} trajectories to {args.out}")
    return 0


def _cmd_pod(args) -> int:
    cfg = _resolve_config(args)
    dataset = load_dataset(args.data)
    r = args.r if args.r is not None else cfg.r
    nx = args.nx if args.nx is not None else cfg.train.n_spatial
    basis = pod(assemble_snapshots(dataset, nx), r)
    save_pod_basis(basis, args.out)
    print(f"wrote rank-{r} basis over {nx} sensors to {args.out}")
    return 0


def _cmd_train_basis(args) -> int:
    cfg = _resolve_config(args)
    target = load_pod_basis(args.pod)
    result = train_basis(target, cfg.basis, seed=_resolve_seed(args, cfg))
    save_basis_net(args.out, result.params,
                   extra_meta={"best_loss": result.best_loss,
                               "best_epoch": result.best_epoch})
    print(f"basis fit: best loss {result.best_loss:.6e} "
          f"at epoch {result.best_epoch}; wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    tc = _train_config(args, cfg)
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, basis_result = train_stage1(dataset, cfg.r, tc, basis_cfg=cfg.basis)
    result = train_stage2(dataset, basis_result.params, tc,
                          curves_path=out / "curves.csv")
    save_model(result.model, out)
    print(f"trained surrogate: best val loss {result.best_val:.6e} "
          f"at epoch {result.best_epoch}; wrote {out}")
    return 0


def _cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    tc = _train_config(args, cfg)
    pretrained = load_model(args.model)
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fine_tune(pretrained, dataset, tc, basis_cfg=cfg.basis,
                       curves_path=out / "curves.csv")
    save_model(result.model, out)
    print(f"fine-tuned surrogate: best val loss {result.best_val:.6e} "
          f"at epoch {result.best_epoch}; wrote {out}")
    return 0


def _cmd_baseline(args) -> int:
    cfg = _resolve_config(args)
    tc = _train_config(args, cfg)
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model is not None:
        reference = surrogate_param_count(load_model(args.model))
    else:
        reference = _reference_count(cfg)
    result = train_baseline(dataset, tc, reference, window=cfg.window,
                            curves_path=out / "curves.csv", r_b=cfg.r_b)
    save_don(out / "baseline.rxw", result.params,
             extra_meta={"best_epoch": result.best_epoch,
                         "best_val": result.best_val,
                         "reference_count": reference})
    print(f"trained comparison operator net: best val loss "
          f"{result.best_val:.6e} at epoch {result.best_epoch}; wrote {out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    seed = _resolve_seed(args, cfg)
    dataset = load_dataset(args.data)
    indices = _pick_indices(args, dataset, seed, cfg)
    horizon = args.horizon if args.horizon is not None else cfg.horizon
    jobs = args.jobs or cfg.n_jobs
    if (args.model is None) == (args.baseline is None):
        raise ContractViolation("give exactly one of --model or --baseline")
    if args.model is not None:
        model = load_model(args.model)
        report = evaluate(model, dataset, indices=indices, horizon=horizon,
                          n_spatial=cfg.train.n_spatial, n_jobs=jobs)
        label = "surrogate"
    else:
        params, _ = load_don(args.baseline)
        report = evaluate_baseline(params, dataset, indices=indices,
                                   horizon=horizon,
                                   n_spatial=cfg.train.n_spatial, n_jobs=jobs)
        label = "baseline"
    report.to_csv(args.out)
    _report_summary(report, label)
    return 0


def _cmd_predict(args) -> int:
    model = load_model(args.model)
    traj = _load_trajectory(args.traj)
    queries = _read_queries(args.queries)
    values = predict(model, traj.u0, traj.input, queries)
    with open(args.out, "w", newline="") as fh:
        fh.write("x,t,u_hat\n")
        for (x, t), u in zip(queries, values):
            fh.write(f"{float(x)!r},{float(t)!r},{float(u)!r}\n")
    print(f"wrote {len(values)} predictions to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file overriding preset values")
    common.add_argument("--preset", default="full",
                        choices=("full", "desk", "micro"),
                        help="built-in experiment scale (default: full)")
    common.add_argument("--seed", type=int, default=None,
                        help="master seed (default: value from config)")
    common.add_argument("--out", required=True, help="output file or directory")

    parser = argparse.ArgumentParser(
        prog="fieldflow",
        description="Reduced-order surrogate pipeline for a lateral-"
                    "inhibition neural field equation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="simulate a dataset of stimulus-driven fields")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("pod", parents=[common],
                       help="extract an orthogonal mode basis from snapshots")
    p.add_argument("--data", required=True)
    p.add_argument("--r", type=int, default=None)
    p.add_argument("--nx", type=int, default=None)
    p.set_defaults(func=_cmd_pod)

    p = sub.add_parser("train-basis", parents=[common],
                       help="fit the coordinate network to stored modes")
    p.add_argument("--pod", required=True)
    p.set_defaults(func=_cmd_train_basis)

    p = sub.add_parser("train", parents=[common],
                       help="run both training stages and save the surrogate")
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", parents=[common],
                       help="adapt a trained surrogate to a new dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("baseline", parents=[common],
                       help="train the operator-network comparison model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None,
                   help="surrogate directory fixing the parameter budget")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("evaluate", parents=[common],
                       help="per-trajectory relative errors as CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--model", default=None, help="surrogate directory")
    p.add_argument("--baseline", default=None,
                   help="comparison-model checkpoint (.rxw)")
    p.add_argument("--subset", default="test",
                   choices=("train", "val", "test", "all"))
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("predict", parents=[common],
                       help="evaluate a surrogate at (x, t) queries")
    p.add_argument("--model", required=True)
    p.add_argument("--traj", required=True,
                   help="trajectory file inside a generated dataset directory")
    p.add_argument("--queries", required=True, help="CSV with x,t rows")
    p.set_defaults(func=_cmd_predict)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 2
    except (SimulationDiverged, TrainingDiverged) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
