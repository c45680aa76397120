"""Command line entry points.

    bridgekit gen-data --out DIR [--config FILE] [--n N] [--seed S]
    bridgekit train    --data MANIFEST --out DIR [--config FILE] [--resume CKPT]
    bridgekit sample   --ckpt FILE --input PATH --out FILE [options]
    bridgekit eval     --data MANIFEST --pred NAME=FILE ... --out DIR
    bridgekit oracle   [--check NAME]

Every artifact-writing command echoes its fully resolved configuration
as run.cfg next to its outputs. Exit codes: 0 success, 1 failed check or
training blow-up, 2 configuration or usage errors, 3 I/O errors, 4 data
that disagrees with its manifest or format.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checks, config as cfgmod, evaluation, network, sampling, synthdata, training
from .bten import read_bten, write_bten
from .errors import (
    BridgekitError,
    ConfigError,
    ContractError,
    DataMismatchError,
    DomainError,
    FormatError,
    TrainingError,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4


def _load_cfg(path: str | None) -> dict:
    if path is None:
        return cfgmod.default_config()
    return cfgmod.load_config(path)


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args.config)
    if args.n is not None:
        cfg["data.n_samples"] = int(args.n)
    if args.seed is not None:
        cfg["data.seed"] = int(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = synthdata.build_dataset(
        out,
        cfg["data.n_samples"],
        cfgmod.to_phantom_spec(cfg),
        cfgmod.to_lesion_spec(cfg),
        seed=cfg["data.seed"],
    )
    cfgmod.write_run_config(out, cfg)
    counts = {"train": 0, "val": 0, "test": 0}
    for i in range(cfg["data.n_samples"]):
        counts[synthdata.split_of_id(i)] += 1
    print(f"wrote {cfg['data.n_samples']} pairs to {manifest}")
    print(f"split train={counts['train']} val={counts['val']} test={counts['test']}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    data = synthdata.load_dataset(args.data).subset("train")
    if not data.ids:
        raise DataMismatchError(f"{args.data}: train split is empty")
    schedule = cfgmod.to_schedule(cfg)
    net_cfg = cfgmod.to_net_config(cfg)
    train_cfg = cfgmod.to_train_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_run_config(out, cfg)
    xT = data.pathological if train_cfg.objective == "dbsm" else None
    resume = network.load_checkpoint(args.resume) if args.resume else None
    result = training.train(
        schedule, net_cfg, train_cfg, data.healthy, xT,
        out_dir=out, log_path=out / "log.csv", resume_from=resume,
    )
    final_loss = result.history[-1][1]
    ran = len(result.history)
    tag = f"resumed at step {resume.step + 1}, " if resume is not None else ""
    print(f"trained {train_cfg.objective} for {ran} steps ({tag}"
          f"{train_cfg.total_steps} total) on {len(data.ids)} samples; "
          f"final loss {final_loss:.6g}")
    print(f"checkpoint {out / 'ckpt_final.bten'}")
    return EXIT_OK


def _read_sample_input(path: str, split: str) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".csv":
        data = synthdata.load_dataset(p).subset(split)
        if not data.ids:
            raise DataMismatchError(f"{path}: split {split!r} is empty")
        return data.pathological
    tensors = read_bten(p)
    if "images" not in tensors:
        raise FormatError(f"{path}: expected an entry named 'images'")
    return np.asarray(tensors["images"], dtype=np.float64)


def cmd_sample(args) -> int:
    ckpt = network.load_checkpoint(args.ckpt)
    images = _read_sample_input(args.input, args.split)
    if images.ndim != 3:
        raise ContractError(f"sample input must be (B, S, S), got shape {images.shape}")
    sample_cfg = sampling.SampleConfig(
        n_steps=args.steps,
        eta=args.eta,
        seed=args.seed,
        strict_deterministic=args.strict_deterministic,
        grid=args.grid,
    )
    method = args.method
    if method == "auto":
        if ckpt.objective == "dbsm":
            method = "dbim"
        else:
            method = "partial" if args.t_star is not None else "ancestral"
    if method in ("dbim", "sde"):
        if method == "dbim":
            result = sampling.dbim_sample(ckpt, ckpt.schedule, images, sample_cfg)
        else:
            result = sampling.reverse_bridge_sde_sample(ckpt, ckpt.schedule, images, sample_cfg)
    elif method == "partial":
        if args.t_star is None:
            raise ConfigError("--method partial needs --t-star")
        result = sampling.partial_diffusion_counterfactual(
            ckpt, ckpt.schedule, images, args.t_star, sample_cfg
        )
    else:
        result = sampling.ddpm_ancestral_sample(ckpt, ckpt.schedule, sample_cfg, shape=images.shape)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_bten(out, {"images": result})
    cfg = cfgmod.default_config()
    cfg["sample.n_steps"] = sample_cfg.n_steps
    cfg["sample.eta"] = sample_cfg.eta
    cfg["sample.seed"] = sample_cfg.seed
    cfg["sample.strict_deterministic"] = sample_cfg.strict_deterministic
    cfg["sample.grid"] = sample_cfg.grid
    cfgmod.write_run_config(out.parent, cfg)
    print(f"sampled {result.shape[0]} images via {method} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    if args.smooth_radius is not None:
        cfg["eval.smooth_radius"] = args.smooth_radius
    data = synthdata.load_dataset(args.data).subset(args.split)
    if not data.ids:
        raise DataMismatchError(f"{args.data}: split {args.split!r} is empty")
    phantom = cfgmod.to_phantom_spec(cfg)
    table = {}
    per_sample = {}
    region = {}
    for spec in args.pred:
        if "=" not in spec:
            raise ConfigError(f"--pred must be NAME=FILE, got {spec!r}")
        name, _, path = spec.partition("=")
        tensors = read_bten(path)
        if "images" not in tensors:
            raise FormatError(f"{path}: expected an entry named 'images'")
        preds = np.asarray(tensors["images"], dtype=np.float64)
        if preds.shape != data.pathological.shape:
            raise DataMismatchError(
                f"{path}: prediction stack {preds.shape} does not cover "
                f"split {args.split!r} ids {data.ids} "
                f"(expected {data.pathological.shape})"
            )
        maps = [
            evaluation.anomaly_map(x, cf, cfg["eval.smooth_radius"])
            for x, cf in zip(data.pathological, preds)
        ]
        masks = list(data.masks)
        table[name] = evaluation.cohort_metrics(maps, masks)
        per_sample[name] = [
            (sample_id,) + row
            for sample_id, row in zip(data.ids, evaluation.per_sample_max_dice(maps, masks))
        ]
        region[name] = evaluation.region_dice_table(data.healthy, preds, phantom)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_report_csv(out / "report.csv", table, per_sample, region)
    cfgmod.write_run_config(out, cfg)
    print(evaluation.format_report_table(table))
    print(f"report {out / 'report.csv'}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        results = checks.run_suite(args.check)
    except KeyError:
        raise ConfigError(
            f"unknown check {args.check!r}; choose from {sorted(checks.SUITES)} or all"
        ) from None
    worst = EXIT_OK
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status}  {res.name}: deviation {res.deviation:.3g} (tol {res.tol:.3g})")
        if not res.passed:
            worst = EXIT_FAIL
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bridgekit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a paired phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, help="master seed, overrides data.seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a score network on a dataset")
    p.add_argument("--data", required=True, help="manifest.csv of a generated dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="run a sampler from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="manifest.csv or a BTEN stack of images")
    p.add_argument("--out", required=True, help="output BTEN file")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="test")
    p.add_argument("--method", choices=("auto", "dbim", "sde", "ancestral", "partial"),
                   default="auto")
    p.add_argument("--t-star", type=float, default=None)
    p.add_argument("--strict-deterministic", action="store_true")
    p.add_argument("--grid", choices=sampling.GRIDS, default="uniform_t")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score counterfactuals against ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--pred", action="append", required=True, metavar="NAME=FILE")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--config")
    p.add_argument("--smooth-radius", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="run analytic cross-checks")
    p.add_argument("--check", default="all",
                   choices=tuple(checks.SUITES) + ("all",))
    p.set_defaults(func=cmd_oracle)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataMismatchError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ContractError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BridgekitError as exc:  # anything deliberate but unclassified
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
