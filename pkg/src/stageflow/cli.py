"""Command-line surface: synth, train, sample, analyze, sweep."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .analysis import (
    estimate_costs,
    gamma_sweep,
    per_stage_marginal_check,
    sliced_wasserstein,
    time_inference,
)
from .config import ConfigError, RunConfig, parse_config, parse_config_text
from .model import (
    VelocityModel,
    init_velocity_model,
    load_flat_params,
    read_checkpoint,
    save_checkpoint,
)
from .report import (
    save_cost_report,
    save_gamma_sweep,
    save_loss_trace,
    save_marginals,
    save_timing_report,
)
from .rten import export_pgm_channels, write_rten
from .sampler import SampleConfig, sample
from .schedule import StageSchedule
from .shapes import load_dataset, synth
from .train import TrainConfig, train


def _schedule_from_config(cfg: RunConfig) -> StageSchedule:
    return StageSchedule(
        K=cfg.K,
        base_height=cfg.base_size,
        base_width=cfg.base_size,
        channels=cfg.channels,
        sigma=cfg.sigma,
        gamma=cfg.gamma,
        steps=tuple(cfg.resolved_steps()),
    )


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        steps=cfg.train_steps,
        batch_size=cfg.batch_size,
        learning_rate=cfg.lr,
        grad_clip=cfg.grad_clip,
        ema_decay=cfg.ema_decay,
        p_drop=cfg.p_drop,
        seed=cfg.seed,
        loss_reduction=cfg.loss_reduction,
    )


def _load_training_data(cfg: RunConfig):
    if not cfg.data_dir:
        raise ConfigError("data_dir is required")
    data = load_dataset(cfg.data_dir, level=cfg.K)
    expected = (cfg.channels, cfg.image_size(), cfg.image_size())
    for img, _ in data:
        if img.data.shape != expected:
            raise ConfigError(
                f"dataset image shape {img.data.shape} != configured {expected}"
            )
    return data


def _model_from_checkpoint(path) -> tuple[VelocityModel, RunConfig, StageSchedule]:
    flat, echo = read_checkpoint(path)
    cfg = parse_config_text(echo)
    sched = _schedule_from_config(cfg)
    model = init_velocity_model(
        channels=cfg.channels,
        num_classes=max(cfg.num_classes, 1),
        base_height=cfg.base_size,
        hidden_channels=cfg.hidden_channels,
        depth=cfg.depth,
        embed_dim=cfg.embed_dim,
    )
    load_flat_params(model, flat)
    return model, cfg, sched


def _cmd_synth(args) -> int:
    if args.size < 1:
        raise ConfigError(f"size must be positive, got {args.size}")
    manifest = synth(
        num_classes=args.classes,
        per_class=args.per_class,
        size=args.size,
        seed=args.seed,
        out_dir=args.out,
        channels=args.channels,
    )
    print(f"wrote {args.classes * args.per_class} images, manifest {manifest}")
    return 0


def _cmd_train(args) -> int:
    cfg = parse_config(args.config)
    if not cfg.out_dir:
        raise ConfigError("out_dir is required")
    data = _load_training_data(cfg)
    if cfg.image_size() % (2 ** (cfg.K - 1)):
        raise ConfigError("image size not divisible by 2^(K-1)")
    sched = _schedule_from_config(cfg)
    labels = [lab for _, lab in data if lab is not None]
    n_classes = cfg.num_classes or (max(labels) + 1 if labels else 1)
    cfg.num_classes = n_classes
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo = cfg.to_echo()

    def checkpoint_cb(step, loss, model, ema_model):
        if cfg.checkpoint_interval and (step + 1) % cfg.checkpoint_interval == 0:
            save_checkpoint(out / f"model_ema_step{step + 1:06d}.ckpt", ema_model, echo)

    model, ema_model, trace = train(
        data,
        sched,
        _train_config(cfg),
        hidden_channels=cfg.hidden_channels,
        depth=cfg.depth,
        embed_dim=cfg.embed_dim,
        num_classes=n_classes,
        step_callback=checkpoint_cb,
    )
    save_checkpoint(out / "model.ckpt", model, echo)
    save_checkpoint(out / "model_ema.ckpt", ema_model, echo)
    save_loss_trace(trace, out / "loss_trace.csv", out / "loss_trace.png")
    print(
        f"trained {cfg.train_steps} steps; final loss {trace[-1]:.6g}"
        if trace
        else "trained 0 steps"
    )
    print(f"checkpoints and loss trace under {out}")
    return 0


def _cmd_sample(args) -> int:
    model, cfg, sched = _model_from_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sample_cfg = SampleConfig(
        schedule=sched,
        guidance_scale=args.cfg_scale,
        condition=args.class_label,
        seed=args.seed,
        record_intermediates=args.save_intermediates,
    )
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i])
        img, trace = sample(model, sample_cfg, rng)
        write_rten(out / f"sample_{i:04d}.rten", img.data)
        if args.pgm:
            export_pgm_channels(out / f"sample_{i:04d}.rten", img.data)
        if trace is not None:
            for k, inter in enumerate(trace.stage_outputs, start=1):
                write_rten(out / f"sample_{i:04d}_stage{k}.rten", inter.data)
    print(f"wrote {args.count} samples under {out}")
    return 0


def _cmd_analyze(args) -> int:
    model, cfg, sched = _model_from_checkpoint(args.checkpoint)
    data = load_dataset(args.data_dir, level=sched.K)
    images = [img for img, _ in data]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    report = estimate_costs(images, sched, n=args.n, rng=rng)
    save_cost_report(report, out / "costs.csv", out / "costs.png")

    sample_cfg = SampleConfig(schedule=sched, guidance_scale=0.0, condition=None,
                              seed=cfg.seed)
    timing = time_inference(model, sample_cfg, trials=args.trials)
    save_timing_report(timing, out / "timing.csv", out / "timing.png")

    distances = per_stage_marginal_check(
        model, images, sched, sample_cfg, n=args.marginal_samples
    )
    save_marginals(distances, out / "marginals.csv", out / "marginals.png")
    print(f"reports under {out}")
    print(
        f"  single-stage cost {report.L_A_hat:.4g} vs cascade {report.L_B_hat:.4g}; "
        f"cascade/single time ratio {timing.cascade_vs_single_ratio:.3f}"
    )
    return 0


def _cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    if not cfg.out_dir:
        raise ConfigError("out_dir is required")
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    if not gammas:
        raise ConfigError("at least one gamma is required")
    data = _load_training_data(cfg)
    n_eval = max(8, len(data) // 8)
    train_part, eval_part = data[:-n_eval], data[n_eval:]
    eval_images = [img for img, _ in eval_part]
    sched = _schedule_from_config(cfg)
    rows = gamma_sweep(
        train_part,
        eval_images,
        sched,
        _train_config(cfg),
        gammas,
        n_eval=args.samples,
        model_kwargs={
            "hidden_channels": cfg.hidden_channels,
            "depth": cfg.depth,
            "embed_dim": cfg.embed_dim,
        },
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_gamma_sweep(rows, out / "gamma_sweep.csv", out / "gamma_sweep.png")
    for r in rows:
        print(f"gamma {r.gamma:g}: sw {r.sw_distance:.5g}, {r.inference_seconds:.4g}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stageflow")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate the labeled shapes dataset")
    sp.add_argument("--classes", type=int, default=8)
    sp.add_argument("--per-class", type=int, default=64)
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--channels", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_cmd_synth)

    tp = sub.add_parser("train", help="train from a key=value config file")
    tp.add_argument("config")
    tp.set_defaults(func=_cmd_train)

    gp = sub.add_parser("sample", help="draw samples from a checkpoint")
    gp.add_argument("--checkpoint", required=True)
    gp.add_argument("--count", type=int, default=1)
    gp.add_argument("--cfg-scale", type=float, default=3.0)
    gp.add_argument("--class", dest="class_label", type=int, default=None)
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--save-intermediates", action="store_true")
    gp.add_argument("--pgm", action="store_true")
    gp.add_argument("--out", default="samples")
    gp.set_defaults(func=_cmd_sample)

    ap = sub.add_parser("analyze", help="cost, timing, and marginal reports")
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--data-dir", required=True)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--marginal-samples", type=int, default=64)
    ap.add_argument("--out", default="reports")
    ap.set_defaults(func=_cmd_analyze)

    wp = sub.add_parser("sweep", help="train and evaluate per noise-decay factor")
    wp.add_argument("config")
    wp.add_argument("--gammas", default="1,2,4")
    wp.add_argument("--samples", type=int, default=64)
    wp.set_defaults(func=_cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
