"""Command-line entry points: data generation, training, estimation, sweeps."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import baselines, bench, ddrm, diffusion
from .channel import FasGeometry, generate_dataset, load_dataset
from .measurement import (Observation, build_spectral_maps, load_observation, load_schedule)

OUTPUT_ROOT_ENV = "FASDM_OUTPUT_ROOT"


def _resolve(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        os.makedirs(root, exist_ok=True)
        return os.path.join(root, path)
    return path


def _add_geometry_args(p: argparse.ArgumentParser):
    p.add_argument("--n1", type=int, required=True, help="ports along x")
    p.add_argument("--n2", type=int, required=True, help="ports along y")
    p.add_argument("--w1", type=float, required=True, help="aperture along x (wavelengths)")
    p.add_argument("--w2", type=float, required=True, help="aperture along y (wavelengths)")


def _geometry(args) -> FasGeometry:
    return FasGeometry(n1=args.n1, n2=args.n2, w1=args.w1, w2=args.w2)


def cmd_generate_data(args) -> int:
    geom = _geometry(args)
    out = _resolve(args.out)
    generate_dataset(geom, args.paths, args.count, args.seed, out, carrier_ghz=args.carrier_ghz)
    print(f"wrote {args.count} realizations ({geom.n1}x{geom.n2}) to {out}")
    return 0


def cmd_train(args) -> int:
    from . import denoiser as dn

    data, geom = load_dataset(args.data)
    sched = diffusion.make_schedule(args.t_max, args.beta1, args.beta_t)
    arch = dn.DenoiserArch(base_width=args.base_width)
    model = dn.build_denoiser(arch, seed=args.seed)
    cfg = diffusion.TrainConfig(batch=args.batch, epochs=args.epochs,
                                learning_rate=args.lr, seed=args.seed)
    out = _resolve(args.out)
    ckpt_dir = os.path.dirname(out) or "."

    def log(epoch, loss):
        print(f"epoch {epoch + 1}/{cfg.epochs}: loss {loss:.6f}", flush=True)

    history = diffusion.train(data, model, geom, sched, cfg,
                              checkpoint_dir=ckpt_dir,
                              checkpoint_every=args.checkpoint_every,
                              log_fn=log if args.verbose else None)
    dn.save_checkpoint(out, model, sched,
                       dataset_fingerprint=dn.schedule_fingerprint(sched))
    if args.loss_csv:
        diffusion.save_loss_history(history, _resolve(args.loss_csv))
    print(f"final loss {history[-1]:.6f}; checkpoint at {out}")
    return 0


def cmd_estimate(args) -> int:
    from . import denoiser as dn

    geom = _geometry(args)
    model, sched, header = dn.load_checkpoint(args.checkpoint)
    denoise_fn = dn.make_denoise_fn(model, geom)
    schedule = load_schedule(args.schedule)
    y, sigma, _ = load_observation(args.observation)
    obs = Observation(y=y, sigma=sigma, schedule=schedule)
    maps = build_spectral_maps(schedule, geom)
    traj = ddrm.make_trajectory(sched.t_max, args.t_prime or sched.t_max)
    sample, wall_ms = ddrm.timed_estimate(obs, maps, denoise_fn, sched, traj)
    nmse_val = None
    if args.truth:
        records, _ = load_dataset(args.truth)
        nmse_val = bench.nmse(sample.h_real, records[args.truth_index])
        print(f"nmse: {nmse_val:.6g} ({10 * np.log10(nmse_val):.2f} dB)")
    out = _resolve(args.out)
    ddrm.save_estimate(out, sample, traj, ddrm.DdrmHyper(), wall_clock_ms=wall_ms,
                       nmse=nmse_val,
                       checkpoint_fingerprint=header["schedule"]["fingerprint"])
    print(f"estimate written to {out} ({wall_ms:.1f} ms)")
    return 0


def _config_from_json(path: str, seed=None, checkpoint=None) -> bench.ExperimentConfig:
    with open(path) as fh:
        raw = json.load(fh)
    g = raw.pop("geometry")
    geom = FasGeometry(n1=g["n1"], n2=g["n2"], w1=g["w1"], w2=g["w2"])
    if seed is not None:
        raw["seed"] = seed
    if checkpoint is not None:
        raw["checkpoint"] = checkpoint
    return bench.ExperimentConfig(geometry=geom, **raw)


def cmd_bench(args) -> int:
    cfg = _config_from_json(args.config, seed=args.seed, checkpoint=args.checkpoint)
    out_dir = _resolve(args.out_dir)
    os.makedirs(out_dir, exist_ok=True)

    def progress(snr, delta, trial):
        if args.verbose and (trial + 1) % 10 == 0:
            print(f"snr={snr} delta={delta:.3f}: trial {trial + 1}/{cfg.trials}", flush=True)

    rows, raw = bench.run_benchmark(cfg, progress_fn=progress)
    bench.write_results_csv(rows, os.path.join(out_dir, "results.csv"))
    bench.write_raw_trials(raw, os.path.join(out_dir, "raw_trials.jsonl"))
    for r in rows:
        print(f"{r.method:10s} snr={r.snr_db:6.1f} dB  delta={r.delta:.3f}  "
              f"nmse={r.nmse_db:7.2f} dB  ({r.trials} trials)")
    return 0


def cmd_plot_data(args) -> int:
    rows = bench.read_results_csv(args.results) if args.results else []
    raw = bench.read_raw_trials(args.raw) if args.raw else None
    out = _resolve(args.out)
    bench.emit_plot_data(rows, args.kind, out, raw=raw)
    print(f"plot data written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fasdm",
                                     description="Diffusion-prior channel estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="generate a channel dataset file")
    _add_geometry_args(p)
    p.add_argument("--paths", type=int, default=90)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--carrier-ghz", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train the denoiser on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--t-max", type=int, default=500)
    p.add_argument("--beta1", type=float, default=1e-4)
    p.add_argument("--beta-t", type=float, default=0.02)
    p.add_argument("--base-width", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--loss-csv", default=None)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("estimate", help="estimate a channel from an observation file")
    _add_geometry_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--observation", required=True)
    p.add_argument("--schedule", required=True)
    p.add_argument("--t-prime", type=int, default=None)
    p.add_argument("--truth", default=None, help="dataset file with the ground truth")
    p.add_argument("--truth-index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bench", help="run an NMSE/latency sweep from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out-dir", default="bench_out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot-data", help="emit plot-ready CSV from sweep outputs")
    p.add_argument("--results", default=None)
    p.add_argument("--raw", default=None)
    p.add_argument("--kind", required=True, choices=bench.PLOT_KINDS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
