"""Experiment harness: NMSE metrics, SNR/sampling-ratio sweeps, latency.

Every sweep is replayable: all randomness derives from the config seed via
per-(point, trial) seed sequences, and all estimators see the same channel,
schedule, and noise realization within a trial. Aggregated CSV output
contains only seed-deterministic columns; wall-clock measurements live in
the raw per-trial records.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import baselines, ddrm
from .channel import FasGeometry, generate_channel
from .diffusion import NoiseSchedule
from .measurement import build_schedule, build_spectral_maps, observe

KNOWN_METHODS = ("ddrm_fast", "ddrm_full", "omp", "sbl")


@dataclass
class ExperimentConfig:
    geometry: FasGeometry
    num_paths: int
    m: int
    snr_db: list
    methods: list
    l: int | None = None
    deltas: list | None = None
    trials: int = 100
    seed: int = 0
    t_prime: int = 25
    checkpoint: str | None = None
    sbl_grid: int = 50
    sbl_max_iter: int = 500
    sbl_tol: float = 1e-4
    hyper: ddrm.DdrmHyper = field(default_factory=ddrm.DdrmHyper)

    def __post_init__(self):
        if not self.snr_db:
            raise ValueError("snr_db list must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.methods) - set(KNOWN_METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if (self.l is None) == (self.deltas is None):
            raise ValueError("exactly one of l or deltas must be given")
        n = self.geometry.num_ports
        for l in self.l_values():
            delta = l * self.m / n
            if not 0 < delta <= 1:
                raise ValueError(f"sampling ratio {delta} outside (0, 1]")

    def l_values(self) -> list:
        if self.l is not None:
            return [self.l]
        n = self.geometry.num_ports
        return [max(1, round(d * n / self.m)) for d in self.deltas]


@dataclass
class ResultRow:
    method: str
    snr_db: float
    delta: float
    nmse_lin: float
    nmse_db: float
    wall_ms_mean: float
    wall_ms_std: float
    trials: int
    seed: int


def nmse(h_hat: np.ndarray, h: np.ndarray) -> float:
    """Squared-error energy of the estimate relative to the truth's energy."""
    h_hat = np.asarray(h_hat)
    h = np.asarray(h)
    if h_hat.shape != h.shape:
        raise ValueError("estimate and truth must share a shape")
    denom = float(np.sum(np.abs(h) ** 2))
    if denom == 0:
        raise ValueError("ground truth has zero energy")
    return float(np.sum(np.abs(h_hat - h) ** 2)) / denom


def snr_to_sigma(snr_db: float) -> tuple[float, float]:
    """(complex noise std, per-real-coordinate std) for SNR = 1/sigma^2."""
    sigma_complex = 10.0 ** (-snr_db / 20.0)
    return sigma_complex, sigma_complex / np.sqrt(2.0)


class _MethodRunner:
    """Builds estimator closures once per config, then runs them per trial."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.denoise_fn = None
        self.sched: NoiseSchedule | None = None
        if any(m.startswith("ddrm") for m in cfg.methods):
            if cfg.checkpoint is None:
                raise ValueError("ddrm methods require a checkpoint")
            from . import denoiser as dn
            model, sched, _ = dn.load_checkpoint(cfg.checkpoint)
            self.denoise_fn = dn.make_denoise_fn(model, cfg.geometry)
            self.sched = sched
        self.dft = baselines.build_dft_dictionary(cfg.geometry) if "omp" in cfg.methods else None
        self.angle = (baselines.build_angle_dictionary(cfg.geometry, cfg.sbl_grid)
                      if "sbl" in cfg.methods else None)

    def run(self, method: str, obs, maps, sigma_complex: float):
        cfg = self.cfg
        if method == "ddrm_fast":
            traj = ddrm.make_trajectory(self.sched.t_max, cfg.t_prime)
            return ddrm.estimate(obs, maps, self.denoise_fn, self.sched, traj, cfg.hyper)
        if method == "ddrm_full":
            traj = ddrm.make_trajectory(self.sched.t_max, self.sched.t_max)
            return ddrm.estimate(obs, maps, self.denoise_fn, self.sched, traj, cfg.hyper)
        if method == "omp":
            return baselines.omp_estimate(obs, self.dft, k=cfg.num_paths).estimate
        if method == "sbl":
            return baselines.sbl_estimate(obs, self.angle, noise_var=sigma_complex ** 2,
                                          max_iter=cfg.sbl_max_iter, tol=cfg.sbl_tol).estimate
        raise ValueError(f"unknown method {method}")


def run_benchmark(cfg: ExperimentConfig, progress_fn=None) -> tuple[list[ResultRow], list[dict]]:
    """Sweep (method, snr, sampling ratio, trial) and collect NMSE + timing.

    Within a trial every method shares the channel, schedule and noise
    draw. Estimator failures are recorded as failed raw rows and skipped in
    the aggregates.
    """
    runner = _MethodRunner(cfg)
    n = cfg.geometry.num_ports
    rows: list[ResultRow] = []
    raw: list[dict] = []

    point_idx = 0
    for snr_db in cfg.snr_db:
        sigma_c, sigma_r = snr_to_sigma(snr_db)
        for l in cfg.l_values():
            delta = l * cfg.m / n
            per_method: dict[str, list] = {m: [] for m in cfg.methods}
            per_method_ms: dict[str, list] = {m: [] for m in cfg.methods}
            for trial in range(cfg.trials):
                rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, point_idx, trial)))
                sample = generate_channel(cfg.geometry, cfg.num_paths, rng)
                sched = build_schedule(cfg.geometry, cfg.m, l, rng)
                obs = observe(sample, sched, sigma_r, rng)
                maps = build_spectral_maps(sched, cfg.geometry)
                for method in cfg.methods:
                    record = {"method": method, "snr_db": snr_db, "delta": delta, "trial": trial}
                    start = time.perf_counter()
                    try:
                        est = runner.run(method, obs, maps, sigma_c)
                        record["wall_clock_ms"] = (time.perf_counter() - start) * 1e3
                        record["nmse"] = nmse(est.h_real, sample.h_real)
                        per_method[method].append(record["nmse"])
                        per_method_ms[method].append(record["wall_clock_ms"])
                    except Exception as exc:  # keep the sweep alive
                        record["wall_clock_ms"] = (time.perf_counter() - start) * 1e3
                        record["nmse"] = None
                        record["error"] = str(exc)
                    raw.append(record)
                if progress_fn is not None:
                    progress_fn(snr_db, delta, trial)
            for method in cfg.methods:
                vals = per_method[method]
                if not vals:
                    continue
                mean_nmse = float(np.mean(vals))
                ms = per_method_ms[method]
                rows.append(ResultRow(
                    method=method, snr_db=snr_db, delta=delta,
                    nmse_lin=mean_nmse, nmse_db=10.0 * np.log10(mean_nmse),
                    wall_ms_mean=float(np.mean(ms)), wall_ms_std=float(np.std(ms)),
                    trials=len(vals), seed=cfg.seed))
            point_idx += 1
    return rows, raw


RESULT_COLUMNS = ["method", "snr_db", "delta", "nmse_lin", "nmse_db", "trials", "seed"]


def write_results_csv(rows: list[ResultRow], path: str):
    """Aggregated results; timing is excluded so reruns are byte-identical."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in rows:
            writer.writerow([r.method, repr(float(r.snr_db)), repr(float(r.delta)),
                             repr(r.nmse_lin), repr(r.nmse_db), r.trials, r.seed])


def read_results_csv(path: str) -> list[ResultRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ResultRow(
                method=rec["method"], snr_db=float(rec["snr_db"]), delta=float(rec["delta"]),
                nmse_lin=float(rec["nmse_lin"]), nmse_db=float(rec["nmse_db"]),
                wall_ms_mean=float("nan"), wall_ms_std=float("nan"),
                trials=int(rec["trials"]), seed=int(rec["seed"])))
    return rows


def write_raw_trials(raw: list[dict], path: str):
    with open(path, "w") as fh:
        for record in raw:
            fh.write(json.dumps(record) + "\n")


def read_raw_trials(path: str) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def measure_latency(method: str, cfg: ExperimentConfig, warmup: int = 1, reps: int = 10) -> dict:
    """Median and IQR of the online estimation wall clock, in milliseconds.

    Model loading and dictionary construction happen before timing starts;
    warmup runs are discarded.
    """
    if reps < 3:
        raise ValueError("reps must be >= 3")
    runner = _MethodRunner(cfg)
    sigma_c, sigma_r = snr_to_sigma(cfg.snr_db[0])
    l = cfg.l_values()[0]
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0, 0)))
    sample = generate_channel(cfg.geometry, cfg.num_paths, rng)
    sched = build_schedule(cfg.geometry, cfg.m, l, rng)
    obs = observe(sample, sched, sigma_r, rng)
    maps = build_spectral_maps(sched, cfg.geometry)

    times = []
    for rep in range(warmup + reps):
        start = time.perf_counter()
        runner.run(method, obs, maps, sigma_c)
        elapsed = (time.perf_counter() - start) * 1e3
        if rep >= warmup:
            times.append(elapsed)
    q1, med, q3 = np.percentile(times, [25, 50, 75])
    return {"method": method, "median_ms": float(med), "iqr_ms": float(q3 - q1),
            "reps": reps, "times_ms": times}


PLOT_KINDS = ("nmse_vs_snr", "nmse_vs_ratio", "latency")


def emit_plot_data(rows: list[ResultRow], kind: str, path: str,
                   raw: list[dict] | None = None):
    """Write plot-ready CSV for one figure kind, one series per method."""
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}")
    if kind == "latency":
        if not raw:
            raise ValueError("latency plot needs raw per-trial records")
        methods = sorted({r["method"] for r in raw})
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "median_ms", "iqr_ms"])
            for method in methods:
                times = [r["wall_clock_ms"] for r in raw if r["method"] == method
                         and r.get("nmse") is not None]
                q1, med, q3 = np.percentile(times, [25, 50, 75])
                writer.writerow([method, repr(float(med)), repr(float(q3 - q1))])
        return
    if not rows:
        raise ValueError("no result rows to plot")
    x_field = "snr_db" if kind == "nmse_vs_snr" else "delta"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", x_field, "nmse_db"])
        for r in rows:
            writer.writerow([r.method, repr(float(getattr(r, x_field))), repr(r.nmse_db)])
