"""Monte Carlo BER engine: configuration, presets, trials, SNR sweeps and
result files."""

import configparser
import csv
import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import __version__
from .blindrx import TurboConfig, format_diagnostics, turbo_demod_decode
from .channel import (
    SumOfSinusoidsFading,
    Tu6Profile,
    apply_block_phase,
    apply_tu6,
    complex_noise,
    snr_to_sigma2,
)
from .estimators import Transmitter
from .ofdm import OfdmFormat, ofdm_demodulate

logger = logging.getLogger(__name__)

FORMATS = {"toy": OfdmFormat.toy, "mode1": OfdmFormat.mode1}
CHANNELS = ("awgn", "block-phase", "tu6")

CSV_HEADER = ["snr_db", "iteration", "bit_errors", "bits", "ber", "frames", "seconds"]


@dataclass(frozen=True)
class SimConfig:
    format: str = "toy"
    fft_size: int = None  # overrides of the named format
    n_cp: int = None
    n_symbols: int = None
    interleaver_seed: int = 1
    channel: str = "awgn"
    doppler_hz: float = 10.0
    phase: object = "random"  # radians or "random"
    receiver: str = "perfect-csi"
    L: int = 32
    M: int = 64
    N: int = 10
    iterations: int = 3
    snr_db: tuple = (4.0,)
    num_runs: int = 100
    frame_depth: int = 1
    master_seed: int = 0
    early_stop: bool = True
    min_errors: int = 200
    min_frames: int = 30
    stop_iteration: int = None  # iteration whose errors drive early stop; default last

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in np.atleast_1d(self.snr_db)))
        if self.format not in FORMATS:
            raise ValueError(f"unknown format {self.format!r}; choose from {sorted(FORMATS)}")
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}; choose from {CHANNELS}")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")
        if self.frame_depth < 1:
            raise ValueError("frame_depth must be >= 1")
        self.turbo_config().validate(self.ofdm_format())
        if self.stop_iteration is not None and not 0 <= self.stop_iteration <= self.iterations:
            raise ValueError("stop_iteration must lie in [0, iterations]")

    def ofdm_format(self):
        base = FORMATS[self.format]()
        return OfdmFormat(
            self.fft_size or base.fft_size,
            base.n_cp if self.n_cp is None else self.n_cp,
            self.n_symbols or base.n_symbols,
        )

    def turbo_config(self):
        return TurboConfig(self.receiver, self.L, self.M, self.N, self.iterations)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class BerRecord:
    snr_db: float
    iteration: int
    bit_errors: int = 0
    bits: int = 0
    frames: int = 0
    seconds: float = 0.0

    @property
    def ber(self):
        return self.bit_errors / self.bits if self.bits else 0.0


PRESETS = {
    "toy": SimConfig(),
    "fig4-awgn-n4": SimConfig(
        format="mode1", receiver="perfect-csi", N=4, snr_db=(2, 3, 4, 5, 6, 7), num_runs=1000
    ),
    "fig4-awgn-n10": SimConfig(
        format="mode1", receiver="perfect-csi", N=10, snr_db=(2, 3, 4, 5, 6, 7), num_runs=1000
    ),
    "fig5-phase-quant": SimConfig(
        format="mode1", channel="block-phase", receiver="blind", L=32, M=1, N=10,
        snr_db=(3, 4, 5, 6, 7, 8), num_runs=1000,
    ),
    "fig6-tu6-64x7": SimConfig(
        format="mode1", channel="tu6", doppler_hz=10.0, receiver="blind", L=32, M=64, N=7,
        snr_db=(4, 6, 8, 10, 12), num_runs=1000,
    ),
    # one Monte Carlo run = one 16-frame time-interleaved codeword
    "fig6-tu6-64x7-depth16": SimConfig(
        format="mode1", channel="tu6", doppler_hz=10.0, receiver="blind", L=32, M=64, N=7,
        snr_db=(4, 6, 8, 10, 12), num_runs=1000, frame_depth=16,
    ),
}


def _parse_value(key, raw, default):
    raw = raw.strip()
    if key == "snr_db":
        return tuple(float(v) for v in raw.replace(",", " ").split())
    if key == "phase":
        return raw if raw == "random" else float(raw)
    if raw.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, int) or key in ("fft_size", "n_cp", "n_symbols", "stop_iteration"):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text, base=None):
    """Parse flat ``key = value`` text (``#`` comments) onto ``base``.

    ``preset = <name>`` selects the starting point when ``base`` is omitted.
    """
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), comment_prefixes=("#", ";"), interpolation=None
    )
    parser.optionxform = str
    parser.read_string("[sim]\n" + text)
    items = dict(parser["sim"])
    if base is None:
        base = PRESETS[items.pop("preset", "toy")]
    else:
        items.pop("preset", None)
    defaults = base.to_dict()
    changes = {}
    for key, raw in items.items():
        if key not in defaults:
            raise ValueError(f"unknown config key {key!r}")
        changes[key] = _parse_value(key, raw, defaults[key])
    return base.replace(**changes)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)


def format_config(config):
    """Inverse of :func:`parse_config`."""
    lines = []
    for key, value in config.to_dict().items():
        if key == "snr_db":
            value = ", ".join(f"{v:g}" for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


class _Experiment:
    """Objects shared by every trial of one configuration."""

    def __init__(self, config):
        self.config = config
        self.fmt = config.ofdm_format()
        self.tx = Transmitter(
            fmt=self.fmt, frame_depth=config.frame_depth, interleaver_seed=config.interleaver_seed
        ).fit()
        self.turbo = config.turbo_config()
        self.profile = Tu6Profile(doppler_hz=config.doppler_hz)


@lru_cache(maxsize=8)
def _experiment(config):
    return _Experiment(config)


def trial_streams(master_seed, run_index):
    """Independent generators (bits, channel, noise) for one trial."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(run_index,))
    return [np.random.default_rng(s) for s in ss.spawn(3)]


def run_trial(config, run_index, snr_db=None, diagnostics=None):
    """One codeword end to end; returns info-bit errors per iteration.

    Bits, channel and unit-power noise depend only on ``(master_seed,
    run_index)``, so the same trial at different SNRs differs only in the
    noise scale. Receiver diagnostic records are appended to the
    ``diagnostics`` list when one is given.
    """
    exp = _experiment(config)
    fmt, tx = exp.fmt, exp.tx
    snr_db = config.snr_db[0] if snr_db is None else snr_db
    sigma2 = snr_to_sigma2(snr_db) if np.isfinite(snr_db) else 1e-12
    bit_rng, chan_rng, noise_rng = trial_streams(config.master_seed, run_index)
    u = bit_rng.integers(0, 2, tx.n_info_, dtype=np.uint8)
    frames = tx.transform(u)
    fading = None
    if config.channel == "tu6":
        fading = SumOfSinusoidsFading(
            exp.profile.tap_powers, exp.profile.doppler_hz, exp.profile.num_oscillators, chan_rng
        )
    grids, reals = [], []
    for f, x in enumerate(frames):
        if config.channel == "tu6":
            y, real = apply_tu6(
                x, exp.profile, fmt, fading=fading, start_time=f * fmt.frame_len / fmt.sample_rate
            )
        elif config.channel == "block-phase":
            y, real = apply_block_phase(x, config.phase, chan_rng, fmt)
        else:
            y, real = apply_block_phase(x, 0.0, fmt=fmt)
            real.meta["model"] = "awgn"
        y = y + np.sqrt(sigma2) * complex_noise(y.shape, noise_rng)
        grids.append(ofdm_demodulate(y, fmt))
        reals.append(real)
    res = turbo_demod_decode(
        grids, fmt, exp.turbo, tx.perm_, tx.code_, realizations=reals, noise_var=sigma2
    )
    errors = np.array([int(np.count_nonzero(b != u)) for b in res.bits])
    if diagnostics is not None:
        diagnostics.extend(dict(r, snr_db=snr_db, run=run_index) for r in res.diagnostics)
    return errors, u.size


def _trial_job(args):
    config, run_index, snr, want_diag = args
    diag = [] if want_diag else None
    errors, n = run_trial(config, run_index, snr, diag)
    return errors, n, diag


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get("SIM_WORKERS", "1"))
    return max(1, int(workers))


def sweep(config, workers=None, progress=None, diagnostics=None):
    """Accumulate BER per (SNR, iteration).

    ``diagnostics`` is an optional text stream receiving one line per
    receiver block and iteration.

    Trials are merged in run-index order and early stopping is evaluated
    after each trial, so results do not depend on ``workers``.
    """
    workers = _workers(workers)
    stop_it = config.iterations if config.stop_iteration is None else config.stop_iteration
    records = []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        for snr in config.snr_db:
            t0 = time.perf_counter()
            errors = np.zeros(config.iterations + 1, dtype=np.int64)
            bits = frames = 0
            run = 0
            done = False
            while run < config.num_runs and not done:
                chunk = range(run, min(run + workers, config.num_runs))
                jobs = [(config, i, snr, diagnostics is not None) for i in chunk]
                results = pool.map(_trial_job, jobs) if pool else map(_trial_job, jobs)
                for err, n, diag in results:
                    if diagnostics is not None and diag:
                        diagnostics.write(format_diagnostics(diag) + "\n")
                    errors += err
                    bits += n
                    frames += config.frame_depth
                    run += 1
                    if (
                        config.early_stop
                        and errors[stop_it] >= config.min_errors
                        and frames >= config.min_frames
                    ):
                        done = True
                        break
            seconds = time.perf_counter() - t0
            for it in range(config.iterations + 1):
                records.append(BerRecord(snr, it, int(errors[it]), bits, frames, seconds))
            logger.info(
                "snr=%g dB frames=%d ber=%s", snr, frames,
                " ".join(f"{e / bits:.3e}" for e in errors),
            )
            if progress:
                progress(records[-(config.iterations + 1) :])
    finally:
        if pool:
            pool.shutdown()
    return records


def wilson_interval(errors, n, alpha=0.05):
    from statsmodels.stats.proportion import proportion_confint

    if n == 0:
        return 0.0, 1.0
    return proportion_confint(errors, n, alpha=alpha, method="wilson")


def write_results(records, path, config=None, seeds=None, wilson=False):
    """CSV of ``records`` sorted by (snr, iteration) plus ``<path>.manifest.json``."""
    rows = sorted(records, key=lambda r: (r.snr_db, r.iteration))
    header = CSV_HEADER + (["ci_low", "ci_high"] if wilson else [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            row = [
                f"{r.snr_db:g}", r.iteration, r.bit_errors, r.bits,
                f"{r.ber:.6e}", r.frames, f"{r.seconds:.3f}",
            ]
            if wilson:
                lo, hi = wilson_interval(r.bit_errors, r.bits)
                row += [f"{lo:.6e}", f"{hi:.6e}"]
            writer.writerow(row)
    manifest = {
        "version": __version__,
        "config": config.to_dict() if config is not None else None,
        "seeds": seeds or ({"master_seed": config.master_seed,
                            "interleaver_seed": config.interleaver_seed} if config else None),
        "records": len(rows),
    }
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return path


def read_results(path):
    with open(path, newline="") as fh:
        return [
            BerRecord(
                float(r["snr_db"]), int(r["iteration"]), int(r["bit_errors"]), int(r["bits"]),
                int(r["frames"]), float(r["seconds"]),
            )
            for r in csv.DictReader(fh)
        ]


def ber_curve(records, iteration):
    pts = sorted((r.snr_db, r.ber) for r in records if r.iteration == iteration)
    return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])


def snr_at_ber(snr, ber, target):
    """SNR where a decreasing BER curve crosses ``target`` (log-linear
    interpolation between the bracketing points); NaN if not bracketed."""
    snr, ber = np.asarray(snr, float), np.asarray(ber, float)
    for i in range(len(snr) - 1):
        b0, b1 = ber[i], ber[i + 1]
        if b0 >= target > b1:
            if b1 <= 0:
                return float(snr[i + 1])
            frac = (np.log10(b0) - np.log10(target)) / (np.log10(b0) - np.log10(b1))
            return float(snr[i] + frac * (snr[i + 1] - snr[i]))
    return float("nan")
