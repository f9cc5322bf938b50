"""Seeded Monte Carlo sweeps, BER/SER/MSE aggregation and config/CSV I/O."""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .detector import DetectorConfig, detect
from .model import (
    IID,
    Correlated,
    NonStationary,
    SystemConfig,
    channel_energy,
    gen_channel,
    make_qam,
    snr_to_noise_var,
    transmit,
    trial_seed,
)
from .partition import partition_uniform, trim

CONFIG_KEYS = (
    "n",
    "k",
    "qam",
    "channel",
    "kappa",
    "array_len_m",
    "vertical_m",
    "subarray_size",
    "trim_threshold",
    "secondary_size",
    "mode",
    "iters",
    "damping",
    "snr_db_list",
    "trials",
    "seed",
)


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class RunSpec:
    """One sweep: system, partitioning, detector and axes.

    ``subarray_sizes`` and ``snr_db_list`` are sweep axes; every iteration of
    each detector run is reported.
    """

    n: int = 64
    k: int = 16
    qam: int = 16
    channel: str = "iid"
    kappa: float = 0.0
    array_len_m: float = 250.0
    vertical_m: float = 25.0
    subarray_sizes: tuple[int, ...] = (2,)
    trim_threshold: float | None = None
    secondary_size: int | None = None
    mode: str = "full"
    iters: int = 6
    damping: float = 1.0
    snr_db_list: tuple[float, ...] = (5.0,)
    trials: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.subarray_sizes or not self.snr_db_list:
            raise ConfigError("sweep axes must be nonempty")
        if self.channel not in ("iid", "corr", "nonstat"):
            raise ConfigError(f"unknown channel {self.channel!r}")
        for nc in self.subarray_sizes:
            if nc < 1 or self.n % nc:
                raise ConfigError(f"subarray size {nc} does not divide n={self.n}")
        try:
            self.detector_config()
            self.system_config(1.0)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def channel_model(self):
        if self.channel == "iid":
            return IID()
        if self.channel == "corr":
            return Correlated(self.kappa)
        return NonStationary(self.array_len_m, self.vertical_m)

    def system_config(self, noise_var: float) -> SystemConfig:
        return SystemConfig(self.n, self.k, noise_var, make_qam(self.qam), self.channel_model())

    def detector_config(self, workers: int = 1) -> DetectorConfig:
        return DetectorConfig(
            max_iters=self.iters,
            damping=self.damping,
            mode=self.mode,
            secondary_size=self.secondary_size,
            workers=workers,
        )

    def noise_var(self, snr_db: float) -> float:
        system = self.system_config(1.0)
        return snr_to_noise_var(snr_db, channel_energy(system), system.constellation.avg_energy)


@dataclass(frozen=True)
class MetricsRow:
    snr_db: float
    subarray_size: int
    iteration: int
    ber: float
    ser: float
    mean_mse_gamma0: float
    mean_tau0_inv: float
    trials: int
    floor_event_rate: float


METRIC_COLUMNS = tuple(f.name for f in fields(MetricsRow))


@dataclass(frozen=True)
class TrialResult:
    """Per-iteration counts for one trial (arrays indexed by reported iteration)."""

    iterations: np.ndarray
    bit_errors: np.ndarray
    symbol_errors: np.ndarray
    mse_gamma0: np.ndarray
    tau0_inv: np.ndarray
    floor_events: np.ndarray


def run_trial(spec: RunSpec, snr_db: float, subarray_size: int, trial: int) -> TrialResult:
    """Draw channel and symbols for ``trial``, detect, and score every iteration.

    Channel and transmit streams depend only on ``(spec.seed, trial)``, so all
    sweep points see the same channels, symbols and unit-variance noise draws.
    """
    noise_var = spec.noise_var(snr_db)
    system = spec.system_config(noise_var)
    const = system.constellation
    h = gen_channel(system, trial_seed(spec.seed, trial, 0)).h
    tx = transmit(h, const, noise_var, trial_seed(spec.seed, trial, 1))
    part = partition_uniform(spec.n, subarray_size)
    if spec.trim_threshold is not None and spec.mode in ("trimmed", "oneshot", "local_ep"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            part = trim(h, part, spec.trim_threshold)
    out = detect(tx.y, h, part, spec.detector_config(), const, noise_var, tx.x)
    n = len(out.trace)
    res = TrialResult(
        iterations=np.array([r.t for r in out.trace]),
        bit_errors=np.empty(n, dtype=np.int64),
        symbol_errors=np.empty(n, dtype=np.int64),
        mse_gamma0=np.empty(n),
        tau0_inv=np.empty(n),
        floor_events=np.array([r.floor_events for r in out.trace]),
    )
    for i, rec in enumerate(out.trace):
        sym = const.nearest(rec.gamma0)
        res.symbol_errors[i] = int(np.sum(sym != tx.symbols))
        res.bit_errors[i] = int(np.sum(const.bits_of(sym) != tx.tx_bits))
        res.mse_gamma0[i] = rec.mse_gamma0
        res.tau0_inv[i] = float(np.mean(1.0 / np.asarray(rec.tau0)))
    return res


def run_sweep(spec: RunSpec, workers: int = 1) -> list[MetricsRow]:
    """Aggregate metrics per (SNR, subarray size, iteration); rows are ordered by those keys.

    Trials run on a thread pool and are merged in trial order, so the output
    does not depend on ``workers``.
    """
    bits = spec.k * make_qam(spec.qam).bits_per_symbol
    rows = []
    for snr in spec.snr_db_list:
        for nc in spec.subarray_sizes:

            def one(trial, snr=snr, nc=nc):
                try:
                    return run_trial(spec, snr, nc, trial)
                except Exception as e:
                    raise RuntimeError(f"trial {trial} failed at snr={snr} dB, N_c={nc}: {e}") from e

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(one, range(spec.trials)))
            else:
                results = [one(t) for t in range(spec.trials)]
            iters = results[0].iterations
            tot = {f: np.zeros(len(iters)) for f in ("bit_errors", "symbol_errors", "mse_gamma0", "tau0_inv", "floor_events")}
            for r in results:
                for f in tot:
                    tot[f] += getattr(r, f)
            m = spec.trials
            for i, t in enumerate(iters):
                rows.append(
                    MetricsRow(
                        snr_db=float(snr),
                        subarray_size=int(nc),
                        iteration=int(t),
                        ber=tot["bit_errors"][i] / (m * bits),
                        ser=tot["symbol_errors"][i] / (m * spec.k),
                        mean_mse_gamma0=tot["mse_gamma0"][i] / m,
                        mean_tau0_inv=tot["tau0_inv"][i] / m,
                        trials=m,
                        floor_event_rate=tot["floor_events"][i] / m,
                    )
                )
    return rows


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.6g}"


def write_csv(rows: list[MetricsRow], f) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])


def emit_csv(rows: list[MetricsRow], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as f:
            write_csv(rows, f)
    except OSError as e:
        raise OSError(f"cannot write metrics to {path}: {e}") from e


def read_csv(path: str | Path) -> list[MetricsRow]:
    ints = {"subarray_size", "iteration", "trials"}
    with Path(path).open(newline="") as f:
        return [
            MetricsRow(**{k: int(v) if k in ints else float(v) for k, v in rec.items()}) for rec in csv.DictReader(f)
        ]


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def _floats(v: str) -> tuple[float, ...]:
    return tuple(float(s) for s in v.split(",") if s.strip())


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(s) for s in v.split(",") if s.strip())


_PARSERS = {
    "n": int,
    "k": int,
    "qam": int,
    "channel": str,
    "kappa": float,
    "array_len_m": float,
    "vertical_m": float,
    "subarray_size": _ints,
    "trim_threshold": float,
    "secondary_size": int,
    "mode": str,
    "iters": int,
    "damping": float,
    "snr_db_list": _floats,
    "trials": int,
    "seed": int,
}


def parse_config(text: str) -> RunSpec:
    """Parse flat ``key=value`` text; ``#`` starts a comment, lists are comma separated."""
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; allowed keys: {', '.join(CONFIG_KEYS)}")
        try:
            parsed = _PARSERS[key](value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from e
        kw["subarray_sizes" if key == "subarray_size" else key] = parsed
    return RunSpec(**kw)


def load_config(path: str | Path) -> RunSpec:
    return parse_config(Path(path).read_text())
