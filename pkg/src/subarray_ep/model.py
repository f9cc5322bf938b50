"""Constellations, channel generators and the uplink transmit/receive model.

All randomness flows through :func:`make_rng`, which wraps numpy's counter-based
Philox generator around a ``SeedSequence``. Per-trial streams are obtained with
:func:`trial_seed`, so a trial's draws never depend on how trials are scheduled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.linalg import toeplitz

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

SUPPORTED_QAM_ORDERS = (4, 16, 64, 256)


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    return np.random.Generator(np.random.Philox(seed))


def trial_seed(base_seed: int, trial: int, purpose: int = 0) -> np.random.SeedSequence:
    """Seed for one independent stream, keyed by (trial index, purpose)."""
    return np.random.SeedSequence(int(base_seed) & 0xFFFF_FFFF_FFFF_FFFF, spawn_key=(int(trial), int(purpose)))


# ---------------------------------------------------------------------------
# Constellation
# ---------------------------------------------------------------------------


def _gray(i: np.ndarray) -> np.ndarray:
    return i ^ (i >> 1)


def _int_to_bits(values: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1)
    return ((values[:, None] >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Constellation:
    """Square QAM alphabet with Gray labelling in each PAM dimension.

    Symbol index ``s`` carries the bit label ``bit_labels[s]`` (MSB first). The
    first ``bits_per_symbol // 2`` bits select the in-phase PAM level, the rest
    the quadrature level, so every bit lives in exactly one real dimension.
    """

    points: np.ndarray
    bits_per_symbol: int
    bit_labels: np.ndarray
    avg_energy: float
    pam_levels: np.ndarray
    pam_labels: np.ndarray
    level_lut: np.ndarray  # (level_re, level_im) -> symbol index

    @property
    def order(self) -> int:
        return len(self.points)

    @property
    def bits_per_dim(self) -> int:
        return self.bits_per_symbol // 2

    def bits_of(self, symbols: np.ndarray) -> np.ndarray:
        return self.bit_labels[np.asarray(symbols)]

    def nearest(self, z: np.ndarray) -> np.ndarray:
        """Index of the closest point to each entry of ``z`` (hard decision)."""
        z = np.asarray(z)
        i_re = np.abs(z.real[..., None] - self.pam_levels).argmin(axis=-1)
        i_im = np.abs(z.imag[..., None] - self.pam_levels).argmin(axis=-1)
        return self.level_lut[i_re, i_im]


def make_qam(order: int) -> Constellation:
    """Unit-energy Gray-labelled square QAM.

    Args:
        order: Alphabet size, one of 4, 16, 64, 256.

    Raises:
        ValueError: if ``order`` is not a supported square QAM size.
    """
    if order not in SUPPORTED_QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {order}; expected one of {SUPPORTED_QAM_ORDERS}")
    bits = int(np.log2(order))
    half = bits // 2
    n_levels = 1 << half
    scale = 1.0 / np.sqrt(2.0 * (order - 1) / 3.0)
    level_idx = np.arange(n_levels)
    levels = (2.0 * level_idx - n_levels + 1) * scale
    labels = _int_to_bits(_gray(level_idx), half)

    # inverse Gray map: label value -> level index
    label_to_level = np.empty(n_levels, dtype=np.int64)
    label_to_level[_gray(level_idx)] = level_idx

    symbols = np.arange(order)
    re_lvl = label_to_level[symbols >> half]
    im_lvl = label_to_level[symbols & (n_levels - 1)]
    points = levels[re_lvl] + 1j * levels[im_lvl]
    lut = np.empty((n_levels, n_levels), dtype=np.int64)
    lut[re_lvl, im_lvl] = symbols
    return Constellation(
        points=points,
        bits_per_symbol=bits,
        bit_labels=_int_to_bits(symbols, bits),
        avg_energy=float(np.mean(np.abs(points) ** 2)),
        pam_levels=levels,
        pam_labels=labels,
        level_lut=lut,
    )


# ---------------------------------------------------------------------------
# Channel models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IID:
    name = "iid"


@dataclass(frozen=True)
class Correlated:
    """Exponential receive correlation ``kappa**|i-j|`` across antennas."""

    kappa: float
    name = "corr"

    def __post_init__(self):
        if not 0.0 <= self.kappa < 1.0:
            raise ValueError(f"correlation coefficient must satisfy 0 <= kappa < 1, got {self.kappa}")


@dataclass(frozen=True)
class NonStationary:
    """Linear array with users spread along it at a common vertical offset."""

    array_len_m: float = 250.0
    vertical_m: float = 25.0
    name = "nonstat"

    def __post_init__(self):
        if self.array_len_m <= 0 or self.vertical_m <= 0:
            raise ValueError("array length and vertical distance must be positive")


ChannelModel = Union[IID, Correlated, NonStationary]


@dataclass(frozen=True)
class SystemConfig:
    n_antennas: int
    n_users: int
    noise_var: float
    constellation: Constellation
    channel_model: ChannelModel = field(default_factory=IID)

    def __post_init__(self):
        if not self.n_antennas >= self.n_users >= 1:
            raise ValueError(f"need N >= K >= 1, got N={self.n_antennas}, K={self.n_users}")
        if not self.noise_var > 0:
            raise ValueError(f"noise variance must be positive, got {self.noise_var}")


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    h: np.ndarray
    meta: dict


@dataclass(frozen=True, eq=False)
class TransmissionInstance:
    x: np.ndarray
    symbols: np.ndarray
    tx_bits: np.ndarray
    y: np.ndarray
    noise: np.ndarray


def correlation_matrix(n: int, kappa: float) -> np.ndarray:
    return toeplitz(kappa ** np.arange(n))


def psd_sqrt(a: np.ndarray, clamp: float = 1e-12) -> np.ndarray:
    """Symmetric square root of a PSD matrix; eigenvalues below ``clamp`` become 0."""
    w, v = np.linalg.eigh(a)
    w = np.where(w < clamp, 0.0, w)
    return (v * np.sqrt(w)) @ v.conj().T


def antenna_positions(n: int, array_len_m: float) -> np.ndarray:
    return np.linspace(0.0, array_len_m, n)


def user_positions(k: int, array_len_m: float) -> np.ndarray:
    return (np.arange(k) + 0.5) * array_len_m / k


def distance(antenna_x: np.ndarray, user_x: np.ndarray, vertical_m: float) -> np.ndarray:
    """Antenna-to-user Euclidean distances, shape ``(len(antenna_x), len(user_x))``."""
    dx = np.subtract.outer(np.asarray(antenna_x, float), np.asarray(user_x, float))
    return np.hypot(dx, vertical_m)


def large_scale_matrix(n: int, k: int, geometry: NonStationary) -> np.ndarray:
    d = distance(antenna_positions(n, geometry.array_len_m), user_positions(k, geometry.array_len_m), geometry.vertical_m)
    return 1.0 / d


def _rayleigh(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    re = rng.standard_normal((n, k))
    im = rng.standard_normal((n, k))
    return (re + 1j * im) * np.sqrt(0.5 / k)


def gen_channel(config: SystemConfig, rng_seed: SeedLike) -> ChannelRealization:
    """Draw an ``N x K`` channel for the configured model.

    The small-scale part always has i.i.d. CN(0, 1/K) entries. The correlated
    model left-multiplies by the PSD square root of the Toeplitz correlation;
    the non-stationary model scales entry-wise by inverse distances.
    """
    rng = make_rng(rng_seed)
    n, k = config.n_antennas, config.n_users
    model = config.channel_model
    h_r = _rayleigh(rng, n, k)
    if isinstance(model, IID):
        h, meta = h_r, {"model": "iid"}
    elif isinstance(model, Correlated):
        if model.kappa == 0.0:
            h = h_r
        else:
            h = psd_sqrt(correlation_matrix(n, model.kappa)) @ h_r
        meta = {"model": "corr", "kappa": model.kappa}
    elif isinstance(model, NonStationary):
        h = large_scale_matrix(n, k, model) * h_r
        meta = {"model": "nonstat", "array_len_m": model.array_len_m, "vertical_m": model.vertical_m}
    else:
        raise TypeError(f"unknown channel model {model!r}")
    return ChannelRealization(h=h, meta=meta)


def channel_energy(config: SystemConfig) -> float:
    """Expected ``||H||_F^2 / N``; equals 1 for the i.i.d. and correlated models."""
    model = config.channel_model
    if isinstance(model, NonStationary):
        d = large_scale_matrix(config.n_antennas, config.n_users, model)
        return float(np.sum(d**2) / (config.n_users * config.n_antennas))
    return 1.0


def transmit(
    h: ChannelRealization | np.ndarray,
    constellation: Constellation,
    noise_var: float,
    rng_seed: SeedLike,
) -> TransmissionInstance:
    """Send uniformly drawn symbols through ``h`` with complex AWGN of variance ``noise_var``.

    The stored ``noise`` is the realised perturbation ``y - H x``.
    """
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    hm = h.h if isinstance(h, ChannelRealization) else np.asarray(h)
    n, k = hm.shape
    rng = make_rng(rng_seed)
    symbols = rng.integers(0, constellation.order, size=k)
    w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(noise_var / 2.0)
    x = constellation.points[symbols]
    hx = hm @ x
    y = hx + w
    return TransmissionInstance(x=x, symbols=symbols, tx_bits=constellation.bits_of(symbols), y=y, noise=y - hx)


def snr_to_noise_var(snr_db: float, h_column_energy: float = 1.0, e_x: float = 1.0) -> float:
    """Noise variance for a per-antenna receive SNR of ``snr_db``."""
    if e_x <= 0:
        raise ValueError("symbol energy must be positive")
    return e_x * h_column_energy / 10.0 ** (snr_db / 10.0)


# ---------------------------------------------------------------------------
# Dump / load for cross-checking
# ---------------------------------------------------------------------------


def save_channel(h: ChannelRealization | np.ndarray, path: str | Path, fmt: str = "bin") -> None:
    """Write ``H`` row-major with interleaved real/imag parts.

    ``fmt="bin"`` writes little-endian float64 pairs; ``fmt="csv"`` writes one
    antenna per line as ``re,im,re,im,...``.
    """
    hm = np.ascontiguousarray(h.h if isinstance(h, ChannelRealization) else h, dtype=np.complex128)
    path = Path(path)
    if fmt == "bin":
        hm.astype("<c16").tofile(path)
    elif fmt == "csv":
        inter = np.empty((hm.shape[0], 2 * hm.shape[1]))
        inter[:, 0::2] = hm.real
        inter[:, 1::2] = hm.imag
        with path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            for row in inter:
                w.writerow(repr(float(v)) for v in row)
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_channel(path: str | Path, n: int, k: int, fmt: str = "bin") -> np.ndarray:
    path = Path(path)
    if fmt == "bin":
        return np.fromfile(path, dtype="<c16").reshape(n, k).astype(np.complex128)
    if fmt == "csv":
        inter = np.loadtxt(path, delimiter=",", ndmin=2)
        return (inter[:, 0::2] + 1j * inter[:, 1::2]).reshape(n, k)
    raise ValueError(f"unknown format {fmt!r}")
