"""Iterative subarray EP detector: full, trimmed, hierarchical and one-feedforward runs."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..analysis import Residuals, fixed_point_residuals
from ..model import Constellation
from ..partition import (
    Hierarchy,
    SubarrayPartition,
    TrimmedPartition,
    flatten_hierarchy,
    full_service,
    split_hierarchy,
)
from .cpm import compute_llr, cpm_denoise, cpm_mrc, hard_decision, ordered_sum
from .lpm import lpm_extrinsic, lpm_lmmse, lpm_prior, resolve_inversion

MODES = ("full", "trimmed", "hier", "oneshot", "local_ep")

# Fixed so that the batching of blocks never depends on the worker count.
CHUNK_BLOCKS = 64


@dataclass(frozen=True)
class DetectorConfig:
    """Detector settings.

    Attributes:
        max_iters: Number of iterations ``T``.
        damping: ``beta`` in ``new <- beta * new + (1 - beta) * old`` on the
            extrinsic messages; 1 disables damping.
        precision_floor: Lower bound for prior and extrinsic precisions.
        variance_floor: Lower bound on the average posterior variance at the
            CPM, relative to ``1 / max(tau0)``; caps ``omega0`` at high SNR.
        inversion: ``"direct"``, ``"recursive"`` or ``"auto"``.
        mode: One of ``MODES``; only used by :func:`detect`.
        secondary_size: Secondary block size for ``mode="hier"``.
        workers: Threads used for the local steps; results do not depend on it.
    """

    max_iters: int = 6
    damping: float = 1.0
    precision_floor: float = 1e-9
    variance_floor: float = 1e-12
    inversion: str = "auto"
    mode: str = "full"
    secondary_size: int | None = None
    workers: int = 1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if not self.precision_floor > 0:
            raise ValueError("precision_floor must be positive")
        if self.variance_floor < 0:
            raise ValueError("variance_floor must be non-negative")
        if self.inversion not in ("auto", "direct", "recursive"):
            raise ValueError(f"unknown inversion mode {self.inversion!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "hier" and not self.secondary_size:
            raise ValueError("hierarchical mode needs secondary_size")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass(eq=False)
class EpState:
    """Iteration variables after the most recent CPM update.

    Per-block quantities are arrays with a leading block axis in full mode and
    lists of per-block arrays in trimmed mode (``users`` then holds each
    block's served users; it is ``None`` in full mode). ``tau0`` is a scalar in
    full mode and a per-user vector in trimmed mode.
    """

    tau_c: np.ndarray
    gamma_c: object
    eta_c: np.ndarray
    p_c: object
    omega_c: np.ndarray
    xhat_c: object
    users: list | None
    tau0: object
    gamma0: np.ndarray
    gamma0_num: np.ndarray
    omega0: float
    xhat0: np.ndarray
    v0: np.ndarray
    t: int

    @property
    def r_c(self):
        """Extrinsic means ``p_c / eta_c``."""
        if self.users is None:
            return self.p_c / self.eta_c[:, None]
        return [p / e for p, e in zip(self.p_c, self.eta_c)]


@dataclass(frozen=True, eq=False)
class IterationRecord:
    t: int
    tau0: object
    omega0: float
    gamma0: np.ndarray
    xhat0: np.ndarray
    floor_events: int
    mse_gamma0: float | None
    residuals: Residuals


@dataclass(frozen=True, eq=False)
class DetectionOutput:
    gamma0: np.ndarray
    tau0: object
    xhat0: np.ndarray
    v0: np.ndarray
    hard_symbols: np.ndarray
    llrs: np.ndarray
    trace: list[IterationRecord]
    floor_events: int
    inversion: tuple[str, ...]
    state: EpState | None = None

    def write_trace_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as f:
            write_trace(self.trace, f)


TRACE_COLUMNS = ("iter", "tau0", "omega0", "mse_gamma0_vs_truth", "floor_events", "omega_residual", "mean_residual")


def write_trace(trace: list[IterationRecord], f) -> None:
    w = csv.writer(f, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for rec in trace:
        mse = "" if rec.mse_gamma0 is None else f"{rec.mse_gamma0:.10g}"
        w.writerow(
            [
                rec.t,
                f"{float(np.mean(rec.tau0)):.10g}",
                f"{rec.omega0:.10g}",
                mse,
                rec.floor_events,
                f"{rec.residuals.omega_spread:.10g}",
                f"{rec.residuals.mean_spread:.10g}",
            ]
        )


# ---------------------------------------------------------------------------
# Block bookkeeping
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _Chunk:
    """Blocks sharing row count and user set, processed in one batched call."""

    y: np.ndarray  # (B, n)
    h: np.ndarray  # (B, n, k)
    users: np.ndarray | None
    inversion: str
    gram: np.ndarray = field(init=False)
    matched: np.ndarray = field(init=False)

    def __post_init__(self):
        # memory layout changes BLAS rounding; keep it fixed
        self.y = np.ascontiguousarray(self.y)
        self.h = np.ascontiguousarray(self.h)
        hh = np.swapaxes(self.h, -1, -2).conj()
        self.gram = hh @ self.h
        self.matched = np.matmul(hh, self.y[..., None])[..., 0]

    @property
    def n_blocks(self) -> int:
        return self.h.shape[0]


def _full_chunks(y, h, part: SubarrayPartition, inversion: str) -> list[_Chunk]:
    chunks = []
    if part.uniform:
        ys, hs = part.stack(y), part.stack(h)
        mode = resolve_inversion(inversion, part.sizes[0])
        for s in range(0, part.n_subarrays, CHUNK_BLOCKS):
            chunks.append(_Chunk(ys[s : s + CHUNK_BLOCKS], hs[s : s + CHUNK_BLOCKS], None, mode))
    else:
        for yb, hb in zip(part.split(y), part.split(h)):
            chunks.append(_Chunk(yb[None], hb[None], None, resolve_inversion(inversion, hb.shape[0])))
    return chunks


def _trimmed_chunks(y, trimmed: TrimmedPartition, inversion: str) -> tuple[list[_Chunk], list[int]]:
    chunks, kept = [], []
    for c, (yb, hb, users) in enumerate(zip(trimmed.base.split(y), trimmed.trimmed_h, trimmed.served)):
        if len(users) == 0:
            continue
        chunks.append(_Chunk(yb[None], hb[None], users, resolve_inversion(inversion, hb.shape[0])))
        kept.append(c)
    return chunks, kept


def _local_step(chunk: _Chunk, omega0, xhat0, eta, p, noise_var, eps):
    """Prior, local LMMSE and extrinsic message for every block of a chunk."""
    x0 = xhat0 if chunk.users is None else xhat0[chunk.users]
    tau, gamma, f1 = lpm_prior(omega0, x0, eta, p, eps)
    post = lpm_lmmse(chunk.y, chunk.h, tau, gamma, noise_var, chunk.inversion, chunk.gram, chunk.matched)
    eta_new, p_new, f2 = lpm_extrinsic(post.precision, post.mean, tau, gamma, eps, excess=post.excess)
    return tau, gamma, post.precision, post.mean, eta_new, p_new, int(f1.sum() + f2.sum())


class _Engine:
    def __init__(self, chunks, n_users, config: DetectorConfig, constellation, noise_var, groups=None):
        self.chunks = chunks
        self.k = n_users
        self.cfg = config
        self.const = constellation
        self.s2 = float(noise_var)
        self.trimmed = chunks[0].users is not None if chunks else False
        self.groups = groups  # parent index per block in hierarchical runs
        self.eta = [np.zeros(ch.n_blocks) for ch in chunks]
        kk = [n_users if ch.users is None else len(ch.users) for ch in chunks]
        self.p = [np.zeros((ch.n_blocks, k), dtype=complex) for ch, k in zip(chunks, kk)]
        self.omega0 = 1.0 / constellation.avg_energy
        self.xhat0 = np.zeros(n_users, dtype=complex)

    def _map(self, fn, items):
        if self.cfg.workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def iterate(self, t: int):
        cfg = self.cfg

        def work(i):
            return _local_step(self.chunks[i], self.omega0, self.xhat0, self.eta[i], self.p[i], self.s2, cfg.precision_floor)

        results = self._map(work, list(range(len(self.chunks))))
        floors = 0
        beta = cfg.damping
        for i, (_, _, _, _, eta_new, p_new, nf) in enumerate(results):
            floors += nf
            if beta < 1.0 and t > 1:
                eta_new = beta * eta_new + (1.0 - beta) * self.eta[i]
                p_new = beta * p_new + (1.0 - beta) * self.p[i]
            self.eta[i], self.p[i] = eta_new, p_new

        eta_all = np.concatenate(self.eta)
        if self.trimmed:
            served = [ch.users for ch in self.chunks]
            p_blocks = [pb[0] for pb in self.p]
            tau0, gamma0 = cpm_mrc(eta_all, p_blocks, served=served, n_users=self.k)
            num = gamma0 * tau0
        else:
            p_all = np.concatenate(self.p, axis=0)
            if self.groups is not None:
                eta_all, p_all = _group_sums(eta_all, p_all, self.groups)
            tau0, gamma0 = cpm_mrc(eta_all, p_all)
            num = ordered_sum(p_all, axis=0)
        xhat0, v0, omega0 = cpm_denoise(gamma0, tau0, self.const, cfg.variance_floor)
        self.omega0, self.xhat0 = omega0, xhat0

        def cat(j):
            return np.concatenate([r[j] for r in results], axis=0)

        if self.trimmed:
            state = EpState(
                tau_c=cat(0),
                gamma_c=[r[1][0] for r in results],
                eta_c=np.concatenate(self.eta),
                p_c=[pb[0] for pb in self.p],
                omega_c=cat(2),
                xhat_c=[r[3][0] for r in results],
                users=[ch.users for ch in self.chunks],
                tau0=tau0, gamma0=gamma0, gamma0_num=num, omega0=omega0, xhat0=xhat0, v0=v0, t=t,
            )
        else:
            state = EpState(
                tau_c=cat(0), gamma_c=cat(1), eta_c=np.concatenate(self.eta), p_c=np.concatenate(self.p, axis=0),
                omega_c=cat(2), xhat_c=cat(3), users=None,
                tau0=tau0, gamma0=gamma0, gamma0_num=num, omega0=omega0, xhat0=xhat0, v0=v0, t=t,
            )
        return state, floors


def _group_sums(eta, p, groups):
    n_groups = int(groups.max()) + 1
    g_eta = np.empty(n_groups)
    g_p = np.empty((n_groups, p.shape[1]), dtype=complex)
    for g in range(n_groups):
        sel = groups == g
        g_eta[g] = ordered_sum(eta[sel])
        g_p[g] = ordered_sum(p[sel], axis=0)
    return g_eta, g_p


def _run(engine: _Engine, config: DetectorConfig, constellation, x_true) -> DetectionOutput:
    trace, total_floors, state = [], 0, None
    for t in range(1, config.max_iters + 1):
        state, floors = engine.iterate(t)
        total_floors += floors
        mse = None if x_true is None else float(np.mean(np.abs(state.gamma0 - x_true) ** 2))
        trace.append(
            IterationRecord(t, state.tau0, state.omega0, state.gamma0, state.xhat0, floors, mse, fixed_point_residuals(state))
        )
    return _output(state, trace, total_floors, tuple(ch.inversion for ch in engine.chunks), constellation)


def _output(state: EpState, trace, floors, inversion, constellation) -> DetectionOutput:
    return DetectionOutput(
        gamma0=state.gamma0,
        tau0=state.tau0,
        xhat0=state.xhat0,
        v0=state.v0,
        hard_symbols=hard_decision(state.gamma0, constellation),
        llrs=compute_llr(state.gamma0, state.tau0, constellation),
        trace=trace,
        floor_events=floors,
        inversion=tuple(dict.fromkeys(inversion)),
        state=state,
    )


# ---------------------------------------------------------------------------
# Public entry points
# ---------------------------------------------------------------------------


def run_ep(
    y: np.ndarray,
    h: np.ndarray | None,
    partition: SubarrayPartition | TrimmedPartition,
    config: DetectorConfig,
    constellation: Constellation,
    noise_var: float,
    x_true: np.ndarray | None = None,
) -> DetectionOutput:
    """Run the subarray EP detector for ``config.max_iters`` iterations.

    With a :class:`TrimmedPartition` the trimmed model is used (``h`` may then
    be ``None``); with a plain partition every subarray sees all users. A single
    subarray gives the centralized EP detector.

    Args:
        y: Receive vector, length N.
        h: Channel matrix ``N x K``.
        partition: Row split, optionally with served-user sets.
        config: Detector settings.
        constellation: Symbol alphabet.
        noise_var: Noise variance per complex receive dimension.
        x_true: Transmitted symbols; enables the MSE column of the trace.
    """
    y = np.asarray(y, dtype=complex)
    if isinstance(partition, TrimmedPartition):
        chunks, _ = _trimmed_chunks(y, partition, config.inversion)
        n_users = partition.n_users
    else:
        h = np.asarray(h, dtype=complex)
        if h.shape[0] != y.shape[0]:
            raise ValueError(f"channel has {h.shape[0]} rows, receive vector has {y.shape[0]}")
        chunks = _full_chunks(y, h, partition, config.inversion)
        n_users = h.shape[1]
    engine = _Engine(chunks, n_users, config, constellation, noise_var)
    return _run(engine, config, constellation, x_true)


def run_hierarchical(
    y: np.ndarray,
    h: np.ndarray,
    partition: SubarrayPartition,
    hierarchy: Hierarchy,
    config: DetectorConfig,
    constellation: Constellation,
    noise_var: float,
    x_true: np.ndarray | None = None,
) -> DetectionOutput:
    """Each secondary block runs the local steps; a subarray reports the sum of its blocks' messages."""
    y = np.asarray(y, dtype=complex)
    h = np.asarray(h, dtype=complex)
    flat, parent = flatten_hierarchy(partition, hierarchy)
    chunks = []
    # chunks must not straddle subarrays so that group sums keep block order
    for yb, hb, sizes in zip(partition.split(y), partition.split(h), hierarchy.secondary_sizes):
        sub = SubarrayPartition.from_sizes(sizes)
        chunks.extend(_full_chunks(yb, hb, sub, config.inversion))
    engine = _Engine(chunks, h.shape[1], config, constellation, noise_var, groups=parent)
    assert sum(ch.n_blocks for ch in chunks) == flat.n_subarrays
    return _run(engine, config, constellation, x_true)


def run_one_feedforward(
    y: np.ndarray,
    trimmed: TrimmedPartition,
    config: DetectorConfig,
    constellation: Constellation,
    noise_var: float,
    scheme: int,
    x_true: np.ndarray | None = None,
) -> DetectionOutput:
    """Detectors where each subarray reports to the CPM once.

    Scheme 1 is a single iteration of the subarray detector. Scheme 2 runs the
    centralized detector locally on each subarray's trimmed model for
    ``config.max_iters`` iterations, then combines the local outputs once and
    denoises.
    """
    if scheme == 1:
        cfg = DetectorConfig(**{**config.__dict__, "max_iters": 1})
        return run_ep(y, None, trimmed, cfg, constellation, noise_var, x_true)
    if scheme != 2:
        raise ValueError(f"scheme must be 1 or 2, got {scheme}")
    y = np.asarray(y, dtype=complex)
    etas, nums, served, floors, inv = [], [], [], 0, []
    for yb, hb, users in zip(trimmed.base.split(y), trimmed.trimmed_h, trimmed.served):
        if len(users) == 0:
            continue
        local = run_ep(yb, hb, SubarrayPartition.from_sizes([hb.shape[0]]), config, constellation, noise_var)
        etas.append(float(local.state.tau0))
        nums.append(local.state.gamma0_num)
        served.append(users)
        floors += local.floor_events
        inv.extend(local.inversion)
    if trimmed.is_full:
        tau0, gamma0 = cpm_mrc(np.array(etas), np.stack(nums))
    else:
        tau0, gamma0 = cpm_mrc(np.array(etas), nums, served=served, n_users=trimmed.n_users)
    xhat0, v0, omega0 = cpm_denoise(gamma0, tau0, constellation, config.variance_floor)
    state = EpState(
        tau_c=np.zeros(0), gamma_c=None, eta_c=np.array(etas), p_c=nums, omega_c=np.zeros(0), xhat_c=None,
        users=served, tau0=tau0, gamma0=gamma0, gamma0_num=gamma0 * tau0, omega0=omega0, xhat0=xhat0, v0=v0,
        t=config.max_iters,
    )
    mse = None if x_true is None else float(np.mean(np.abs(gamma0 - x_true) ** 2))
    nan = float("nan")
    rec = IterationRecord(config.max_iters, tau0, omega0, gamma0, xhat0, floors, mse, Residuals(nan, nan, nan, nan, nan))
    return _output(state, [rec], floors, inv, constellation)


def detect(
    y: np.ndarray,
    h: np.ndarray,
    partition: SubarrayPartition | TrimmedPartition,
    config: DetectorConfig,
    constellation: Constellation,
    noise_var: float,
    x_true: np.ndarray | None = None,
) -> DetectionOutput:
    """Dispatch on ``config.mode``.

    Trimmed, one-shot and local-EP modes use ``partition`` as given when it is
    a :class:`TrimmedPartition` and otherwise serve every user everywhere.
    """
    mode = config.mode
    base = partition.base if isinstance(partition, TrimmedPartition) else partition
    if mode == "full":
        return run_ep(y, h, base, config, constellation, noise_var, x_true)
    if mode == "hier":
        hier = split_hierarchy(base, config.secondary_size)
        return run_hierarchical(y, h, base, hier, config, constellation, noise_var, x_true)
    trimmed = partition if isinstance(partition, TrimmedPartition) else full_service(h, partition)
    if mode == "trimmed":
        return run_ep(y, None, trimmed, config, constellation, noise_var, x_true)
    return run_one_feedforward(y, trimmed, config, constellation, noise_var, 1 if mode == "oneshot" else 2, x_true)
