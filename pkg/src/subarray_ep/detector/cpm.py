"""Central processing: MRC of subarray messages, constellation denoiser, LLRs."""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp, softmax

from ..model import Constellation


def ordered_sum(a: np.ndarray, axis: int = 0) -> np.ndarray:
    """Sum accumulated strictly in ascending index order along ``axis``."""
    a = np.asarray(a)
    return np.take(np.cumsum(a, axis=axis), -1, axis=axis)


def cpm_mrc(eta, p, served=None, n_users: int | None = None):
    """Precision-weighted combination of subarray messages.

    Full mode: ``eta`` is ``(C,)`` and ``p`` is ``(C, K)``; returns a scalar
    precision and the combined mean. Trimmed mode: ``p`` is a sequence of
    ``(K_c,)`` numerators, ``served[c]`` the user indices of subarray ``c``;
    returns per-user precisions.

    Raises:
        ValueError: if a user receives no contribution in trimmed mode.
    """
    eta = np.asarray(eta, dtype=float)
    if served is None:
        tau0 = ordered_sum(eta)
        num = ordered_sum(np.asarray(p), axis=0)
        return tau0, num / tau0
    if n_users is None:
        raise ValueError("n_users is required in trimmed mode")
    tau0 = np.zeros(n_users)
    num = np.zeros(n_users, dtype=complex)
    covered = np.zeros(n_users, dtype=bool)
    for c, users in enumerate(served):
        if len(users):
            tau0[users] += eta[c]
            num[users] += p[c]
            covered[users] = True
    if not covered.all():
        raise ValueError(f"users {np.flatnonzero(~covered).tolist()} are served by no subarray")
    return tau0, num / tau0


def _dim_logits(g: np.ndarray, tau: np.ndarray, levels: np.ndarray) -> np.ndarray:
    # complex noise of variance 1/tau leaves 1/(2 tau) per real dimension
    return -tau[..., None] * (g[..., None] - levels) ** 2


def _dim_moments(g: np.ndarray, tau: np.ndarray, levels: np.ndarray):
    w = softmax(_dim_logits(g, tau, levels), axis=-1)
    mean = w @ levels
    var = np.sum(w * (levels - mean[..., None]) ** 2, axis=-1)
    return mean, var


def cpm_denoise(gamma0, tau0, constellation: Constellation, variance_floor: float = 0.0):
    """Posterior mean and variance of each symbol given ``gamma0 = x + CN(0, 1/tau0)``.

    Returns:
        ``(xhat0, v0, omega0)`` with ``omega0`` the inverse of the average
        posterior variance. That average is bounded below by
        ``variance_floor / max(tau0)``, i.e. relative to the observation noise,
        so ``omega0`` stays far above every subarray's extrinsic precision even
        when the posterior variance underflows.
    """
    gamma0 = np.asarray(gamma0)
    tau = np.broadcast_to(np.asarray(tau0, dtype=float), gamma0.shape)
    levels = constellation.pam_levels
    m_re, v_re = _dim_moments(gamma0.real, tau, levels)
    m_im, v_im = _dim_moments(gamma0.imag, tau, levels)
    v0 = v_re + v_im
    mean_v = max(float(np.mean(v0)), variance_floor / float(np.max(tau)))
    omega0 = 1.0 / mean_v if mean_v > 0 else np.inf
    return m_re + 1j * m_im, v0, omega0


def compute_llr(gamma0, tau0, constellation: Constellation) -> np.ndarray:
    """Exact per-bit LLRs ``log P(b=0) / P(b=1)``, shape ``(K, bits_per_symbol)``."""
    gamma0 = np.atleast_1d(np.asarray(gamma0))
    tau = np.broadcast_to(np.asarray(tau0, dtype=float), gamma0.shape)
    levels, labels = constellation.pam_levels, constellation.pam_labels
    out = []
    for part in (gamma0.real, gamma0.imag):
        lg = _dim_logits(part, tau, levels)
        for j in range(labels.shape[1]):
            zero = labels[:, j] == 0
            out.append(logsumexp(lg[..., zero], axis=-1) - logsumexp(lg[..., ~zero], axis=-1))
    return np.stack(out, axis=-1)


def hard_decision(gamma0, constellation: Constellation) -> np.ndarray:
    return constellation.nearest(gamma0)
