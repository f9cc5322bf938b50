"""Local processing: prior, LMMSE posterior and extrinsic message of one subarray.

Every function accepts an optional leading batch axis so that all subarrays of
equal shape can be processed in one call; per-matrix results do not depend on
the batch size.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class LocalPosterior(NamedTuple):
    sigma: np.ndarray
    mean: np.ndarray
    precision: np.ndarray
    excess: np.ndarray  # precision - prior precision, evaluated without cancellation


def lpm_prior(omega0, xhat0, eta, p, precision_floor: float = 1e-9):
    """Prior handed to a subarray: the CPM belief with the subarray's own message removed.

    Args:
        omega0: CPM posterior precision (scalar).
        xhat0: CPM posterior mean restricted to the subarray's users, ``(..., K)``.
        eta: Extrinsic precision(s) sent by the subarray last iteration, ``(...)``.
        p: Division-free extrinsic numerator ``eta * r``, ``(..., K)``.
        precision_floor: Lower bound applied to the prior precision.

    Returns:
        ``(tau, gamma, floored)`` where ``floored`` marks clamped precisions.
    """
    eta = np.asarray(eta, dtype=float)
    tau = omega0 - eta
    floored = tau <= precision_floor
    tau = np.where(floored, precision_floor, tau)
    gamma = (omega0 * np.asarray(xhat0) - p) / tau[..., None]
    return tau, gamma, floored


def recursive_sigma(h_c: np.ndarray, tau_c, noise_var: float) -> np.ndarray:
    """``(H^H H / noise_var + tau I)^{-1}`` by successive rank-one updates over the rows of ``h_c``.

    With a single row this is the closed-form rank-one inverse.
    """
    h_c = np.asarray(h_c)
    tau_c = np.asarray(tau_c, dtype=float)
    k = h_c.shape[-1]
    inv_s2 = 1.0 / noise_var
    a_inv = np.eye(k, dtype=complex) / tau_c[..., None, None]
    for j in range(h_c.shape[-2]):
        hb = h_c[..., j, :].conj()
        u = np.matmul(a_inv, hb[..., None])[..., 0]
        denom = 1.0 + inv_s2 * np.sum(hb.conj() * u, axis=-1).real
        a_inv = a_inv - (inv_s2 / denom)[..., None, None] * (u[..., :, None] * u.conj()[..., None, :])
    return a_inv


def direct_sigma(gram: np.ndarray, tau_c, noise_var: float) -> np.ndarray:
    tau_c = np.asarray(tau_c, dtype=float)
    k = gram.shape[-1]
    return np.linalg.inv(gram / noise_var + tau_c[..., None, None] * np.eye(k))


def resolve_inversion(inversion: str, n_rows: int) -> str:
    if inversion == "auto":
        return "recursive" if n_rows <= 4 else "direct"
    if inversion not in ("direct", "recursive"):
        raise ValueError(f"unknown inversion mode {inversion!r}")
    return inversion


def lpm_lmmse(
    y_c: np.ndarray,
    h_c: np.ndarray,
    tau_c,
    gamma_c: np.ndarray,
    noise_var: float,
    inversion: str = "direct",
    gram: np.ndarray | None = None,
    matched: np.ndarray | None = None,
) -> LocalPosterior:
    """Gaussian posterior of the local model ``y_c = H_c x + n`` under prior ``CN(gamma_c, I / tau_c)``.

    ``gram`` (``H^H H``) and ``matched`` (``H^H y``) may be passed in when they
    are reused across iterations.
    """
    h_c = np.asarray(h_c)
    y_c = np.asarray(y_c)
    if h_c.shape[:-1] != y_c.shape:
        raise ValueError(f"channel {h_c.shape} and receive vector {y_c.shape} do not match")
    if gamma_c.shape[-1] != h_c.shape[-1]:
        raise ValueError(f"prior mean has {gamma_c.shape[-1]} entries, channel has {h_c.shape[-1]} columns")
    hh = np.swapaxes(h_c, -1, -2).conj()
    if gram is None:
        gram = hh @ h_c
    if matched is None:
        matched = np.matmul(hh, y_c[..., None])[..., 0]
    mode = resolve_inversion(inversion, h_c.shape[-2])
    sigma = recursive_sigma(h_c, tau_c, noise_var) if mode == "recursive" else direct_sigma(gram, tau_c, noise_var)
    resid = matched - np.matmul(gram, gamma_c[..., None])[..., 0]
    mean = gamma_c + np.matmul(sigma, resid[..., None])[..., 0] / noise_var
    tr = np.trace(sigma, axis1=-2, axis2=-1).real
    k = h_c.shape[-1]
    precision = k / tr
    # tr(I - tau Sigma) = tr(G Sigma) / s2, hence precision - tau = tr(G Sigma) / (s2 tr Sigma)
    excess = np.sum(gram * sigma.conj(), axis=(-2, -1)).real / (noise_var * tr)
    return LocalPosterior(sigma, mean, precision, excess)


def lpm_extrinsic(omega_c, xhat_c, tau_c, gamma_c, precision_floor: float = 1e-9, excess=None):
    """Extrinsic message ``(eta_c, p_c)`` with ``p_c = omega_c xhat_c - tau_c gamma_c``.

    ``eta_c`` is floored at ``precision_floor``; the third return value marks
    where that happened. When ``excess`` (``omega_c - tau_c`` computed
    elsewhere) is given, it replaces the direct difference.
    """
    omega_c = np.asarray(omega_c, dtype=float)
    tau_c = np.asarray(tau_c, dtype=float)
    raw = omega_c - tau_c if excess is None else np.asarray(excess, dtype=float)
    p = omega_c[..., None] * (xhat_c - gamma_c) + raw[..., None] * gamma_c
    floored = raw <= precision_floor
    eta = np.where(floored, precision_floor, raw)
    return eta, p, floored
