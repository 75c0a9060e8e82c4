"""Achievable-rate evaluation and the banded trellis-matrix solver.

The central quantity is the generalized mutual information (GMI) of a
receiver that demodulates with the mismatched metric

    exp(2 Re{x^H (V y - R x_hat)} - x^H G x)

instead of the true channel law.  ``gmi_eval`` scores an arbitrary
parameter triple (V, R, G); ``solve_optimal_g_banded`` returns the
banded Hermitian G maximizing the rate functional

    K + log det(I + G) + Tr(M (I + G))

whose stationarity condition pins the in-band entries of (I + G)^{-1}
to those of -M.  All rates are in nats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .channels import ChannelModel, PriorState
from .linalg import (
    BandSpec,
    NotPositiveDefiniteError,
    SingularMatrixError,
    band_part,
    chol_logdet,
    hermitize,
)

__all__ = [
    "CsParams",
    "MseMatrices",
    "GmiUndefinedError",
    "gmi_eval",
    "mse_matrices",
    "solve_optimal_g_banded",
    "optimal_banded_gmi",
    "rate_functional",
    "map_params",
    "ezf_params",
    "tmf_params",
]


class GmiUndefinedError(ValueError):
    pass


@dataclass(frozen=True)
class CsParams:
    """Front-end filter, cancelation matrix and trellis matrix (V, R, G)."""

    v: np.ndarray
    r: np.ndarray
    g: np.ndarray
    band: BandSpec | None = None


@dataclass(frozen=True)
class MseMatrices:
    """Negative MSE matrix of the linear MMSE estimate and its
    prior-weighted companion."""

    m: np.ndarray
    m_tilde: np.ndarray


def _channel_matrix(ch, params=None, k=None):
    if ch.kind == "matrix":
        return ch.h_matrix
    if k is None:
        k = params.g.shape[0]
    return ch.matrix(k)


def gmi_eval(ch: ChannelModel, prior: PriorState, params: CsParams) -> float:
    """GMI in nats of the mismatched triple (V, R, G) under Gaussian design.

    Raises :class:`GmiUndefinedError` when I + G is not positive
    definite, in which case the rate expression has no meaning.
    """
    h = _channel_matrix(ch, params)
    n0 = ch.n0
    p = np.asarray(prior.p_diag, dtype=float)
    v, r, g = params.v, params.r, params.g
    k = g.shape[0]

    try:
        cho = sla.cho_factor(np.eye(k) + g, lower=True)
    except np.linalg.LinAlgError:
        raise GmiUndefinedError("GMI undefined: I + G is not positive definite")
    logdet = 2.0 * float(np.sum(np.log(np.real(np.diag(cho[0])))))

    vh = v @ h
    vhp_rh = (vh * p[None, :]) @ r.conj().T
    inner = (v @ (n0 * np.eye(h.shape[0]) + h @ h.conj().T) @ v.conj().T
             - vhp_rh - vhp_rh.conj().T
             + (r * p[None, :]) @ r.conj().T)
    value = (logdet
             - np.real(np.trace(g))
             + 2.0 * np.real(np.trace(vh) - np.sum(np.diag(r) * p))
             - np.real(np.trace(sla.cho_solve(cho, inner))))
    return float(value)


def mse_matrices(ch: ChannelModel, prior: PriorState, k=None) -> MseMatrices:
    """Negative MSE matrix M and its prior companion, both Hermitian.

    M is negative definite; the companion equals P (I + M) P - P and is
    negative definite whenever 0 < P < I on the diagonal.
    """
    h = _channel_matrix(ch, k=k)
    n0 = ch.n0
    n = h.shape[0]
    x = sla.solve(n0 * np.eye(n) + h @ h.conj().T, h, assume_a="her")
    m = hermitize(h.conj().T @ x - np.eye(h.shape[1]))
    p = np.asarray(prior.p_diag, dtype=float)
    m_tilde = hermitize(p[:, None] * (np.eye(h.shape[1]) + m) * p[None, :]
                        - np.diag(p))
    return MseMatrices(m=m, m_tilde=m_tilde)


def solve_optimal_g_banded(m, nu, check=True, rtol=1e-9):
    """Banded Hermitian G whose (I + G)^{-1} matches -M on the band.

    Builds I + G = U^H U from local window solves on B = -M: row k of
    the upper factor U is supported on columns [k, min(k+nu, K-1)] and
    solves B[window] z = e_1, normalized so the leading entry of z maps
    to a positive real pivot.  The construction realizes the
    maximum-entropy banded completion; it is only trusted through the
    band-match check, which verifies [(I+G)^{-1} + M] vanishes on the
    band to ``rtol`` and raises otherwise.
    """
    m = np.asarray(m, dtype=complex)
    k = m.shape[0]
    b = hermitize(-m)
    try:
        sla.cholesky(b, lower=True)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError(
            message="optimal banded solve requires a negative definite input")
    u = np.zeros((k, k), dtype=complex)
    e1 = None
    for row in range(k):
        hi = min(row + nu, k - 1)
        idx = np.arange(row, hi + 1)
        win = b[np.ix_(idx, idx)]
        e1 = np.zeros(idx.size, dtype=complex)
        e1[0] = 1.0
        z = sla.solve(win, e1, assume_a="pos")
        u[row, idx] = (z / np.sqrt(np.real(z[0]))).conj()
    g = hermitize(u.conj().T @ u - np.eye(k))
    if check:
        resid = band_part(sla.inv(np.eye(k) + g) + m, nu)
        scale = max(1.0, float(np.max(np.abs(band_part(m, nu)))))
        if float(np.max(np.abs(resid))) > rtol * scale:
            raise SingularMatrixError(
                "banded completion failed its stationarity check")
    return g


def rate_functional(m, g):
    """K + log det(I + G) + Tr(M (I + G)), the rate at a given G."""
    k = g.shape[0]
    _, logdet = chol_logdet(np.eye(k) + g)
    return float(k + logdet + np.real(np.trace(m @ (np.eye(k) + g))))


def optimal_banded_gmi(m, nu):
    """The optimal banded G for the rate functional and its achieved value.

    At the optimum the value collapses to log det(I + G).
    """
    g = solve_optimal_g_banded(m, nu)
    _, logdet = chol_logdet(np.eye(g.shape[0]) + g)
    return g, float(logdet)


def map_params(ch: ChannelModel, k=None) -> CsParams:
    """The matched (full-complexity) triple: V = H^H/N0, R = 0, G = H^H H/N0."""
    h = _channel_matrix(ch, k=k)
    g = hermitize(h.conj().T @ h) / ch.n0
    kk = g.shape[0]
    return CsParams(v=h.conj().T / ch.n0, r=np.zeros((kk, kk), dtype=complex),
                    g=g, band=BandSpec(nu=kk - 1, k=kk))


def ezf_params(ch: ChannelModel, nu, k=None) -> CsParams:
    """Partial zero-forcing reference triple.

    The front end inverts the channel except for a residual banded
    response handled by the trellis; refuses (rather than regularizes)
    near-singular Gram matrices since this is a reference construction.
    """
    h = _channel_matrix(ch, k=k)
    gram = hermitize(h.conj().T @ h)
    kk = gram.shape[0]
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMatrixError("Gram matrix is singular or near-singular")
    gram_inv = hermitize(sla.inv(gram))
    g = solve_optimal_g_banded(-ch.n0 * gram_inv, nu)
    v = (np.eye(kk) + g) @ gram_inv @ h.conj().T
    return CsParams(v=v, r=np.zeros((kk, kk), dtype=complex), g=g,
                    band=BandSpec(nu=nu, k=kk))


def tmf_params(ch: ChannelModel, nu, k=None) -> CsParams:
    """Truncated matched-filter reference triple."""
    h = _channel_matrix(ch, k=k)
    kk = h.shape[1]
    g = band_part(hermitize(h.conj().T @ h) / ch.n0, nu)
    return CsParams(v=h.conj().T / ch.n0, r=np.zeros((kk, kk), dtype=complex),
                    g=g, band=BandSpec(nu=nu, k=kk))
