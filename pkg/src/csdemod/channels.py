"""Channel models, constellations, priors and column-permutation search.

SNR convention used package-wide: transmit symbols have unit energy and
``snr_db = 10 * log10(1 / n0)``.  Random MIMO channels are normalized so
the expected received power per antenna is one; random ISI channels have
unit total tap power.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

__all__ = [
    "Constellation",
    "get_constellation",
    "ChannelModel",
    "mimo_channel",
    "isi_channel",
    "make_random_mimo",
    "make_random_isi",
    "preset_taps",
    "PRESET_TAPS",
    "isi_convolution_matrix",
    "PriorState",
    "priors_from_llrs",
    "symbol_log_pmf",
    "permutation_search",
    "band_energy",
]

LLR_CLIP = 40.0


@dataclass(frozen=True)
class Constellation:
    """Unit-energy symbol alphabet with its Gray bit labeling.

    ``bits[m]`` is the label of ``points[m]``; LLR sign convention is
    ``llr = log P(bit=0) - log P(bit=1)`` everywhere.
    """

    name: str
    points: np.ndarray
    bits: np.ndarray

    @property
    def order(self):
        return len(self.points)

    @property
    def bits_per_symbol(self):
        return self.bits.shape[1]

    def map_bits(self, bits):
        """Map a flat bit array (length divisible by bps) to symbols."""
        bits = np.asarray(bits, dtype=int).reshape(-1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        idx_of_label = np.empty(self.order, dtype=int)
        idx_of_label[self.bits @ weights] = np.arange(self.order)
        return self.points[idx_of_label[bits @ weights]]


def _qpsk():
    pts, labels = [], []
    for b0 in (0, 1):
        for b1 in (0, 1):
            pts.append(((1 - 2 * b0) + 1j * (1 - 2 * b1)) / np.sqrt(2))
            labels.append((b0, b1))
    return Constellation("qpsk", np.array(pts), np.array(labels))


def _qam16():
    # Per-axis Gray map 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3, E|x|^2 = 1.
    level = {(0, 0): -3.0, (0, 1): -1.0, (1, 1): 1.0, (1, 0): 3.0}
    pts, labels = [], []
    for b0 in (0, 1):
        for b1 in (0, 1):
            for b2 in (0, 1):
                for b3 in (0, 1):
                    pts.append((level[(b0, b1)] + 1j * level[(b2, b3)]) / np.sqrt(10))
                    labels.append((b0, b1, b2, b3))
    return Constellation("16qam", np.array(pts), np.array(labels))


_CONSTELLATIONS = {"qpsk": _qpsk(), "16qam": _qam16()}


def get_constellation(name):
    try:
        return _CONSTELLATIONS[name]
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}") from None


PRESET_TAPS = {
    "proakis-b": np.array([0.407, 0.815, 0.407]),
    "proakis-c": np.array([0.227, 0.460, 0.688, 0.460, 0.227]),
    "epr4": np.array([0.5, 0.5, -0.5, -0.5]),
}


def preset_taps(name):
    """Fixed impulse responses of the named test channels."""
    key = name.lower().replace("_", "-")
    if key not in PRESET_TAPS:
        raise ValueError(f"unknown preset {name!r}")
    return PRESET_TAPS[key].copy()


@dataclass(frozen=True)
class ChannelModel:
    """A finite matrix channel or an ISI tap channel plus noise density."""

    kind: str  # "matrix" | "isi"
    n0: float
    h_matrix: np.ndarray | None = None
    taps: np.ndarray | None = None
    constellation: str = "qpsk"

    def __post_init__(self):
        if self.kind not in ("matrix", "isi"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.n0 <= 0:
            raise ValueError("n0 must be positive")
        if self.kind == "matrix" and self.h_matrix is None:
            raise ValueError("matrix channel requires h_matrix")
        if self.kind == "isi" and self.taps is None:
            raise ValueError("isi channel requires taps")

    @property
    def k(self):
        if self.kind != "matrix":
            raise ValueError("k is only defined for matrix channels")
        return self.h_matrix.shape[1]

    @property
    def n(self):
        if self.kind != "matrix":
            raise ValueError("n is only defined for matrix channels")
        return self.h_matrix.shape[0]

    def matrix(self, k=None):
        """The channel as an N x K matrix (ISI: linear convolution)."""
        if self.kind == "matrix":
            return self.h_matrix
        if k is None:
            raise ValueError("block length k required for an ISI channel")
        return isi_convolution_matrix(self.taps, k)

    def with_matrix(self, h):
        return ChannelModel(kind="matrix", n0=self.n0, h_matrix=h,
                            constellation=self.constellation)


def mimo_channel(h, n0, constellation="qpsk"):
    return ChannelModel(kind="matrix", n0=float(n0),
                        h_matrix=np.asarray(h, dtype=complex),
                        constellation=constellation)


def isi_channel(taps, n0, constellation="qpsk"):
    return ChannelModel(kind="isi", n0=float(n0),
                        taps=np.asarray(taps, dtype=complex),
                        constellation=constellation)


def make_random_mimo(n, k, seed, n0=1.0, constellation="qpsk"):
    """IID complex Gaussian N x K channel, unit mean power per receive antenna.

    Deterministic under a fixed seed.
    """
    if n < 1 or k < 1:
        raise ValueError("n and k must be >= 1")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(1.0 / (2.0 * k))
    h = scale * (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k)))
    return mimo_channel(h, n0, constellation)


def make_random_isi(l, seed, n0=1.0, constellation="qpsk"):
    """IID complex Gaussian taps normalized to unit total power."""
    rng = np.random.default_rng(seed)
    taps = rng.standard_normal(l) + 1j * rng.standard_normal(l)
    taps /= np.linalg.norm(taps)
    return isi_channel(taps, n0, constellation)


def isi_convolution_matrix(taps, k):
    """(K + L - 1) x K Toeplitz matrix of the linear convolution with taps."""
    taps = np.asarray(taps, dtype=complex)
    l = taps.size
    col = np.zeros(k + l - 1, dtype=complex)
    col[:l] = taps
    row = np.zeros(k, dtype=complex)
    row[0] = taps[0]
    return sla.toeplitz(col, row)


# ---------------------------------------------------------------------------
# Prior statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PriorState:
    """Per-symbol prior means and the diagonal of the quality matrix.

    ``p_diag[k]`` lies in [0, 1]; the zero-information state has both
    fields zero.  Parameter-design formulas consume only ``p_diag`` (the
    ISI designs collapse it further to the scalar ``alpha``); ``x_hat``
    is used at run time for interference cancelation.
    """

    x_hat: np.ndarray
    p_diag: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_diag, dtype=float)
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("p_diag entries must lie in [0, 1]")

    @classmethod
    def zero(cls, k):
        return cls(x_hat=np.zeros(k, dtype=complex), p_diag=np.zeros(k))

    @classmethod
    def uniform(cls, k, p):
        """Design-only prior with P = p * I (x_hat left at zero)."""
        return cls(x_hat=np.zeros(k, dtype=complex), p_diag=np.full(k, float(p)))

    @property
    def k(self):
        return self.x_hat.size

    @property
    def alpha(self):
        return float(np.mean(self.p_diag))

    @property
    def is_zero(self):
        return bool(np.all(self.p_diag <= 1e-14))


def _bit_log_probs(llrs, clip=LLR_CLIP):
    """log P(bit=0), log P(bit=1) from LLRs, saturated before exponentiation."""
    llrs = np.clip(np.nan_to_num(np.asarray(llrs, dtype=float),
                                 nan=0.0, posinf=clip, neginf=-clip),
                   -clip, clip)
    log_p0 = -np.logaddexp(0.0, -llrs)
    log_p1 = -np.logaddexp(0.0, llrs)
    return log_p0, log_p1


def symbol_log_pmf(llrs, constellation):
    """(K, M) log-pmf over constellation points from independent bit LLRs.

    Independence across a symbol's bits reflects the perfect-interleaving
    assumption of the iterative receiver.
    """
    const = constellation
    bps = const.bits_per_symbol
    llrs = np.asarray(llrs, dtype=float).reshape(-1, bps)
    log_p0, log_p1 = _bit_log_probs(llrs)
    # log pmf(s) = sum over bit positions of the matching bit log-prob
    out = np.zeros((llrs.shape[0], const.order))
    for b in range(bps):
        out += np.where(const.bits[None, :, b] == 0,
                        log_p0[:, b, None], log_p1[:, b, None])
    return out


def priors_from_llrs(llrs, constellation, clip=LLR_CLIP):
    """Prior means and quality diagonal from per-bit LLRs.

    The quality entry is taken as ``|x_hat|^2`` of the realized prior
    mean, which is what the running receiver can actually measure.
    """
    if isinstance(constellation, str):
        constellation = get_constellation(constellation)
    log_pmf = symbol_log_pmf(np.asarray(llrs, dtype=float), constellation)
    pmf = np.exp(log_pmf)
    pmf /= pmf.sum(axis=1, keepdims=True)
    x_hat = pmf @ constellation.points
    p_diag = np.minimum(np.abs(x_hat) ** 2, 1.0)
    return PriorState(x_hat=x_hat, p_diag=p_diag)


# ---------------------------------------------------------------------------
# Column permutation search
# ---------------------------------------------------------------------------

def band_energy(gram, nu):
    """Total energy of the diagonals [-nu, nu] of a Gram matrix."""
    k = gram.shape[0]
    r = np.arange(k)[:, None]
    c = np.arange(k)[None, :]
    return float(np.sum(np.abs(gram) ** 2 * (np.abs(r - c) <= nu)))


MAX_EXHAUSTIVE_K = 8


def permutation_search(ch, nu, mode="energy"):
    """Column order that helps a memory-``nu`` reduced-state demodulator.

    ``mode="exhaustive"`` ranks every order by the optimal banded GMI at
    zero prior (K! evaluations, limited to K <= 8).  ``mode="energy"``
    maximizes the energy captured by the 2*nu+1 central diagonals of the
    permuted Gram matrix; orders related by reversal give equal band
    energy, so only one representative per pair is scanned.  For K
    beyond enumeration reach the energy mode falls back to pairwise-swap
    hill climbing.
    """
    if ch.kind != "matrix":
        raise ValueError("permutation search applies to matrix channels")
    h = ch.h_matrix
    k = h.shape[1]
    if mode == "exhaustive":
        if k > MAX_EXHAUSTIVE_K:
            raise ValueError(
                f"exhaustive search is limited to K <= {MAX_EXHAUSTIVE_K}; "
                "use the energy-based mode")
        from .gmi import mse_matrices, optimal_banded_gmi

        best, best_gmi = None, -np.inf
        for perm in itertools.permutations(range(k)):
            sub = ch.with_matrix(h[:, perm])
            m = mse_matrices(sub, PriorState.zero(k)).m
            _, gmi = optimal_banded_gmi(m, nu)
            if gmi > best_gmi + 1e-12:
                best, best_gmi = perm, gmi
        return np.array(best)
    if mode != "energy":
        raise ValueError(f"unknown mode {mode!r}")

    gram = h.conj().T @ h
    if k <= MAX_EXHAUSTIVE_K:
        best, best_e = None, -np.inf
        for perm in itertools.permutations(range(k)):
            if k > 1 and perm[0] > perm[-1]:
                continue  # reversal gives the same band energy
            e = band_energy(gram[np.ix_(perm, perm)], nu)
            if e > best_e + 1e-12:
                best, best_e = perm, e
        return np.array(best)

    # Hill climbing on pairwise swaps for large K.
    perm = list(range(k))
    best_e = band_energy(gram, nu)
    improved = True
    while improved:
        improved = False
        for i in range(k):
            for j in range(i + 1, k):
                perm[i], perm[j] = perm[j], perm[i]
                e = band_energy(gram[np.ix_(perm, perm)], nu)
                if e > best_e + 1e-12:
                    best_e = e
                    improved = True
                else:
                    perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm)
