"""Rank metrics of a representation batch and the differentiable rank loss.

All three metrics operate on the eigenvalues {lambda_i} of the scaled Gram
matrix C = Hbar^T Hbar / N of the row-normalized batch Hbar. Since the rows
are unit vectors, trace(C) = 1 and the eigenvalues form a probability
distribution; erank is the exponential of its Shannon entropy.

The rank loss sum(lambda_i * log(lambda_i)) equals -log(erank); minimizing
it drives the spectrum toward uniform, i.e. maximizes erank. Its gradient
is exact through the whole chain eigenvalues <- Gram <- row normalization,
so it can be attached directly to raw (pre-normalization) features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadRhoError, BadSimplexError, DimensionError
from .linalg import NOISE_FLOOR, Spectrum, as_matrix, gram_scaled, row_normalize, sym_eigen

# Clamp for eigenvalues inside log; tames the unbounded derivative at 0.
LOG_CLAMP = 1e-12

SIMPLEX_TOL = 1e-6


def _floored(spec: Spectrum) -> np.ndarray:
    """Eigenvalues clamped to >= 0 with sub-noise-floor values zeroed."""
    lam = spec.nonnegative_eigenvalues.copy()
    lam[lam < NOISE_FLOOR] = 0.0
    return lam


def algebraic_rank(spec: Spectrum) -> int:
    """Number of eigenvalues above the noise floor (1e-12)."""
    return int(np.count_nonzero(_floored(spec)))


def trank(spec: Spectrum, rho: float) -> int:
    """Smallest k whose top-k eigenvalue energy reaches fraction rho.

    Ties resolve with >=, so rho=1.0 returns the algebraic rank.
    """
    if not 0.0 < rho <= 1.0:
        raise BadRhoError(f"rho must be in (0, 1], got {rho}")
    lam = _floored(spec)
    cum = np.cumsum(lam)
    total = cum[-1] if lam.size else 0.0
    if total <= 0.0:
        return 0
    return int(np.searchsorted(cum, rho * total, side="left")) + 1


def erank(spec: Spectrum) -> float:
    """Effective rank: exp of the eigenvalue distribution's entropy.

    Uses the 0*log(0) = 0 convention; the eigenvalues must sum to 1
    within 1e-6 (they are renormalized before the entropy so the result
    is always inside [1, d]).
    """
    lam = _floored(spec)
    total = float(np.sum(lam))
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise BadSimplexError(f"eigenvalues sum to {total!r}, expected 1 +- {SIMPLEX_TOL:.0e}")
    p = lam / total
    nz = p[p > 0.0]
    entropy = -float(np.sum(nz * np.log(nz)))
    return float(min(max(np.exp(entropy), 1.0), spec.source_dim))


@dataclass(frozen=True)
class RankReport:
    """The three rank quantities of one representation batch."""

    algebraic_rank: int
    trank: int
    erank: float
    eigenvalues: np.ndarray
    rho: float

    def to_json_dict(self) -> dict:
        """Stable key order used by the CLI rank subcommand."""
        return {
            "rank": self.algebraic_rank,
            "trank": self.trank,
            "erank": self.erank,
            "rho": self.rho,
            "eigenvalues": [float(v) for v in self.eigenvalues],
        }


@dataclass(frozen=True)
class RfrGradient:
    """Value and exact input gradient of the rank loss."""

    loss: float
    grad_H: np.ndarray


def rfr_loss_and_grad(H_raw) -> RfrGradient:
    """Rank loss sum(clamp(lambda) * log(clamp(lambda))) and d(loss)/dH.

    H_raw is the raw (pre-normalization) feature batch with N > d. The
    gradient chain is: d(loss)/dC = V (I + log(clamped Lambda)) V^T with
    clamped directions masked out, d(loss)/dHbar = (2/N) Hbar d(loss)/dC,
    then the per-row normalization Jacobian (I - hbar hbar^T) / ||h||.
    """
    H = as_matrix(H_raw, "H_raw")
    n, d = H.shape
    if n <= d:
        raise DimensionError(f"need more rows than columns, got {n}x{d}")
    norms = np.linalg.norm(H, axis=1)
    Hbar = row_normalize(H)
    spec = sym_eigen(gram_scaled(Hbar))
    lam = spec.eigenvalues
    lam_clamped = np.maximum(lam, LOG_CLAMP)
    loss = float(min(np.sum(lam_clamped * np.log(lam_clamped)), 0.0))

    # derivative of clamp(x)*log(clamp(x)); zero where the clamp is active
    dflam = np.where(lam > LOG_CLAMP, 1.0 + np.log(lam_clamped), 0.0)
    V = spec.eigenvectors
    dC = (V * dflam) @ V.T
    dHbar = (2.0 / n) * Hbar @ dC
    radial = np.sum(Hbar * dHbar, axis=1, keepdims=True)
    grad = (dHbar - radial * Hbar) / norms[:, None]
    return RfrGradient(loss=loss, grad_H=grad)


def rank_report(H_raw, rho: float = 0.99) -> RankReport:
    """Full rank report: normalize rows, form the Gram, diagonalize, measure."""
    H = as_matrix(H_raw, "H_raw")
    spec = sym_eigen(gram_scaled(row_normalize(H)))
    return RankReport(
        algebraic_rank=algebraic_rank(spec),
        trank=trank(spec, rho),
        erank=erank(spec),
        eigenvalues=_floored(spec),
        rho=rho,
    )
