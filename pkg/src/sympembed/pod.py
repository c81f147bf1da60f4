"""Cotangent-lift proper orthogonal decomposition.

Positions and momenta share one spatial basis V; the projector is
blkdiag(V, V), which preserves the canonical symplectic form exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_CUTOFF = 1e-12


@dataclass(frozen=True)
class PODBasis:
    """Orthonormal spatial basis V (N x r) with the full singular spectrum."""

    v: np.ndarray
    singular_values: np.ndarray
    r: int
    n_space: int

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64))
        object.__setattr__(self, "singular_values",
                           np.asarray(self.singular_values, dtype=np.float64))
        if self.v.shape != (self.n_space, self.r):
            raise ValueError("basis shape mismatch")
        if np.any(np.diff(self.singular_values) > 0):
            raise ValueError("singular values must be non-increasing")


def assemble_snapshots(states: np.ndarray) -> np.ndarray:
    """Stack states (S, 2N) into the cotangent snapshot matrix (N, 2S):
    all q columns first, then all p columns."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] % 2:
        raise ValueError("states must be (S, 2N)")
    n = states.shape[1] // 2
    return np.concatenate([states[:, :n].T, states[:, n:].T], axis=1)


def pod_basis(snapshots: np.ndarray, r: int) -> PODBasis:
    """Dominant POD basis via eigendecomposition of the smaller Gram matrix."""
    s = np.asarray(snapshots, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("snapshot matrix must be 2-D")
    n, cols = s.shape
    if r < 1:
        raise ValueError("r must be >= 1")
    if cols < n:
        gram = s.T @ s
        evals, evecs = np.linalg.eigh(gram)
        evals, evecs = evals[::-1], evecs[:, ::-1]
        sigma = np.sqrt(np.clip(evals, 0.0, None))
        _check_rank(sigma, r)
        v = (s @ evecs[:, :r]) / sigma[:r]
    else:
        gram = s @ s.T
        evals, evecs = np.linalg.eigh(gram)
        evals, evecs = evals[::-1], evecs[:, ::-1]
        sigma = np.sqrt(np.clip(evals, 0.0, None))
        _check_rank(sigma, r)
        v = evecs[:, :r]
    return PODBasis(v, sigma, r, n)


def _check_rank(sigma, r):
    if r > sigma.size or sigma[r - 1] < RANK_CUTOFF * sigma[0]:
        raise ValueError(f"requested {r} modes but numerical rank is smaller")


def energy_fraction(singular_values, r: int) -> float:
    """Retained squared-singular-value energy of the leading r modes."""
    sv = np.asarray(singular_values, dtype=np.float64)
    if sv.size == 0:
        raise ValueError("empty spectrum")
    if r > sv.size:
        raise ValueError("r exceeds spectrum length")
    total = np.sum(sv**2)
    return float(np.sum(sv[:r] ** 2) / total)


def project(basis: PODBasis, x: np.ndarray) -> np.ndarray:
    """blkdiag(V, V)^T x for x of shape (..., 2N) -> (..., 2r)."""
    x = np.asarray(x, dtype=np.float64)
    n = basis.n_space
    if x.shape[-1] != 2 * n:
        raise ValueError(f"expected last axis {2 * n}, got {x.shape[-1]}")
    return np.concatenate([x[..., :n] @ basis.v, x[..., n:] @ basis.v], axis=-1)


def lift(basis: PODBasis, y: np.ndarray) -> np.ndarray:
    """blkdiag(V, V) y for y of shape (..., 2r) -> (..., 2N)."""
    y = np.asarray(y, dtype=np.float64)
    r = basis.r
    if y.shape[-1] != 2 * r:
        raise ValueError(f"expected last axis {2 * r}, got {y.shape[-1]}")
    return np.concatenate([y[..., :r] @ basis.v.T, y[..., r:] @ basis.v.T], axis=-1)


def cotangent_projector(basis: PODBasis) -> np.ndarray:
    """The full blkdiag(V, V) matrix (2N x 2r)."""
    n, r = basis.n_space, basis.r
    out = np.zeros((2 * n, 2 * r))
    out[:n, :r] = basis.v
    out[n:, r:] = basis.v
    return out
