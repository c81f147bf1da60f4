"""Latent Hamiltonians for the embedding dynamics, with stability certificates.

Three parameterizations:

* QuadraticSOS — H(y) = [y; w]ᵀ Q [y; w] with Q = L Lᵀ + eps I ≻ 0.
  Quadratic H, hence globally linear latent dynamics, non-negative and
  radially unbounded by construction.
* QuarticSOS — H(y) = [y; y∘y; w]ᵀ Q [y; y∘y; w] (Hadamard form), the
  quartic counterpart giving cubic latent dynamics.
* CubicPoly — an unconstrained cubic polynomial H (quadratic latent
  dynamics); deliberately uncertified, it is the baseline whose
  trajectories may escape to infinity.

For the SOS variants the conserved, non-negative H yields the a-priori
trajectory bound ||y(t)||² <= H(y0)/σ_min(Q) (quadratic) and
||y(t)||² + ||y(t)||⁴ <= H(y0)/σ_min(Q) (quartic).

All evaluation helpers accept plain arrays (vectorized over leading
axes) or tape nodes, so the same formulas serve rollouts and training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .diffkit import tape
from .diffkit.tape import Node, concat, einsum, fill_tril, matmul, reshape, sum_, transpose
from .hamsys import apply_j


# -- kernels usable with arrays or tape nodes --------------------------------


def _last_dim(x):
    return (x.shape if isinstance(x, Node) else np.asarray(x).shape)[-1]


def _as_2d(y):
    """Promote (d,) to (1, d); remember whether to squeeze the result."""
    if isinstance(y, Node):
        if len(y.shape) == 1:
            return reshape(y, (1, y.shape[0])), True
        return y, False
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        return y[None, :], True
    return y, False


def _sos_z(y2, w, with_hadamard):
    batch = y2.shape[0]
    wcol = np.full((batch, 1), float(w))
    parts = [y2, y2 * y2, wcol] if with_hadamard else [y2, wcol]
    return concat(parts, axis=-1) if isinstance(y2, Node) else np.concatenate(parts, axis=-1)


def sos_h(q_mat, w, y, with_hadamard):
    """H(y) = zᵀ Q z, batched over leading axis."""
    y2, squeeze = _as_2d(y)
    z = _sos_z(y2, w, with_hadamard)
    qz = matmul(z, q_mat) if isinstance(z, Node) or isinstance(q_mat, Node) else z @ q_mat
    h = sum_(z * qz, axis=-1) if isinstance(qz, Node) else np.sum(z * qz, axis=-1)
    if squeeze:
        return h[0]
    return h


def sos_grad(q_mat, w, y, with_hadamard):
    """Analytic gradient of zᵀ Q z with respect to y.

    dz/dy has rows [I; 2 diag(y); 0] in the Hadamard case, so
    grad = 2 (Qz)_y + 4 y ∘ (Qz)_{y∘y}.
    """
    y2, squeeze = _as_2d(y)
    d = _last_dim(y2)
    z = _sos_z(y2, w, with_hadamard)
    qz = matmul(z, q_mat) if isinstance(z, Node) or isinstance(q_mat, Node) else z @ q_mat
    g = 2.0 * qz[..., :d]
    if with_hadamard:
        g = g + 4.0 * (y2 * qz[..., d:2 * d])
    if squeeze:
        return g[0]
    return g


def cubic_h(c0, c1, c2_mat, c3_tensor, y):
    """H(y) = c0 + c1ᵀy + yᵀ C2 y + Σ T3[i,j,k] y_i y_j y_k."""
    y2, squeeze = _as_2d(y)
    h = einsum("i,bi->b", c1, y2) + einsum("ij,bi,bj->b", c2_mat, y2, y2) \
        + einsum("ijk,bi,bj,bk->b", c3_tensor, y2, y2, y2) + c0
    if squeeze:
        return h[0]
    return h


def cubic_grad(c1, c2_mat, c3_tensor, y):
    y2, squeeze = _as_2d(y)
    # d/dy_a Σ T_ijk y_i y_j y_k = Σ (T_ajk + T_jak + T_jka) y_j y_k
    sym2 = c2_mat + transpose(c2_mat)
    sym3 = c3_tensor + transpose(c3_tensor, (1, 0, 2)) + transpose(c3_tensor, (2, 0, 1))
    g = c1 + einsum("ij,bj->bi", sym2, y2) + einsum("ajk,bj,bk->ba", sym3, y2, y2)
    if squeeze:
        return g[0]
    return g


# -- model classes -------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticSOS:
    """Quadratic sum-of-squares Hamiltonian H(y) = [y; w]ᵀ (LLᵀ + eps I) [y; w]."""

    m: int
    lower: np.ndarray  # (2m+1, 2m+1) lower-triangular factor
    w: float = 1.0
    eps: float = 1e-6

    hadamard = False

    def __post_init__(self):
        k = 2 * self.m + 1
        lower = np.asarray(self.lower, dtype=np.float64)
        if lower.shape != (k, k):
            raise ValueError(f"lower factor must be {k}x{k}")
        object.__setattr__(self, "lower", np.tril(lower))

    @property
    def dim(self):
        return 2 * self.m

    @property
    def q_matrix(self):
        l = self.lower
        return l @ l.T + self.eps * np.eye(l.shape[0])


@dataclass(frozen=True)
class QuarticSOS:
    """Quartic SOS Hamiltonian in Hadamard form: z = [y; y∘y; w]."""

    m: int
    lower: np.ndarray  # (4m+1, 4m+1)
    w: float = 1.0
    eps: float = 1e-6

    hadamard = True

    def __post_init__(self):
        k = 4 * self.m + 1
        lower = np.asarray(self.lower, dtype=np.float64)
        if lower.shape != (k, k):
            raise ValueError(f"lower factor must be {k}x{k}")
        object.__setattr__(self, "lower", np.tril(lower))

    @property
    def dim(self):
        return 2 * self.m

    @property
    def q_matrix(self):
        l = self.lower
        return l @ l.T + self.eps * np.eye(l.shape[0])


@dataclass(frozen=True)
class CubicPoly:
    """Unconstrained cubic Hamiltonian over 2m variables (monomial basis)."""

    m: int
    c0: float
    c1: np.ndarray           # (2m,)
    c2: np.ndarray           # (2m, 2m)
    c3: np.ndarray           # (2m, 2m, 2m)

    def __post_init__(self):
        d = 2 * self.m
        object.__setattr__(self, "c1", np.asarray(self.c1, dtype=np.float64).reshape(d))
        object.__setattr__(self, "c2", np.asarray(self.c2, dtype=np.float64).reshape(d, d))
        object.__setattr__(self, "c3", np.asarray(self.c3, dtype=np.float64).reshape(d, d, d))

    @property
    def dim(self):
        return 2 * self.m


LatentModel = Union[QuadraticSOS, QuarticSOS, CubicPoly]


def is_sos(model) -> bool:
    return isinstance(model, (QuadraticSOS, QuarticSOS))


def latent_h(model: LatentModel, y):
    """Evaluate the latent Hamiltonian at y of shape (..., 2m)."""
    _check(model, y)
    if is_sos(model):
        return sos_h(model.q_matrix, model.w, y, model.hadamard)
    return cubic_h(model.c0, model.c1, model.c2, model.c3, y)


def latent_grad(model: LatentModel, y):
    """Analytic gradient of the latent Hamiltonian."""
    _check(model, y)
    if is_sos(model):
        return sos_grad(model.q_matrix, model.w, y, model.hadamard)
    return cubic_grad(model.c1, model.c2, model.c3, y)


def latent_vector_field(model: LatentModel, y):
    """ẏ = J_{2m} grad H(y)."""
    return apply_j(latent_grad(model, y))


def _check(model, y):
    d = _last_dim(y)
    if d != model.dim:
        raise ValueError(f"latent state must have dimension {model.dim}, got {d}")


# -- certificates ---------------------------------------------------------------


def jacobi_eigh(a_mat: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100):
    """Symmetric eigendecomposition by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns). Sweeps
    until every off-diagonal entry is below tol times the Frobenius
    scale.
    """
    a = np.asarray(a_mat, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, float(np.max(np.abs(a))))):
        raise ValueError("matrix must be symmetric")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(max(0.0, np.sum(a**2) - np.sum(np.diag(a) ** 2)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-30 * scale:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p, rot_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * rot_p - s * rot_q
                a[:, q] = s * rot_p + c * rot_q
                rot_p, rot_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rot_p - s * rot_q
                a[q, :] = s * rot_p + c * rot_q
                a[p, q] = a[q, p] = 0.0
                rot_p, rot_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * rot_p - s * rot_q
                v[:, q] = s * rot_p + c * rot_q
    evals = np.diag(a).copy()
    order = np.argsort(evals)
    return evals[order], v[:, order]


def sos_min_eig(model) -> float:
    """Smallest eigenvalue of Q = LLᵀ + eps I (>= eps by construction)."""
    if not is_sos(model):
        raise ValueError("minimum eigenvalue certificate requires an SOS model")
    evals, _ = jacobi_eigh(model.q_matrix)
    return float(evals[0])


def stability_bound(model, y0) -> float:
    """B = H(y0) / σ_min(Q).

    Along any exact trajectory from y0, ||y(t)||² <= B for the quadratic
    model and ||y(t)||² + ||y(t)||⁴ <= B for the quartic model.
    """
    if not is_sos(model):
        raise ValueError("stability bound requires an SOS model")
    h0 = float(latent_h(model, np.asarray(y0, dtype=np.float64)))
    return h0 / sos_min_eig(model)


def bound_functional(model, y):
    """The quantity the certificate bounds: ||y||² (+ ||y||⁴ for quartic)."""
    y = np.asarray(y, dtype=np.float64)
    s = np.sum(y * y, axis=-1)
    if isinstance(model, QuarticSOS):
        return s + s * s
    return s


@dataclass(frozen=True)
class PSDReport:
    rank: int
    kept: np.ndarray
    dropped: np.ndarray


def psd_decompose(q_mat: np.ndarray, tol: float = 1e-10):
    """Factor a PSD matrix as Q = Vᵀ Q1 V with Q1 ≻ 0 (diagonal of kept eigenvalues).

    V holds the eigenvector rows of the eigenvalues above tol. Whether
    ||V z(y)||² dominates a radially unbounded function (the semidefinite
    stability hypothesis) is left to the caller.
    """
    q = np.asarray(q_mat, dtype=np.float64)
    evals, evecs = jacobi_eigh(q)
    if evals[0] < -tol:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {evals[0]:.3e})")
    keep = evals > tol
    if not np.any(keep):
        raise ValueError("no positive part: matrix is numerically zero")
    kept = evals[keep][::-1]
    v = evecs[:, keep][:, ::-1].T  # rows are kept eigenvectors, largest first
    q1 = np.diag(kept)
    report = PSDReport(rank=int(np.sum(keep)), kept=kept, dropped=evals[~keep][::-1])
    return v, q1, report


# -- random models and trainable views -----------------------------------------


def sos_factor_dim(m: int, hadamard: bool) -> int:
    return 4 * m + 1 if hadamard else 2 * m + 1


def tril_param_count(k: int) -> int:
    return k * (k + 1) // 2


def random_sos(m: int, hadamard: bool, rng: np.random.Generator, scale: float = None,
               w: float = 1.0, eps: float = 1e-6):
    """Random SOS model with a Glorot-style uniform lower factor."""
    k = sos_factor_dim(m, hadamard)
    bound = scale if scale is not None else np.sqrt(6.0 / (2 * k))
    lower = np.tril(rng.uniform(-bound, bound, size=(k, k)))
    cls = QuarticSOS if hadamard else QuadraticSOS
    return cls(m, lower, w=w, eps=eps)


def sos_h_from_tril(tril_vec, m: int, hadamard: bool, w, eps, y):
    """Graph-friendly H(y) with the factor given as a flat lower-triangle vector."""
    k = sos_factor_dim(m, hadamard)
    lower = fill_tril(tril_vec, k)
    q = matmul(lower, transpose(lower)) + eps * np.eye(k) if isinstance(lower, Node) \
        else lower @ lower.T + eps * np.eye(k)
    return sos_h(q, w, y, hadamard)


def sos_grad_from_tril(tril_vec, m: int, hadamard: bool, w, eps, y):
    k = sos_factor_dim(m, hadamard)
    lower = fill_tril(tril_vec, k)
    q = matmul(lower, transpose(lower)) + eps * np.eye(k) if isinstance(lower, Node) \
        else lower @ lower.T + eps * np.eye(k)
    return sos_grad(q, w, y, hadamard)
