"""Benchmark canonical Hamiltonian systems and initial-condition sampling.

Every system is the pair (H, grad H) on states x = [q; p] in R^{2n},
with vector field f(x) = J_{2n} grad H(x). The PDE systems (cubic
Schroedinger, linear wave) are periodic three-point semi-discretizations
on [-10, 10].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

MAX_SAMPLE_ATTEMPTS = 1_000_000
MIN_ACCEPT_RATE = 1e-4


def symplectic_form(m: int) -> np.ndarray:
    """J_{2m} = [[0, I], [-I, 0]]."""
    if m < 1:
        raise ValueError("m must be >= 1")
    j = np.zeros((2 * m, 2 * m))
    j[:m, m:] = np.eye(m)
    j[m:, :m] = -np.eye(m)
    return j


def apply_j(x: np.ndarray) -> np.ndarray:
    """J_{2n} x without forming J, for x of shape (..., 2n)."""
    n = x.shape[-1] // 2
    return np.concatenate([x[..., n:], -x[..., :n]], axis=-1)


@dataclass(frozen=True)
class CanonicalSystem:
    """A canonical Hamiltonian system ẋ = J grad H(x) on R^{2n}.

    `hamiltonian` and `grad_h` accept states of shape (2n,) or batches
    (..., 2n) and are pure functions.
    """

    name: str
    n: int
    hamiltonian: Callable[[np.ndarray], np.ndarray]
    grad_h: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 2 * self.n

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"state must have dimension {self.dim}, got {x.shape[-1]}")
        return x


def eval_hamiltonian(sys: CanonicalSystem, x) -> np.ndarray:
    return sys.hamiltonian(sys.check_state(x))


def eval_vector_field(sys: CanonicalSystem, x) -> np.ndarray:
    x = sys.check_state(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite state")
    return apply_j(sys.grad_h(x))


def vector_field(sys: CanonicalSystem):
    """f(x) = J grad H(x) as a closure (no finiteness check, for inner loops)."""
    grad_h = sys.grad_h
    return lambda x: apply_j(grad_h(x))


# -- low-dimensional benchmarks ---------------------------------------------


def build_pendulum() -> CanonicalSystem:
    """H(q, p) = (1 - cos q) + p^2 / 2  =>  q̇ = p, ṗ = -sin q."""

    def ham(x):
        q, p = x[..., 0], x[..., 1]
        return (1.0 - np.cos(q)) + 0.5 * p**2

    def grad(x):
        return np.stack([np.sin(x[..., 0]), x[..., 1]], axis=-1)

    return CanonicalSystem("pendulum", 1, ham, grad)


def build_oscillator() -> CanonicalSystem:
    """H(q, p) = p^2/2 + q^2/2 + q^2/4."""

    def ham(x):
        q, p = x[..., 0], x[..., 1]
        return 0.5 * p**2 + 0.5 * q**2 + 0.25 * q**2

    def grad(x):
        return np.stack([1.5 * x[..., 0], x[..., 1]], axis=-1)

    return CanonicalSystem("oscillator", 1, ham, grad)


def build_lotka_volterra() -> CanonicalSystem:
    """H(q, p) = p - e^p + 2q - e^q in canonical coordinates."""

    def ham(x):
        q, p = x[..., 0], x[..., 1]
        return p - np.exp(p) + 2.0 * q - np.exp(q)

    def grad(x):
        q, p = x[..., 0], x[..., 1]
        return np.stack([2.0 - np.exp(q), 1.0 - np.exp(p)], axis=-1)

    return CanonicalSystem("lotka-volterra", 1, ham, grad)


# -- periodic PDE semi-discretizations ---------------------------------------


def periodic_laplacian(n_grid: int, length: float) -> np.ndarray:
    """Three-point stencil (1, -2, 1)/dz^2 with periodic wrap-around."""
    dz = length / n_grid
    d = np.zeros((n_grid, n_grid))
    idx = np.arange(n_grid)
    d[idx, idx] = -2.0
    d[idx, (idx + 1) % n_grid] = 1.0
    d[idx, (idx - 1) % n_grid] = 1.0
    return d / dz**2


def grid_points(n_grid: int, lo: float = -10.0, hi: float = 10.0) -> np.ndarray:
    """Equidistant periodic grid: n points, right endpoint excluded."""
    return lo + (hi - lo) * np.arange(n_grid) / n_grid


def build_nls_system(n_grid: int = 256, domain=(-10.0, 10.0)) -> CanonicalSystem:
    """Cubic Schroedinger i u_t + u_zz / 2 + |u|^2 u = 0 with u = q + i p.

    Semi-discrete form on N periodic points:
        q̇ = -D p / 2 - (q^2 + p^2) ∘ p
        ṗ =  D q / 2 + (q^2 + p^2) ∘ q
    with the discrete Hamiltonian
        H = -(qᵀDq + pᵀDp)/4 - Σ (q_i^2 + p_i^2)^2 / 4
    so that f = J grad H holds exactly.
    """
    if n_grid < 8:
        raise ValueError("need at least 8 grid points")
    lo, hi = domain
    dmat = periodic_laplacian(n_grid, hi - lo)

    def ham(x):
        q, p = x[..., :n_grid], x[..., n_grid:]
        quad = -0.25 * (np.einsum("...i,ij,...j->...", q, dmat, q)
                        + np.einsum("...i,ij,...j->...", p, dmat, p))
        quart = -0.25 * np.sum((q**2 + p**2) ** 2, axis=-1)
        return quad + quart

    def grad(x):
        q, p = x[..., :n_grid], x[..., n_grid:]
        r2 = q**2 + p**2
        gq = -0.5 * (q @ dmat) - r2 * q
        gp = -0.5 * (p @ dmat) - r2 * p
        return np.concatenate([gq, gp], axis=-1)

    params = {"grid_points": n_grid, "domain": tuple(domain), "dz": (hi - lo) / n_grid,
              "alpha": 0.5, "beta": 1.0, "laplacian": dmat}
    return CanonicalSystem("nls", n_grid, ham, grad, params)


def build_wave_system(n_grid: int = 256, domain=(-10.0, 10.0)) -> CanonicalSystem:
    """Linear wave u_tt = u_zz:  ż = K z, K = [[0, I], [D, 0]].

    The attached quadratic Hamiltonian H = (pᵀp - qᵀDq)/2 satisfies
    K z = J grad H(z) exactly.
    """
    if n_grid < 8:
        raise ValueError("need at least 8 grid points")
    lo, hi = domain
    dmat = periodic_laplacian(n_grid, hi - lo)

    def ham(x):
        q, p = x[..., :n_grid], x[..., n_grid:]
        return 0.5 * np.sum(p * p, axis=-1) - 0.5 * np.einsum("...i,ij,...j->...", q, dmat, q)

    def grad(x):
        q, p = x[..., :n_grid], x[..., n_grid:]
        return np.concatenate([-(q @ dmat), p], axis=-1)

    params = {"grid_points": n_grid, "domain": tuple(domain), "dz": (hi - lo) / n_grid,
              "laplacian": dmat}
    return CanonicalSystem("wave", n_grid, ham, grad, params)


def wave_operator(sys: CanonicalSystem) -> np.ndarray:
    """K = [[0, I], [D, 0]] for the wave system."""
    dmat = sys.params["laplacian"]
    n = sys.n
    k = np.zeros((2 * n, 2 * n))
    k[:n, n:] = np.eye(n)
    k[n:, :n] = dmat
    return k


# -- registry ----------------------------------------------------------------

_BUILDERS = {
    "pendulum": build_pendulum,
    "oscillator": build_oscillator,
    "lotka-volterra": build_lotka_volterra,
    "nls": build_nls_system,
    "wave": build_wave_system,
}


def system_names():
    return sorted(_BUILDERS)


def get_system(name: str, **kwargs) -> CanonicalSystem:
    """Look up a benchmark system by name."""
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; known: {system_names()}") from None
    return builder(**kwargs)


# -- initial-condition sampling ----------------------------------------------


@dataclass(frozen=True)
class InitialConditionSpec:
    """Uniform box sampling with optional energy cap H(x) <= energy_cap."""

    box: tuple[tuple[float, float], ...]
    count: int
    seed: int
    energy_cap: Optional[float] = None

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if any(hi < lo for lo, hi in box):
            raise ValueError("box intervals must have lo <= hi")
        if self.count < 1:
            raise ValueError("count must be positive")
        object.__setattr__(self, "box", box)


def sample_initial_conditions(sys: CanonicalSystem, spec: InitialConditionSpec):
    """Rejection-sample `spec.count` states uniformly in the box with H <= cap.

    Deterministic for a fixed seed. Aborts with a diagnostic once the
    acceptance rate is provably below 1e-4 (attempt budget 1e6).
    """
    if len(spec.box) != sys.dim:
        raise ValueError(f"box must have {sys.dim} intervals, got {len(spec.box)}")
    rng = np.random.default_rng(spec.seed)
    lo = np.array([b[0] for b in spec.box])
    hi = np.array([b[1] for b in spec.box])
    out = []
    attempts = 0
    chunk = max(4 * spec.count, 64)
    while len(out) < spec.count:
        rate_known = attempts >= 100_000 and len(out) / attempts < MIN_ACCEPT_RATE
        if attempts >= MAX_SAMPLE_ATTEMPTS or rate_known:
            rate = len(out) / attempts
            raise RuntimeError(
                f"initial-condition sampling for {sys.name!r} accepted {len(out)} of "
                f"{attempts} draws (rate {rate:.2e} < {MIN_ACCEPT_RATE}); "
                "box/energy_cap are incompatible")
        draw = rng.uniform(lo, hi, size=(chunk, sys.dim))
        attempts += chunk
        if spec.energy_cap is not None:
            keep = sys.hamiltonian(draw) <= spec.energy_cap
            draw = draw[keep]
        out.extend(draw)
    return [np.asarray(x) for x in out[: spec.count]]
