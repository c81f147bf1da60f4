"""Embedding training: the three losses, the trainer, and latent rollouts.

An EmbeddingModel bundles an encoder phi (2n -> 2m), a decoder psi
(2m -> 2n) and one latent Hamiltonian parameterization. The total
training objective is

    lambda1 ||x - psi(phi(x))||  +  lambda2 ||(Dphi)ᵀ J_{2m} Dphi - J_{2n}||
    + lambda3 ||Dphi(x) ẋ - J_{2m} grad H(phi(x))||  +  l1 |theta_H|_1

with ||.|| the mean-squared error over batch and entries, plus decoupled
weight decay on the optimizer side. Variants:

    s-linear-embs  quadratic SOS latent H (certified stable, linear dynamics)
    s-cubic-embs   quartic SOS latent H in Hadamard form (certified stable)
    quad-embs      unconstrained cubic latent H (baseline, no certificate)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import latentham
from .diffkit import (
    AdamState,
    MLPSpec,
    ParamVector,
    adam_step,
    init_mlp,
    lr_schedule,
    mlp_forward,
    mlp_input_jacobian,
    mlp_input_jvp,
    mlp_segments,
    tape,
)
from .diffkit.tape import Node, T, concat, matmul, mean, square
from .hamsys import symplectic_form
from .integrate import SolverConfig, Trajectory, integrate_trajectory

VARIANTS = ("s-linear-embs", "quad-embs", "s-cubic-embs")


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int
    hidden: tuple[int, ...] = (8, 8, 8)

    def __post_init__(self):
        if self.latent_dim < 2 or self.latent_dim % 2:
            raise ValueError("latent_dim must be a positive even integer")
        object.__setattr__(self, "hidden", tuple(self.hidden))


@dataclass(frozen=True)
class TrainingConfig:
    lambdas: tuple[float, float, float] = (0.1, 1.0, 1.0)
    epochs: int = 4000
    batch_size: int = 32
    base_lr: float = 3e-3
    lr_gamma: float = 0.1
    lr_interval: int = 1000
    wd_a: float = 1e-5
    wd_h: float = 1e-5
    l1_h: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if len(lam) != 3 or any(v < 0 for v in lam):
            raise ValueError("lambdas must be three non-negative weights")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        object.__setattr__(self, "lambdas", lam)


@dataclass
class EmbeddingModel:
    """Encoder/decoder networks plus one latent Hamiltonian, in one flat ParamVector."""

    variant: str
    n: int
    m: int
    enc_spec: MLPSpec
    dec_spec: MLPSpec
    params: ParamVector
    w: float = 1.0
    eps: float = 1e-6

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.enc_spec.out_dim != 2 * self.m or self.dec_spec.in_dim != 2 * self.m:
            raise ValueError("encoder out_dim and decoder in_dim must equal 2m")
        if self.enc_spec.in_dim != 2 * self.n or self.dec_spec.out_dim != 2 * self.n:
            raise ValueError("encoder in_dim and decoder out_dim must equal 2n")

    # -- parameter access ---------------------------------------------------
    def _net(self, prefix, spec, as_nodes=False):
        out = []
        for i in range(len(spec.layer_dims())):
            w = self.params.view(f"{prefix}.W{i}")
            b = self.params.view(f"{prefix}.b{i}")
            if as_nodes:
                w, b = tape.leaf(w), tape.leaf(b)
            out.append((w, b))
        return out

    def ham_params(self, as_nodes=False):
        names = [n for n in self.params.names() if n.startswith("ham.")]
        vals = [self.params.view(n) for n in names]
        if as_nodes:
            vals = [tape.leaf(v) for v in vals]
        return dict(zip(names, vals))

    # -- evaluation -----------------------------------------------------------
    def encode(self, x):
        return mlp_forward(self.enc_spec, self._net("enc", self.enc_spec), x)

    def decode(self, y):
        return mlp_forward(self.dec_spec, self._net("dec", self.dec_spec), y)

    def latent_model(self) -> latentham.LatentModel:
        if self.variant == "s-linear-embs":
            k = latentham.sos_factor_dim(self.m, False)
            return latentham.QuadraticSOS(self.m, _tril(self.params.view("ham.L"), k),
                                          self.w, self.eps)
        if self.variant == "s-cubic-embs":
            k = latentham.sos_factor_dim(self.m, True)
            return latentham.QuarticSOS(self.m, _tril(self.params.view("ham.L"), k),
                                        self.w, self.eps)
        d = 2 * self.m
        return latentham.CubicPoly(self.m, float(self.params.view("ham.c0")[0]),
                                   self.params.view("ham.c1"),
                                   self.params.view("ham.c2"),
                                   self.params.view("ham.c3"))


def _tril(vec, k):
    out = np.zeros((k, k))
    out[np.tril_indices(k)] = vec
    return out


def build_model(variant: str, n: int, cfg: ModelConfig, seed_or_rng=0,
                w: float = 1.0, eps: float = 1e-6) -> EmbeddingModel:
    """Fresh model with Glorot-uniform nets; SOS factors share the same
    init rule, cubic coefficients start at zero."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else np.random.default_rng(seed_or_rng)
    m = cfg.latent_dim // 2
    enc_spec = MLPSpec(2 * n, 2 * m, cfg.hidden)
    dec_spec = MLPSpec(2 * m, 2 * n, tuple(reversed(cfg.hidden)))
    segments = {}
    for prefix, spec in (("enc", enc_spec), ("dec", dec_spec)):
        net = init_mlp(spec, rng)
        for i, (wmat, bvec) in enumerate(net):
            segments[f"{prefix}.W{i}"] = wmat
            segments[f"{prefix}.b{i}"] = bvec
    if variant in ("s-linear-embs", "s-cubic-embs"):
        k = latentham.sos_factor_dim(m, variant == "s-cubic-embs")
        bound = np.sqrt(6.0 / (2 * k))
        mat = rng.uniform(-bound, bound, size=(k, k))
        segments["ham.L"] = mat[np.tril_indices(k)]
    elif variant == "quad-embs":
        d = 2 * m
        segments["ham.c0"] = np.zeros(1)
        segments["ham.c1"] = np.zeros(d)
        segments["ham.c2"] = np.zeros((d, d))
        segments["ham.c3"] = np.zeros((d, d, d))
    else:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    return EmbeddingModel(variant, n, m, enc_spec, dec_spec,
                          ParamVector.from_dict(segments), w, eps)


# -- losses -------------------------------------------------------------------


def _latent_grad_from(model: EmbeddingModel, ham, y):
    """Gradient of the latent H at y with given (array or node) ham params."""
    if model.variant == "quad-embs":
        return latentham.cubic_grad(ham["ham.c1"], ham["ham.c2"], ham["ham.c3"], y)
    hadamard = model.variant == "s-cubic-embs"
    return latentham.sos_grad_from_tril(ham["ham.L"], model.m, hadamard,
                                        model.w, model.eps, y)


def _apply_j(g):
    d = (g.shape if isinstance(g, Node) else np.asarray(g).shape)[-1] // 2
    if isinstance(g, Node):
        return concat([g[..., d:], -g[..., :d]], axis=-1)
    return np.concatenate([g[..., d:], -g[..., :d]], axis=-1)


def _components(model: EmbeddingModel, x, xdot, enc, dec, ham, lambdas):
    """All loss pieces on a common (array or node) parameter set."""
    lam1, lam2, lam3 = lambdas
    x = np.asarray(x, dtype=np.float64)
    out = {}
    y = mlp_forward(model.enc_spec, enc, x)
    if lam1 != 0.0 or not isinstance(y, Node):
        xhat = mlp_forward(model.dec_spec, dec, y)
        out["encdec"] = mean(square(xhat - x))
    else:
        out["encdec"] = mean(square(mlp_forward(model.dec_spec, dec, y) - x))
    jac = mlp_input_jacobian(model.enc_spec, enc, x)
    j2m = symplectic_form(model.m)
    j2n = symplectic_form(model.n)
    out["symp"] = mean(square(matmul(T(jac), matmul(j2m, jac)) - j2n))
    if xdot is not None:
        jvp = mlp_input_jvp(model.enc_spec, enc, x, np.asarray(xdot, dtype=np.float64))
        gh = _latent_grad_from(model, ham, y)
        out["deri"] = mean(square(jvp - _apply_j(gh)))
    l1 = None
    for v in ham.values():
        term = tape.sum_(tape.absolute(v)) if isinstance(v, Node) else np.sum(np.abs(v))
        l1 = term if l1 is None else l1 + term
    out["l1"] = l1
    return out


def loss_encdec(model: EmbeddingModel, batch) -> float:
    """Mean squared reconstruction error ||x - psi(phi(x))||."""
    x = _check_batch(model, batch)
    return float(mean(square(model.decode(model.encode(x)) - x)))


def loss_symp(model: EmbeddingModel, batch) -> float:
    """Mean squared entries of (Dphi)ᵀ J_{2m} Dphi - J_{2n}."""
    if model.m < model.n:
        raise ValueError("symplectic lifting requires m >= n")
    x = _check_batch(model, batch)
    jac = mlp_input_jacobian(model.enc_spec, model._net("enc", model.enc_spec), x)
    resid = np.swapaxes(jac, -1, -2) @ symplectic_form(model.m) @ jac - symplectic_form(model.n)
    return float(np.mean(resid**2))


def loss_deri(model: EmbeddingModel, batch, derivs) -> float:
    """Mean squared norm of Dphi(x) ẋ - J grad H(phi(x))."""
    x = _check_batch(model, batch)
    if derivs is None:
        raise ValueError("loss_deri requires time derivatives for every sample")
    xdot = np.asarray(derivs, dtype=np.float64)
    if xdot.shape != x.shape:
        raise ValueError("derivatives must align with the batch")
    enc = model._net("enc", model.enc_spec)
    y = mlp_forward(model.enc_spec, enc, x)
    jvp = mlp_input_jvp(model.enc_spec, enc, x, xdot)
    gh = latentham.latent_grad(model.latent_model(), y)
    return float(np.mean((jvp - _apply_j(gh)) ** 2))


def total_loss(model: EmbeddingModel, batch, derivs, cfg: TrainingConfig) -> float:
    """lambda-weighted sum of the three losses plus the L1 penalty on H parameters."""
    lam1, lam2, lam3 = cfg.lambdas
    ham = model.ham_params()
    l1 = sum(np.sum(np.abs(v)) for v in ham.values())
    total = cfg.l1_h * l1
    if lam1:
        total += lam1 * loss_encdec(model, batch)
    if lam2:
        total += lam2 * loss_symp(model, batch)
    if lam3:
        total += lam3 * loss_deri(model, batch, derivs)
    return float(total)


def _check_batch(model, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("batch must be a non-empty (B, 2n) array")
    if x.shape[1] != 2 * model.n:
        raise ValueError(f"batch dimension {x.shape[1]} does not match 2n = {2 * model.n}")
    return x


# -- trainer --------------------------------------------------------------------


def flatten_dataset(trajectories) -> tuple[np.ndarray, np.ndarray]:
    """Pool (state, derivative) samples from a list of trajectories."""
    xs, ds = [], []
    for tr in trajectories:
        if tr.derivs is None:
            raise ValueError(f"trajectory {tr.ic_id!r} carries no derivatives")
        xs.append(tr.states)
        ds.append(tr.derivs)
    return np.concatenate(xs, axis=0), np.concatenate(ds, axis=0)


def train(dataset, variant: str, cfg: TrainingConfig, model_cfg: ModelConfig,
          callback=None):
    """Train one embedding variant; deterministic for a fixed cfg.seed.

    `dataset` is a list of Trajectory objects with derivatives (analytic
    for the low-dimensional benchmarks, stencil-estimated for POD
    coordinates). Returns (model, history) where history holds per-epoch
    mean losses.
    """
    if model_cfg.latent_dim // 2 < 1:
        raise ValueError("latent dimension too small")
    x_all, xdot_all = flatten_dataset(dataset)
    n = x_all.shape[1] // 2
    if model_cfg.latent_dim < 2 * n and cfg.lambdas[1] != 0.0:
        raise ValueError("symplectic loss requires latent_dim >= state dimension")
    rng = np.random.default_rng(cfg.seed)
    model = build_model(variant, n, model_cfg, rng)
    wd = np.zeros(model.params.size)
    for name, _ in model.params.layout:
        sl = model.params.segment_slice(name)
        wd[sl] = cfg.wd_h if name.startswith("ham.") else cfg.wd_a
    state = AdamState.zeros(model.params.size)
    history = []
    n_samples = x_all.shape[0]
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg.base_lr, cfg.lr_gamma, cfg.lr_interval)
        perm = rng.permutation(n_samples)
        sums = {"encdec": 0.0, "symp": 0.0, "deri": 0.0, "l1": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, n_samples, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss_val = _train_step(model, x_all[idx], xdot_all[idx], cfg, wd, state, lr, sums)
            n_batches += 1
            if not np.isfinite(loss_val):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, batch {n_batches - 1}")
        rec = {k: v / n_batches for k, v in sums.items()}
        rec["epoch"] = epoch
        rec["lr"] = lr
        history.append(rec)
        if callback is not None:
            callback(epoch, rec)
    return model, history


def _train_step(model, x, xdot, cfg, wd, state, lr, sums):
    lam1, lam2, lam3 = cfg.lambdas
    enc = model._net("enc", model.enc_spec, as_nodes=True)
    dec = model._net("dec", model.dec_spec, as_nodes=True)
    ham = model.ham_params(as_nodes=True)
    comp = _components(model, x, xdot, enc, dec, ham, cfg.lambdas)
    total = lam1 * comp["encdec"] + lam2 * comp["symp"] + lam3 * comp["deri"] \
        + cfg.l1_h * comp["l1"]
    leaves = [w for w, _ in enc] + [b for _, b in enc] \
        + [w for w, _ in dec] + [b for _, b in dec] + list(ham.values())
    grads = tape.grad(total, leaves)
    flat = np.concatenate([g.ravel() for g in grads])
    order = [f"enc.W{i}" for i in range(len(enc))] + [f"enc.b{i}" for i in range(len(enc))] \
        + [f"dec.W{i}" for i in range(len(dec))] + [f"dec.b{i}" for i in range(len(dec))] \
        + list(ham.keys())
    grad_full = np.zeros(model.params.size)
    pos = 0
    for name, g in zip(order, grads):
        sl = model.params.segment_slice(name)
        grad_full[sl] = g.ravel()
        pos += g.size
    try:
        adam_step(model.params.values, grad_full, state, lr, weight_decay=wd)
    except ValueError as err:
        raise RuntimeError(f"optimizer failure: {err}") from err
    for key in ("encdec", "symp", "deri", "l1"):
        sums[key] += float(comp[key].value if isinstance(comp[key], Node) else comp[key])
    sums["total"] += float(total.value)
    return float(total.value)


# -- latent rollout ----------------------------------------------------------------


@dataclass
class RolloutDiagnostics:
    bound: Optional[float] = None
    max_ratio: float = 0.0
    violations: list = field(default_factory=list)


def latent_rollout(model: EmbeddingModel, x0, t_grid, cfg: SolverConfig = None,
                   slack: float = 1e-6):
    """Encode, integrate the latent field with implicit midpoint, decode.

    For SOS variants the trajectory bound of the stability certificate is
    checked at every step; violations beyond the relative slack are
    recorded (and warned about), never fatal. Returns
    (predicted Trajectory, latent Trajectory, RolloutDiagnostics).
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (2 * model.n,):
        raise ValueError(f"initial condition must have shape ({2 * model.n},)")
    y0 = model.encode(x0)
    lat = model.latent_model()
    f = lambda y: latentham.latent_vector_field(lat, y)
    latent_traj = integrate_trajectory(f, y0, t_grid, cfg, ic_id="latent")
    diag = RolloutDiagnostics()
    if latentham.is_sos(lat):
        bound = latentham.stability_bound(lat, y0)
        diag.bound = bound
        vals = latentham.bound_functional(lat, latent_traj.states)
        scale = bound if bound > 0 else 1.0
        diag.max_ratio = float(np.max(vals) / scale) if bound > 0 else float(np.max(vals))
        bad = np.nonzero(vals > bound + slack * scale)[0]
        for k in bad:
            diag.violations.append((int(k), float(vals[k])))
        if bad.size:
            warnings.warn(f"stability bound exceeded at {bad.size} of {len(vals)} "
                          f"steps (max ratio {diag.max_ratio:.6f})")
    states = model.decode(latent_traj.states)
    pred = Trajectory(latent_traj.times, states, None, ic_id="decoded")
    return pred, latent_traj, diag
