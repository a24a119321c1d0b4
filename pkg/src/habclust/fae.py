"""Paired-encoder autoencoder with a dual decoding path.

One small encoder per modality pair feeds a shared latent layer; each pair
is reconstructed by its own decoder, while a global decoder reconstructs
all modalities from the per-pair projections. Training alternates Adam
steps on the pairwise reconstruction loss and on the global reconstruction
loss within every minibatch. Everything runs on a flat parameter vector so
the compiled and numpy kernel backends are interchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .kernels import fae_component_shapes, fae_param_count, fae_views, mlp_param_count, n_pairs

VARIANT_KINDS = ("baseline", "standard_ae", "ensemble_ae", "fae")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class FaeConfig:
    n_modalities: int
    hidden_width: int = 10
    latent_dim: int | None = None  # default: one latent node per modality
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.n_modalities < 2:
            raise ValueError("need at least 2 modalities")
        if self.latent_dim is None:
            self.latent_dim = self.n_modalities
        if self.latent_dim > self.n_modalities:
            raise ValueError("latent_dim must not exceed n_modalities")
        if self.hidden_width < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid architecture/training sizes")

    @property
    def n_pairs(self) -> int:
        return n_pairs(self.n_modalities)


@dataclass(eq=False)
class FaeModel:
    config: FaeConfig
    theta: np.ndarray
    kind: str = "fae"  # "fae" or "ensemble_ae" (no global decoder)

    @property
    def with_global(self) -> bool:
        return self.kind == "fae"

    @property
    def n_pairs(self) -> int:
        return self.config.n_pairs

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]

    def views(self) -> dict:
        c = self.config
        return fae_views(self.theta, c.n_modalities, c.hidden_width, c.latent_dim, self.with_global)


@dataclass(eq=False)
class StandardAeModel:
    """Symmetric autoencoder: modalities -> hidden -> latent, mirrored back."""

    config: FaeConfig
    theta: np.ndarray
    kind: str = "standard_ae"

    @property
    def dims(self) -> list[int]:
        c = self.config
        return [c.n_modalities, c.hidden_width, c.latent_dim, c.hidden_width, c.n_modalities]

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]


def _glorot(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


_FAE_FANS = {
    "enc_W1": lambda m, h, lat: (2, h),
    "enc_w2": lambda m, h, lat: (h, 1),
    "lat_W": lambda m, h, lat: (n_pairs(m), lat),
    "proj_v": lambda m, h, lat: (lat, 1),
    "dec_U1": lambda m, h, lat: (1, h),
    "dec_U2": lambda m, h, lat: (h, 2),
    "glob_S1": lambda m, h, lat: (n_pairs(m), h),
    "glob_S2": lambda m, h, lat: (h, m),
}


def fae_init(config: FaeConfig, kind: str = "fae") -> FaeModel:
    """Glorot-uniform weights, zero biases; deterministic given config.seed."""
    if kind not in ("fae", "ensemble_ae"):
        raise ValueError(f"unknown paired-autoencoder kind {kind!r}")
    c = config
    with_global = kind == "fae"
    theta = np.zeros(
        fae_param_count(c.n_modalities, c.hidden_width, c.latent_dim, with_global)
    )
    rng = np.random.default_rng(np.random.SeedSequence((c.seed, 0)))
    views = fae_views(theta, c.n_modalities, c.hidden_width, c.latent_dim, with_global)
    for name, shape in fae_component_shapes(c.n_modalities, c.hidden_width, c.latent_dim, with_global):
        if name in _FAE_FANS:
            fi, fo = _FAE_FANS[name](c.n_modalities, c.hidden_width, c.latent_dim)
            views[name][...] = _glorot(rng, shape, fi, fo)
    return FaeModel(config=replace(c), theta=theta, kind=kind)


def standard_ae_init(config: FaeConfig) -> StandardAeModel:
    c = config
    dims = [c.n_modalities, c.hidden_width, c.latent_dim, c.hidden_width, c.n_modalities]
    theta = np.zeros(mlp_param_count(dims))
    rng = np.random.default_rng(np.random.SeedSequence((c.seed, 0)))
    layers = kernels.mlp_views(theta, dims)
    for (w, _b), (n_in, n_out) in zip(layers, zip(dims[:-1], dims[1:])):
        w[...] = _glorot(rng, w.shape, n_in, n_out)
    return StandardAeModel(config=replace(c), theta=theta)


# ---------------------------------------------------------------------------
# forward / losses
# ---------------------------------------------------------------------------


def _check_batch(model, x) -> np.ndarray:
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    if x.shape[1] != model.config.n_modalities:
        raise ValueError(
            f"batch has {x.shape[1]} columns, model expects {model.config.n_modalities}"
        )
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input batch")
    return x


def fae_forward(model: FaeModel, x: np.ndarray):
    """Single-row forward pass: (latent, per-pair reconstructions, global)."""
    row = _check_batch(model, x)
    c = model.config
    z, pair_recon, global_recon = kernels.fae_reconstruct(
        model.theta, row, c.n_modalities, c.hidden_width, c.latent_dim, model.with_global
    )
    if row.shape[0] == 1:
        return z[0], pair_recon[0], None if global_recon is None else global_recon[0]
    return z, pair_recon, global_recon


def fae_loss_pairwise(model: FaeModel, batch: np.ndarray) -> float:
    batch = _check_batch(model, batch)
    c = model.config
    loss, _ = kernels.fae_value_grad(
        model.theta, batch, c.n_modalities, c.hidden_width, c.latent_dim, model.with_global, 0
    )
    return loss


def fae_loss_global(model: FaeModel, batch: np.ndarray) -> float:
    batch = _check_batch(model, batch)
    if not model.with_global:
        raise ValueError("model has no global decoding head")
    c = model.config
    loss, _ = kernels.fae_value_grad(
        model.theta, batch, c.n_modalities, c.hidden_width, c.latent_dim, True, 1
    )
    return loss


def fae_encode(model, pixels: np.ndarray) -> np.ndarray:
    pixels = _check_batch(model, pixels)
    c = model.config
    if isinstance(model, StandardAeModel):
        return kernels.mlp_encode(model.theta, pixels, model.dims, 2)
    return kernels.fae_encode(
        model.theta, pixels, c.n_modalities, c.hidden_width, c.latent_dim, model.with_global
    )


# ---------------------------------------------------------------------------
# Adam and training loops
# ---------------------------------------------------------------------------


class _AdamState:
    def __init__(self, n_params: int, lr: float, betas: tuple[float, float], eps: float = 1e-8):
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = np.zeros(n_params)
        self.lr, self.eps = lr, eps
        self.beta1, self.beta2 = betas

    def step(self, theta: np.ndarray, grad: np.ndarray, mask: np.ndarray) -> None:
        g = grad[mask]
        self.t[mask] += 1.0
        self.m[mask] = self.beta1 * self.m[mask] + (1.0 - self.beta1) * g
        self.v[mask] = self.beta2 * self.v[mask] + (1.0 - self.beta2) * g * g
        t = self.t[mask]
        m_hat = self.m[mask] / (1.0 - self.beta1**t)
        v_hat = self.v[mask] / (1.0 - self.beta2**t)
        theta[mask] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _fae_masks(model: FaeModel) -> tuple[np.ndarray, np.ndarray]:
    """(pairwise-step mask, global-step mask) over the flat vector."""
    mask_pair = np.zeros(model.n_params, dtype=bool)
    mask_glob = np.zeros(model.n_params, dtype=bool)
    vp = fae_views(mask_pair, *_dims_of(model))
    vg = fae_views(mask_glob, *_dims_of(model))
    for name in vp:
        if not name.startswith("glob_"):
            vp[name][...] = True
        if not name.startswith("dec_"):
            vg[name][...] = True
    return mask_pair, mask_glob


def _dims_of(model: FaeModel):
    c = model.config
    return c.n_modalities, c.hidden_width, c.latent_dim, model.with_global


def fae_train(model: FaeModel, pixels: np.ndarray, config: FaeConfig | None = None):
    """Minibatch training with alternating Adam steps.

    Every minibatch takes a step on the pairwise reconstruction loss
    (encoders, latent mixing, projections, pair decoders), then - for
    models with the global head - a step on the global loss (same trunk
    plus the global decoder). Moment estimates are shared per parameter
    across the two steps. Returns (model, trace) where trace maps loss
    name -> per-epoch means with the pre-training loss prepended.
    """
    c = config or model.config
    pixels = _check_batch(model, pixels)
    m, h, lat, wg = _dims_of(model)
    rng = np.random.default_rng(np.random.SeedSequence((c.seed, 1)))
    adam = _AdamState(model.n_params, c.learning_rate, c.adam_betas)
    mask_pair, mask_glob = _fae_masks(model)

    loss_p0, _ = kernels.fae_value_grad(model.theta, pixels, m, h, lat, wg, 0)
    trace = {"pairwise": [loss_p0]}
    if wg:
        loss_g0, _ = kernels.fae_value_grad(model.theta, pixels, m, h, lat, wg, 1)
        trace["global"] = [loss_g0]

    n = pixels.shape[0]
    for epoch in range(c.epochs):
        perm = rng.permutation(n)
        sum_p = sum_g = 0.0
        n_batches = 0
        for start in range(0, n, c.batch_size):
            xb = pixels[perm[start : start + c.batch_size]]
            loss_p, grad = kernels.fae_value_grad(model.theta, xb, m, h, lat, wg, 0)
            adam.step(model.theta, grad, mask_pair)
            sum_p += loss_p
            if wg:
                loss_g, grad = kernels.fae_value_grad(model.theta, xb, m, h, lat, wg, 1)
                adam.step(model.theta, grad, mask_glob)
                sum_g += loss_g
            n_batches += 1
        trace["pairwise"].append(sum_p / n_batches)
        if wg:
            trace["global"].append(sum_g / n_batches)
        if not all(np.isfinite(v[-1]) for v in trace.values()):
            raise TrainingDivergedError(epoch)
    return model, {k: np.asarray(v) for k, v in trace.items()}


def standard_ae_train(model: StandardAeModel, pixels: np.ndarray, config: FaeConfig | None = None):
    """One Adam step per minibatch on the plain reconstruction loss."""
    c = config or model.config
    pixels = _check_batch(model, pixels)
    rng = np.random.default_rng(np.random.SeedSequence((c.seed, 1)))
    adam = _AdamState(model.n_params, c.learning_rate, c.adam_betas)
    mask = np.ones(model.n_params, dtype=bool)
    loss0, _ = kernels.mlp_value_grad(model.theta, pixels, model.dims)
    trace = {"reconstruction": [loss0]}
    n = pixels.shape[0]
    for epoch in range(c.epochs):
        perm = rng.permutation(n)
        total, n_batches = 0.0, 0
        for start in range(0, n, c.batch_size):
            xb = pixels[perm[start : start + c.batch_size]]
            loss, grad = kernels.mlp_value_grad(model.theta, xb, model.dims)
            adam.step(model.theta, grad, mask)
            total += loss
            n_batches += 1
        trace["reconstruction"].append(total / n_batches)
        if not np.isfinite(trace["reconstruction"][-1]):
            raise TrainingDivergedError(epoch)
    return model, {k: np.asarray(v) for k, v in trace.items()}


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


def _loss_grad_fns(model, batch):
    """(name, fn) pairs for every loss the model defines."""
    batch = _check_batch(model, batch)
    if isinstance(model, StandardAeModel):
        dims = model.dims
        return [("reconstruction", lambda th: kernels.mlp_value_grad(th, batch, dims))]
    m, h, lat, wg = _dims_of(model)
    fns = [("pairwise", lambda th: kernels.fae_value_grad(th, batch, m, h, lat, wg, 0))]
    if wg:
        fns.append(("global", lambda th: kernels.fae_value_grad(th, batch, m, h, lat, wg, 1)))
    return fns


def gradient_check(model, batch: np.ndarray, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients,
    taken over every parameter and every loss the model defines."""
    worst = 0.0
    for _name, fn in _loss_grad_fns(model, batch):
        _, grad = fn(model.theta)
        theta = model.theta.copy()
        for i in range(theta.shape[0]):
            orig = theta[i]
            theta[i] = orig + epsilon
            lo_hi, _ = fn(theta)
            theta[i] = orig - epsilon
            lo_lo, _ = fn(theta)
            theta[i] = orig
            g_num = (lo_hi - lo_lo) / (2.0 * epsilon)
            rel = abs(grad[i] - g_num) / max(abs(grad[i]), abs(g_num), 1e-8)
            worst = max(worst, rel)
    return worst


fae_gradient_check = gradient_check


# ---------------------------------------------------------------------------
# variants (uniform train/encode contract)
# ---------------------------------------------------------------------------


class FeatureTransform:
    """Uniform wrapper: .train(pixels) then .encode(pixels) -> latent rows."""

    kind: str

    def __init__(self, config: FaeConfig, kind: str):
        self.kind = kind
        self.config = config
        self.trace: dict | None = None
        if kind == "baseline":
            self.model = None
        elif kind == "standard_ae":
            self.model = standard_ae_init(config)
        elif kind in ("ensemble_ae", "fae"):
            self.model = fae_init(config, kind=kind)
        else:
            raise ValueError(f"unknown variant kind {kind!r}")

    @property
    def latent_dim(self) -> int:
        return self.config.n_modalities if self.kind == "baseline" else self.config.latent_dim

    @property
    def n_params(self) -> int:
        return 0 if self.model is None else self.model.n_params

    def train(self, pixels: np.ndarray) -> "FeatureTransform":
        if self.kind == "baseline":
            self.trace = {}
        elif self.kind == "standard_ae":
            _, self.trace = standard_ae_train(self.model, pixels)
        else:
            _, self.trace = fae_train(self.model, pixels)
        return self

    def encode(self, pixels: np.ndarray) -> np.ndarray:
        if self.kind == "baseline":
            pixels = np.ascontiguousarray(np.atleast_2d(pixels), dtype=np.float64)
            if pixels.shape[1] != self.config.n_modalities:
                raise ValueError("modality count mismatch")
            return pixels.copy()
        return fae_encode(self.model, pixels)


def build_variant(kind: str, config: FaeConfig) -> FeatureTransform:
    if kind not in VARIANT_KINDS:
        raise ValueError(f"unknown variant kind {kind!r}; expected one of {VARIANT_KINDS}")
    return FeatureTransform(config, kind)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_MAGIC = "habclust-transformer v1"


def save_transform(transform: FeatureTransform, path: str) -> None:
    """Text weight file: header (kind + architecture), then one parameter
    per line in the documented layout order; exact round trip."""
    c = transform.config
    lines = [
        _MAGIC,
        f"kind {transform.kind}",
        f"n_modalities {c.n_modalities}",
        f"hidden_width {c.hidden_width}",
        f"latent_dim {c.latent_dim}",
        f"n_params {transform.n_params}",
    ]
    if transform.model is not None:
        lines.extend("%.17g" % w for w in transform.model.theta)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_transform(path: str) -> FeatureTransform:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a transformer weight file")
    header = dict(line.split(" ", 1) for line in lines[1:6])
    config = FaeConfig(
        n_modalities=int(header["n_modalities"]),
        hidden_width=int(header["hidden_width"]),
        latent_dim=int(header["latent_dim"]),
    )
    transform = build_variant(header["kind"], config)
    n_params = int(header["n_params"])
    if transform.n_params != n_params:
        raise ValueError(f"{path}: parameter count {n_params} does not match architecture")
    if transform.model is not None:
        weights = np.array([float(w) for w in lines[6 : 6 + n_params]])
        if weights.shape[0] != n_params:
            raise ValueError(f"{path}: truncated weight list")
        transform.model.theta[...] = weights
    return transform
