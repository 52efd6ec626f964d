"""Patch-level feature learning: convolutional and adversarial autoencoders.

One model is trained per metric on patches pooled from both regions. The
encoder's latent output is the patch feature vector. The adversarial
variant additionally trains a discriminator that pushes encoded latents
toward a standard Gaussian prior; its generator objective is

    total = reconstruction + lam * adversarial

computed with mean squared error and binary cross entropy respectively.
With ``lam = 0`` the generator update is bit-for-bit the plain
autoencoder update (the discriminator still trains on the side), which
the tests rely on.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DataError, InputError, TrainingError
from .nn import Activation, Conv2D, Dense, MaxPool2x2, Network, Upsample2x
from .nn import adam_init, adam_step, bce_loss, mse_loss
from .patches import NormRange, Patch
from .volumes import MetricId

# Seed-stream indices; the CAE consumes the same first/second/fourth
# streams as the AAE so that their parameter draws and shuffles coincide.
_STREAM_ENC, _STREAM_DEC, _STREAM_DISC, _STREAM_SHUFFLE, _STREAM_PRIOR = range(5)


@dataclass
class CaeConfig:
    latent_dim: int = 32
    learning_rate: float = 3e-4
    batch_size: int = 500
    epochs: int = 10
    patch_shape: tuple[int, int] = (16, 16)
    seed: int = 0

    def validate(self):
        if self.latent_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise DataError("latent_dim, epochs and batch_size must all be >= 1")
        h, w = self.patch_shape
        if h % 4 or w % 4:
            raise DataError("patch_shape must be divisible by 4 (two 2x2 pooling stages)")
        if not self.learning_rate > 0:
            raise DataError("learning rate must be positive")


@dataclass
class AaeConfig:
    latent_dim: int = 32
    lam: float = 0.1
    lr_generator: float = 6e-4
    lr_discriminator: float = 8e-4
    batch_size: int = 500
    epochs: int = 10
    patch_shape: tuple[int, int] = (16, 16)
    seed: int = 0

    def validate(self):
        if self.lam < 0:
            raise DataError("adversarial weight must be >= 0")
        if not (self.lr_generator > 0 and self.lr_discriminator > 0):
            raise DataError("both learning rates must be positive")
        CaeConfig(self.latent_dim, self.lr_generator, self.batch_size,
                  self.epochs, self.patch_shape, self.seed).validate()


@dataclass
class TrainingLog:
    """Per-epoch loss table. wall_time is informational and excluded from
    any determinism comparison."""

    rec: list[float] = field(default_factory=list)
    adv: list[float] = field(default_factory=list)
    total: list[float] = field(default_factory=list)
    disc: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def rows(self) -> list[tuple[float, float, float, float]]:
        return list(zip(self.rec, self.adv, self.total, self.disc))


@dataclass
class EncoderModel:
    """A trained per-metric encoder with the normalization it was fitted under."""

    metric: MetricId
    source: str  # "CAE" or "AAE"
    encoder: Network
    norm_range: NormRange
    latent_dim: int
    patch_shape: tuple[int, int] = (16, 16)


def build_encoder(latent_dim: int, patch_shape=(16, 16)) -> Network:
    h, w = patch_shape
    return Network([
        Conv2D(1, 8), Activation("relu"), MaxPool2x2(),
        Conv2D(8, 16), Activation("relu"), MaxPool2x2(),
        Dense(16 * (h // 4) * (w // 4), 128), Activation("relu"),
        Dense(128, latent_dim),
    ])


def build_decoder(latent_dim: int, patch_shape=(16, 16)) -> Network:
    h, w = patch_shape
    return Network([
        Dense(latent_dim, 128), Activation("relu"),
        Dense(128, 16 * (h // 4) * (w // 4), out_shape=(h // 4, w // 4, 16)), Activation("relu"),
        Upsample2x(), Conv2D(16, 8), Activation("relu"),
        Upsample2x(), Conv2D(8, 1), Activation("sigmoid"),
    ])


def build_discriminator(latent_dim: int) -> Network:
    return Network([
        Dense(latent_dim, 64), Activation("relu"),
        Dense(64, 32), Activation("relu"),
        Dense(32, 1),
    ])


def sample_prior(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. standard-Gaussian latent samples of the given dimension."""
    if n < 1:
        raise DataError("need n >= 1 prior samples")
    if dim < 1:
        raise DataError("prior dimension must be >= 1")
    return rng.standard_normal((n, dim))


def _coerce_batch(X, patch_shape) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    h, w = patch_shape
    if X.ndim == 2 and X.shape[1] == h * w:
        X = X.reshape(-1, h, w)
    if X.ndim != 3 or X.shape[1:] != (h, w):
        raise DataError(f"expected patches of shape {patch_shape}, got array {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("patch corpus contains non-finite values")
    return X[..., None]  # (n, h, w, 1) channels-last


def _prefix(params: dict, tag: str) -> dict:
    return {f"{tag}.{k}": v for k, v in params.items()}


def generator_losses_and_grads(enc, dec, x, lam, disc=None):
    """Losses and generator gradients of rec + lam * adv with the
    discriminator frozen.

    The reconstruction path runs the same operations whether or not a
    discriminator is present, so the lam = 0 adversarial run reproduces
    the plain run exactly.
    """
    z, enc_cache = enc.forward(x)
    recon, dec_cache = dec.forward(z)
    rec_loss, rec_grad = mse_loss(recon, x)
    adv_loss = 0.0
    dz_adv = None
    if disc is not None:
        logits, logit_cache = disc.forward(z)
        adv_loss, adv_grad = bce_loss(logits, np.ones_like(logits))
        if lam != 0.0:
            # Discriminator frozen here: only the latent gradient is kept.
            dz_adv, _ = disc.backward(logit_cache, adv_grad)
    dz, dec_grads = dec.backward(dec_cache, rec_grad)
    if dz_adv is not None:
        dz = dz + lam * dz_adv
    _, enc_grads = enc.backward(enc_cache, dz)
    grads = _prefix(enc_grads, "enc") | _prefix(dec_grads, "dec")
    return rec_loss, adv_loss, grads


def _generator_step(enc, dec, x, gen_params, gen_state, lam, disc):
    rec_loss, adv_loss, grads = generator_losses_and_grads(enc, dec, x, lam, disc)
    adam_step(gen_params, grads, gen_state)
    return rec_loss, adv_loss


def _discriminator_step(disc, z, prior, disc_params, disc_state):
    labels = np.concatenate([np.ones((prior.shape[0], 1)), np.zeros((z.shape[0], 1))])
    logits, cache = disc.forward(np.concatenate([prior, z], axis=0))
    loss, grad = bce_loss(logits, labels)
    _, grads = disc.backward(cache, grad)
    adam_step(disc_params, _prefix(grads, "disc"), disc_state)
    return loss


def _run_training(X: np.ndarray, cfg, adversarial: bool):
    n = X.shape[0]
    if n < cfg.batch_size:
        raise TrainingError(
            f"too few patches: {n} < batch_size {cfg.batch_size}")

    streams = np.random.SeedSequence(cfg.seed).spawn(5)
    enc = build_encoder(cfg.latent_dim, cfg.patch_shape)
    dec = build_decoder(cfg.latent_dim, cfg.patch_shape)
    enc.init_params(np.random.default_rng(streams[_STREAM_ENC]))
    dec.init_params(np.random.default_rng(streams[_STREAM_DEC]))
    shuffle_rng = np.random.default_rng(streams[_STREAM_SHUFFLE])

    lam = cfg.lam if adversarial else 0.0
    gen_lr = cfg.lr_generator if adversarial else cfg.learning_rate
    gen_params = _prefix(enc.parameters(), "enc") | _prefix(dec.parameters(), "dec")
    gen_state = adam_init(gen_params, lr=gen_lr)

    disc = disc_params = disc_state = prior_rng = None
    if adversarial:
        disc = build_discriminator(cfg.latent_dim)
        disc.init_params(np.random.default_rng(streams[_STREAM_DISC]))
        disc_params = _prefix(disc.parameters(), "disc")
        disc_state = adam_init(disc_params, lr=cfg.lr_discriminator)
        prior_rng = np.random.default_rng(streams[_STREAM_PRIOR])

    log = TrainingLog()
    collapse_run = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        rec_sum = adv_sum = disc_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = X[idx]
            if adversarial:
                z, _ = enc.forward(x)
                prior = sample_prior(x.shape[0], cfg.latent_dim, prior_rng)
                d_loss = _discriminator_step(disc, z, prior, disc_params, disc_state)
                disc_sum += d_loss * x.shape[0]
            rec_loss, adv_loss = _generator_step(enc, dec, x, gen_params, gen_state, lam, disc)
            if not (np.isfinite(rec_loss) and np.isfinite(adv_loss)):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch start {start}: "
                    f"rec={rec_loss}, adv={adv_loss}")
            rec_sum += rec_loss * x.shape[0]
            adv_sum += adv_loss * x.shape[0]
        epoch_rec = rec_sum / n
        epoch_adv = adv_sum / n
        epoch_disc = disc_sum / n
        log.rec.append(epoch_rec)
        log.adv.append(epoch_adv)
        log.total.append(epoch_rec + lam * epoch_adv)
        log.disc.append(epoch_disc)
        log.wall_time.append(time.perf_counter() - t0)
        if adversarial and epoch_disc < 1e-6:
            collapse_run += 1
            if collapse_run == 3:
                log.warnings.append(
                    f"discriminator collapse: loss < 1e-6 for 3 consecutive epochs ending at {epoch}")
        else:
            collapse_run = 0
    return enc, dec, disc, log


def train_cae(X, cfg: CaeConfig):
    """Train the plain convolutional autoencoder; returns (encoder, decoder, log)."""
    cfg.validate()
    X = _coerce_batch(X, cfg.patch_shape)
    enc, dec, _, log = _run_training(X, cfg, adversarial=False)
    return enc, dec, log


def train_aae(X, cfg: AaeConfig):
    """Train the adversarial autoencoder; returns (encoder, decoder, discriminator, log)."""
    cfg.validate()
    X = _coerce_batch(X, cfg.patch_shape)
    return _run_training(X, cfg, adversarial=True)


def encode_batch(encoder: Network, X, patch_shape=(16, 16)) -> np.ndarray:
    z, _ = encoder.forward(_coerce_batch(X, patch_shape))
    return z


def encode(model: EncoderModel, patch: Patch) -> np.ndarray:
    """Latent feature vector for one (already normalized) patch."""
    if patch.values.shape != tuple(model.patch_shape):
        raise DataError(f"patch shape {patch.values.shape} != model shape {model.patch_shape}")
    return encode_batch(model.encoder, patch.values[None], model.patch_shape)[0]


def save_encoder_model(base_path, model: EncoderModel, config_hash: str = "") -> None:
    """BAFNET1 weights plus a JSON sidecar with metric, source, and norm range."""
    from .nn.io import save_network
    base = Path(base_path)
    save_network(base.with_suffix(".bafnet"), model.encoder)
    sidecar = {
        "metric": model.metric.name,
        "source": model.source,
        "norm_range": [model.norm_range.vmin, model.norm_range.vmax],
        "latent_dim": model.latent_dim,
        "patch_shape": list(model.patch_shape),
        "config_hash": config_hash,
    }
    base.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def load_encoder_model(base_path) -> EncoderModel:
    from .nn.io import load_network
    base = Path(base_path)
    if not base.with_suffix(".json").is_file():
        raise InputError(f"no encoder sidecar at {base.with_suffix('.json')}")
    sidecar = json.loads(base.with_suffix(".json").read_text())
    return EncoderModel(
        metric=MetricId[sidecar["metric"]],
        source=sidecar["source"],
        encoder=load_network(base.with_suffix(".bafnet")),
        norm_range=NormRange(*sidecar["norm_range"]),
        latent_dim=sidecar["latent_dim"],
        patch_shape=tuple(sidecar["patch_shape"]),
    )


class ConvAutoencoder(BaseEstimator, TransformerMixin):
    """Plain convolutional autoencoder; ``transform`` yields latent codes.

    Accepts patches as (n, h, w) tiles or flattened (n, h*w) rows, so it
    drops into standard pipelines.
    """

    def __init__(self, latent_dim=32, learning_rate=3e-4, batch_size=500,
                 epochs=10, patch_shape=(16, 16), seed=0):
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.patch_shape = patch_shape
        self.seed = seed

    def _config(self) -> CaeConfig:
        return CaeConfig(self.latent_dim, self.learning_rate, self.batch_size,
                         self.epochs, tuple(self.patch_shape), self.seed)

    def fit(self, X, y=None):
        self.encoder_, self.decoder_, self.log_ = train_cae(X, self._config())
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        return encode_batch(self.encoder_, X, tuple(self.patch_shape))

    @property
    def source_kind(self) -> str:
        return "CAE"


class AdversarialAutoencoder(BaseEstimator, TransformerMixin):
    """Autoencoder with a Gaussian-prior discriminator on the latent space."""

    def __init__(self, latent_dim=32, lam=0.1, lr_generator=6e-4,
                 lr_discriminator=8e-4, batch_size=500, epochs=10,
                 patch_shape=(16, 16), seed=0):
        self.latent_dim = latent_dim
        self.lam = lam
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.batch_size = batch_size
        self.epochs = epochs
        self.patch_shape = patch_shape
        self.seed = seed

    def _config(self) -> AaeConfig:
        return AaeConfig(self.latent_dim, self.lam, self.lr_generator,
                         self.lr_discriminator, self.batch_size, self.epochs,
                         tuple(self.patch_shape), self.seed)

    def fit(self, X, y=None):
        self.encoder_, self.decoder_, self.discriminator_, self.log_ = train_aae(X, self._config())
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        return encode_batch(self.encoder_, X, tuple(self.patch_shape))

    @property
    def source_kind(self) -> str:
        return "AAE"
