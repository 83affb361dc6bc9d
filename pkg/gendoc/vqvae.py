"""VQ-VAE image tokenizer: strided conv encoder, codebook, transposed-conv decoder"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from .config import VQVAEConfig
from .errors import InputValidationError, NumericError
from .numerics import Adam, Tensor, conv2d, conv_transpose2d, mse, no_grad, parameter
from .observability import get_logger, log_with_context

logger = get_logger("vqvae")

STRIDE = 8
KERNEL = 4


@dataclass
class ImageTokenGrid:
    """h × w visual codes in raster order"""
    h: int
    w: int
    tokens: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64).reshape(-1)
        if self.tokens.size != self.h * self.w:
            raise InputValidationError(
                f"token grid holds {self.tokens.size} ids for a {self.h}x{self.w} grid"
            )
        if self.tokens.size and self.tokens.min() < 0:
            raise InputValidationError("negative visual code in token grid")


def _init_conv(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_vqvae_params(
    config: VQVAEConfig, codebook_size: int, rng: np.random.Generator
) -> dict[str, Tensor]:
    """Encoder 1→hidden→hidden→d_code and mirrored decoder, all k4/s2/p1"""
    h, d = config.hidden, config.d_code
    params: dict[str, Tensor] = {}
    enc = [(1, h), (h, h), (h, d)]
    for i, (cin, cout) in enumerate(enc, start=1):
        params[f"encoder.conv{i}.weight"] = parameter(
            _init_conv(rng, (cout, cin, KERNEL, KERNEL), cin * KERNEL * KERNEL)
        )
        params[f"encoder.conv{i}.bias"] = parameter(np.zeros(cout))
    dec = [(d, h), (h, h), (h, 1)]
    for i, (cin, cout) in enumerate(dec, start=1):
        params[f"decoder.deconv{i}.weight"] = parameter(
            _init_conv(rng, (cin, cout, KERNEL, KERNEL), cin * KERNEL)
        )
        params[f"decoder.deconv{i}.bias"] = parameter(np.zeros(cout))
    params["codebook"] = parameter(rng.normal(0.0, 1.0, size=(codebook_size, d)))
    return params


def _as_image(image) -> Tensor:
    if isinstance(image, Tensor):
        x = image
    else:
        x = Tensor(np.asarray(image, dtype=np.float64))
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or x.shape[0] != 1:
        raise InputValidationError(f"expected a single-channel raster, got shape {x.shape}")
    return x


def vq_encode(image, params: dict[str, Tensor]) -> Tensor:
    """
    Encode one grayscale raster to an h × w × d_code latent grid.

    Raises:
        InputValidationError: height or width not divisible by the total stride 8
    """
    x = _as_image(image)
    _, height, width = x.shape
    if height % STRIDE or width % STRIDE:
        raise InputValidationError(
            f"image {height}x{width} is not divisible by the encoder stride {STRIDE}"
        )
    for i in (1, 2, 3):
        x = conv2d(x, params[f"encoder.conv{i}.weight"], params[f"encoder.conv{i}.bias"],
                   stride=2, padding=1)
        if i < 3:
            x = x.gelu()
    return x.transpose(1, 2, 0)


def vq_decode(latents: Tensor, params: dict[str, Tensor]) -> Tensor:
    """h × w × d_code grid → 1 × H × W raster"""
    x = latents.transpose(2, 0, 1)
    for i in (1, 2, 3):
        x = conv_transpose2d(x, params[f"decoder.deconv{i}.weight"], params[f"decoder.deconv{i}.bias"],
                             stride=2, padding=1)
        if i < 3:
            x = x.gelu()
    return x


def nearest_codes(flat: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the nearest codebook row per latent; ties go to the lowest index"""
    if codebook.shape[0] == 0:
        raise InputValidationError("codebook is empty")
    if flat.shape[-1] != codebook.shape[1]:
        raise InputValidationError(
            f"latent dimension {flat.shape[-1]} does not match codebook dimension {codebook.shape[1]}"
        )
    dist = ((flat[:, None, :] - codebook[None, :, :]) ** 2).sum(axis=-1)
    return dist.argmin(axis=1)


def quantize_latents(latents, codebook) -> ImageTokenGrid:
    z = latents.data if isinstance(latents, Tensor) else np.asarray(latents)
    cb = codebook.data if isinstance(codebook, Tensor) else np.asarray(codebook)
    if z.ndim != 3:
        raise InputValidationError(f"latents must be h x w x d, got shape {z.shape}")
    h, w, d = z.shape
    return ImageTokenGrid(h, w, nearest_codes(z.reshape(h * w, d), cb))


@dataclass
class VQLossParts:
    total: Tensor
    reconstruction: Tensor
    codebook: Tensor
    commitment: Tensor


def vq_loss(image: Tensor, recon: Tensor, z: Tensor, z_q: Tensor, beta: float) -> VQLossParts:
    """Reconstruction MSE + codebook MSE(sg[z], z_q) + beta · MSE(z, sg[z_q])"""
    reconstruction = mse(recon, image)
    codebook_term = mse(z_q, z.detach())
    commitment = mse(z, z_q.detach())
    total = reconstruction + codebook_term
    if beta:
        total = total + commitment * beta
    return VQLossParts(total, reconstruction, codebook_term, commitment)


def straight_through(z: Tensor, z_q: Tensor) -> Tensor:
    """Value of `z_q`; the gradient arriving here passes to `z` unchanged"""
    return z + (z_q - z).detach()


def lookup_codes(codes: np.ndarray, params: dict[str, Tensor], h: int, w: int) -> Tensor:
    """Codebook rows for fixed codes as an h × w × d_code grid (differentiable in the codebook)"""
    return params["codebook"][np.asarray(codes).reshape(-1)].reshape(h, w, params["codebook"].shape[1])


def vq_forward(image, params: dict[str, Tensor], beta: float) -> VQLossParts:
    x = _as_image(image)
    z = vq_encode(x, params)
    h, w, d = z.shape
    codes = nearest_codes(z.data.reshape(h * w, d), params["codebook"].data)
    z_q = lookup_codes(codes, params, h, w)
    recon = vq_decode(straight_through(z, z_q), params)
    return vq_loss(x, recon, z, z_q, beta)


def vqvae_train_step(
    images: Sequence[np.ndarray],
    params: dict[str, Tensor],
    beta: float,
    optimizer: Optional[Adam] = None,
    lr: float = 0.0,
    step: int = 0,
) -> tuple[float, float]:
    """
    Mean VQ-VAE loss over a batch, backpropagated and (with an optimizer) applied.

    Returns:
        (total loss, reconstruction MSE)

    Raises:
        InputValidationError: empty batch
        NumericError: non-finite loss; the message names the batch index
    """
    if not images:
        raise InputValidationError("vqvae_train_step needs a non-empty batch")
    if optimizer is not None:
        optimizer.zero_grad()
    scale = 1.0 / len(images)
    total = recon = 0.0
    for index, image in enumerate(images):
        parts = vq_forward(image, params, beta)
        value = float(parts.total.data)
        if not math.isfinite(value):
            raise NumericError(
                f"non-finite VQ-VAE loss at step {step}, batch index {index}", where=f"batch {index}"
            )
        (parts.total * scale).backward()
        total += value * scale
        recon += float(parts.reconstruction.data) * scale
    if optimizer is not None:
        optimizer.step(lr)
    return total, recon


@dataclass
class VQTokenizer:
    """Frozen VQ-VAE used as the visual-token target generator"""
    params: dict[str, Tensor]
    history: list[float] = field(default_factory=list)

    @property
    def codebook_size(self) -> int:
        return self.params["codebook"].shape[0]

    def tokenize(self, image: np.ndarray) -> ImageTokenGrid:
        with no_grad():
            z = vq_encode(image, self.params)
        return quantize_latents(z, self.params["codebook"])

    def usage(self, images: Sequence[np.ndarray]) -> float:
        """Fraction of codebook entries used over `images`"""
        used: set[int] = set()
        for image in images:
            used.update(int(t) for t in self.tokenize(image).tokens)
        return len(used) / self.codebook_size


def train_vqvae(
    images: Sequence[np.ndarray],
    config: VQVAEConfig,
    codebook_size: int,
    seed: int = 0,
    progress: bool = False,
) -> VQTokenizer:
    """
    Train the tokenizer on prepared rasters, logging window-mean reconstruction MSE
    and codebook usage every `log_window` steps.
    """
    if not images:
        raise InputValidationError("train_vqvae needs at least one image")
    rng = np.random.default_rng(seed)
    params = init_vqvae_params(config, codebook_size, rng)
    # seed the codebook with encoder outputs so every entry starts near the data
    with no_grad():
        sample = np.concatenate(
            [vq_encode(images[i], params).data.reshape(-1, config.d_code)
             for i in rng.choice(len(images), size=min(4, len(images)), replace=False)]
        )
    picks = rng.choice(sample.shape[0], size=codebook_size, replace=sample.shape[0] < codebook_size)
    seeded = sample[picks] + rng.normal(0.0, 1e-3, size=(codebook_size, config.d_code))
    params["codebook"].data = seeded.astype(params["codebook"].dtype)

    optimizer = Adam(params, grad_clip=1.0)
    tokenizer = VQTokenizer(params)
    log = log_with_context(logger, stage="vqvae")
    window: list[float] = []
    for step in tqdm(range(config.steps), desc="vqvae", disable=not progress):
        batch_idx = rng.choice(len(images), size=min(config.batch_size, len(images)), replace=False)
        _, recon = vqvae_train_step(
            [images[i] for i in batch_idx], params, config.beta, optimizer, config.lr, step
        )
        tokenizer.history.append(recon)
        window.append(recon)
        if len(window) == config.log_window:
            usage = tokenizer.usage([images[i] for i in batch_idx])
            log.info(f"vqvae step {step + 1}: recon mse {np.mean(window):.5f}, codebook usage {usage:.2f}")
            window = []
    for t in params.values():
        t.requires_grad = False
        t.grad = None
    return tokenizer
