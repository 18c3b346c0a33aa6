"""UNet perturbation generator and the l-infinity projection."""

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Conv2d, Module, Tensor, no_grad
from .autodiff import functional as F
from .errors import ShapeError, UsageError
from .io import load_checkpoint, save_checkpoint

DEFAULT_EPS = 16 / 255


@dataclass
class GeneratorConfig:
    channels: int = 3
    base: int = 16
    # per-frame instance norm after every internal conv; keeps Adam from compounding
    # weight growth through the stack into a saturated, image-independent delta
    norm: bool = True


class Generator(Module):
    """Two-level UNet: stride-2 conv downsampling, nearest x2 + conv upsampling.

    Fully convolutional; any H, W divisible by 4 works. Internal convs are
    followed by non-affine instance norm (when ``cfg.norm``) and relu; the raw
    output is unbounded, ``project_linf`` squashes it into the eps ball.
    """

    def __init__(self, cfg=None, seed=0):
        cfg = cfg or GeneratorConfig()
        self._cfg = cfg
        rng = np.random.default_rng(seed)
        c, b = cfg.channels, cfg.base
        # a bias in front of instance norm is cancelled by the mean subtraction
        bias = not cfg.norm
        self.enc1a = Conv2d(rng, c, b, bias=bias)
        self.enc1b = Conv2d(rng, b, b, bias=bias)
        self.down1 = Conv2d(rng, b, 2 * b, stride=2, bias=bias)
        self.enc2 = Conv2d(rng, 2 * b, 2 * b, bias=bias)
        self.down2 = Conv2d(rng, 2 * b, 4 * b, stride=2, bias=bias)
        self.mid = Conv2d(rng, 4 * b, 4 * b, bias=bias)
        self.up1 = Conv2d(rng, 4 * b, 2 * b, bias=bias)
        self.dec1 = Conv2d(rng, 4 * b, 2 * b, bias=bias)
        self.up2 = Conv2d(rng, 2 * b, b, bias=bias)
        self.dec2 = Conv2d(rng, 2 * b, b, bias=bias)
        self.head = Conv2d(rng, b, c, k=1)

    @property
    def config(self):
        return self._cfg

    def forward(self, frames):
        if not isinstance(frames, Tensor):
            frames = Tensor(np.asarray(frames, dtype=self.head.weight.dtype))
        if frames.ndim != 4 or frames.shape[1] != self._cfg.channels:
            raise ShapeError(f"generator expects (N, {self._cfg.channels}, H, W), got {frames.shape}")
        if frames.shape[2] % 4 or frames.shape[3] % 4:
            raise ShapeError(f"frame size {frames.shape[2:]} not divisible by 4")
        if self._cfg.norm:

            def relu(t):
                return F.relu(F.instance_norm(t))

        else:
            relu = F.relu
        s1 = relu(self.enc1b(relu(self.enc1a(frames))))
        s2 = relu(self.enc2(relu(self.down1(s1))))
        x = relu(self.mid(relu(self.down2(s2))))
        x = relu(self.up1(F.nearest_upsample2x(x)))
        x = relu(self.dec1(F.concat([x, s2], axis=1)))
        x = relu(self.up2(F.nearest_upsample2x(x)))
        x = relu(self.dec2(F.concat([x, s1], axis=1)))
        return self.head(x)

    generate_raw = forward

    def perturbation(self, frames, eps=DEFAULT_EPS):
        return project_linf(self.forward(frames), eps)

    def meta(self):
        return {"kind": "generator", "architecture": asdict(self._cfg)}

    def save(self, directory, **extra):
        return save_checkpoint(directory, self.state_dict(), {**self.meta(), **extra})

    @classmethod
    def load(cls, directory):
        tensors, meta = load_checkpoint(directory)
        if meta.get("kind") != "generator":
            raise UsageError(f"{directory} is not a generator checkpoint")
        model = cls(GeneratorConfig(**meta.get("architecture", {})))
        model.load_state_dict(tensors)
        return model, meta


def project_linf(raw, eps=DEFAULT_EPS):
    """delta = eps * tanh(raw): strictly inside the eps ball, smooth everywhere."""
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")
    return F.scale(F.tanh(raw), eps)


def apply(frames, delta):
    """Adversarial frames clamp(frames + delta, 0, 1)."""
    if not isinstance(frames, Tensor):
        frames = Tensor(np.asarray(frames, dtype=delta.dtype if isinstance(delta, Tensor) else np.float32))
    if frames.shape != delta.shape:
        raise ShapeError(f"frames {frames.shape} and delta {delta.shape} differ")
    return F.clamp(F.add(frames, delta), 0.0, 1.0)


def perturb(generator, frames, eps=DEFAULT_EPS):
    """Inference helper: numpy in, ``(adversarial, delta)`` numpy out, no tape."""
    with no_grad():
        delta = generator.perturbation(frames, eps)
        adv = apply(frames, delta)
    return adv.data, delta.data


class ZeroGenerator:
    """Stub whose perturbation is exactly zero; scores must match clean scores."""

    def perturbation(self, frames, eps=DEFAULT_EPS):
        arr = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        return Tensor(np.zeros(arr.shape, dtype=np.float32))
