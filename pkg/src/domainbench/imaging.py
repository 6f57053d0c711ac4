"""Deterministic image degradation kernels.

Every kernel:
  - takes a uint8 RGB array of shape (H, W, 3),
  - works on a normalized float view in [0, 1] (samples / 255),
  - re-quantizes once at the end with round-half-up and clamps to [0, 255],
  - returns a new uint8 RGB array of the input's dimensions,
  - is a pure function of (inputs, parameters, seed) and safe to call from
    many threads at once.

Neutral parameters (m=0, gamma=1, factor=1, k=0, sigma<0.01, density=0,
length=1, radius<1, intensity=0) return a byte-identical copy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.ndimage as ndi
from PIL import Image

from .errors import ParameterError, ShapeError

KERNEL_NORMALIZATION_TOL = 1e-6


def _check_image(img: np.ndarray) -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
        raise ParameterError(f"expected an (H, W, 3) array, got {getattr(img, 'shape', type(img))}")
    if img.dtype != np.uint8:
        raise ParameterError(f"expected uint8 samples, got {img.dtype}")
    return img


def to_float(img: np.ndarray) -> np.ndarray:
    """Normalized [0, 1] float64 view of a uint8 image."""
    return _check_image(img).astype(np.float64) / 255.0


def to_bytes(arr: np.ndarray) -> np.ndarray:
    """Quantize a normalized array back to uint8: round half up, then clamp."""
    return np.clip(np.floor(arr * 255.0 + 0.5), 0.0, 255.0).astype(np.uint8)


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG file into a uint8 (H, W, 3) array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(path, img: np.ndarray) -> None:
    """Write a uint8 (H, W, 3) array as PNG or JPEG, chosen by extension."""
    Image.fromarray(_check_image(img), mode="RGB").save(path)


class DegradationKind(str, Enum):
    HAZE = "haze"
    ILLUMINATION = "illumination"
    LOW_RESOLUTION = "low_resolution"
    GAUSSIAN_NOISE = "gaussian_noise"
    GAUSSIAN_BLUR = "gaussian_blur"
    SALT_PEPPER = "salt_pepper"
    MOTION_BLUR = "motion_blur"
    DEFOCUS = "defocus"
    RAIN = "rain"


# ---------------------------------------------------------------------------
# Convolution kernels


@dataclass(frozen=True)
class ConvolutionKernel:
    """A square convolution kernel with non-negative weights summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ParameterError(f"kernel must be square with odd size, got {w.shape}")
        if np.any(w < 0):
            raise ParameterError("kernel weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > KERNEL_NORMALIZATION_TOL:
            raise ParameterError(f"kernel weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def gaussian(cls, sigma: float) -> "ConvolutionKernel":
        """Discrete Gaussian, size 2*ceil(3*sigma)+1."""
        if sigma <= 0:
            raise ParameterError(f"gaussian kernel needs sigma > 0, got {sigma}")
        half = math.ceil(3.0 * sigma)
        ax = np.arange(-half, half + 1, dtype=np.float64)
        xx, yy = np.meshgrid(ax, ax)
        w = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
        return cls(w / w.sum())

    @classmethod
    def disk(cls, radius: float) -> "ConvolutionKernel":
        """Circular averaging filter: equal weight on cells whose center lies
        within ``radius`` of the kernel center."""
        if radius < 1:
            raise ParameterError(f"disk kernel needs radius >= 1, got {radius}")
        half = int(math.floor(radius))
        ax = np.arange(-half, half + 1, dtype=np.float64)
        xx, yy = np.meshgrid(ax, ax)
        w = ((xx**2 + yy**2) <= radius**2).astype(np.float64)
        return cls(w / w.sum())

    @classmethod
    def motion_line(cls, length: int, angle_deg: float) -> "ConvolutionKernel":
        """One-pixel-wide line of ``length`` taps rasterized at ``angle_deg``."""
        if length < 1:
            raise ParameterError(f"motion kernel needs length >= 1, got {length}")
        theta = math.radians(angle_deg)
        dx, dy = math.cos(theta), math.sin(theta)
        offsets = np.arange(length, dtype=np.float64) - (length - 1) / 2.0
        xs = np.rint(offsets * dx).astype(int)
        ys = np.rint(offsets * dy).astype(int)
        half = int(max(np.abs(xs).max(), np.abs(ys).max()))
        size = 2 * half + 1
        w = np.zeros((size, size), dtype=np.float64)
        # collisions from rounding accumulate; normalization keeps the sum at 1
        np.add.at(w, (ys + half, xs + half), 1.0)
        return cls(w / w.sum())


def _convolve(arr: np.ndarray, kernel: ConvolutionKernel) -> np.ndarray:
    """Convolve each channel of a float (H, W, 3) array, reflect borders."""
    return ndi.convolve(arr, kernel.weights[:, :, None], mode="reflect")


# ---------------------------------------------------------------------------
# Degradation kernels


def apply_haze(img: np.ndarray, m: float, airlight: float = 1.0, depth=10.0) -> np.ndarray:
    """Atmospheric-scattering haze: out = in * t + airlight * (1 - t), with
    transmission t = exp(-m * depth).

    ``depth`` is either a positive scalar (constant pseudo-depth) or a
    ``(d_min, d_max)`` pair for a vertical gradient running from ``d_min`` at
    the bottom row to ``d_max`` at the top row.
    """
    x = to_float(img)
    if m < 0:
        raise ParameterError(f"scattering coefficient m must be >= 0, got {m}")
    if not 0.0 <= airlight <= 1.0:
        raise ParameterError(f"airlight must lie in [0, 1], got {airlight}")
    if m == 0:
        return img.copy()
    h = x.shape[0]
    if np.isscalar(depth):
        d = np.full((h, 1, 1), float(depth))
    else:
        d_min, d_max = (float(v) for v in depth)
        d = np.linspace(d_max, d_min, h).reshape(h, 1, 1)
    if np.any(d <= 0):
        raise ParameterError("depth values must be > 0")
    t = np.exp(-m * d)
    return to_bytes(x * t + airlight * (1.0 - t))


def apply_gamma(img: np.ndarray, gamma: float) -> np.ndarray:
    """Gamma correction on the normalized view: out = in ** gamma."""
    x = to_float(img)
    if gamma <= 0:
        raise ParameterError(f"gamma must be > 0, got {gamma}")
    if gamma == 1.0:
        return img.copy()
    return to_bytes(np.power(x, gamma))


def _cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Catmull-Rom weights for taps at offsets -1..2 given fractions t, (n, 4)."""
    d = np.stack([t + 1.0, t, 1.0 - t, 2.0 - t], axis=1)
    w = np.where(
        d <= 1.0,
        (a + 2.0) * d**3 - (a + 3.0) * d**2 + 1.0,
        a * d**3 - 5.0 * a * d**2 + 8.0 * a * d - 4.0 * a,
    )
    return w


def _resample_axis(arr: np.ndarray, out_size: int, axis: int) -> np.ndarray:
    """Separable Catmull-Rom (a = -0.5) resampling along one axis, with
    center-aligned coordinates and clamped borders."""
    in_size = arr.shape[axis]
    scale = in_size / out_size
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * scale - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    w = _cubic_weights(frac)
    arr = np.moveaxis(arr, axis, 0)
    out = np.zeros((out_size,) + arr.shape[1:], dtype=np.float64)
    for k in range(4):
        idx = np.clip(base + (k - 1), 0, in_size - 1)
        out += w[:, k].reshape((-1,) + (1,) * (arr.ndim - 1)) * arr[idx]
    return np.moveaxis(out, 0, axis)


def apply_low_resolution(img: np.ndarray, factor: int) -> np.ndarray:
    """Bicubic (Catmull-Rom) downsample by ``factor`` followed by a bicubic
    upsample back to the original size, so annotations stay valid."""
    x = to_float(img)
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    h, w = x.shape[:2]
    if factor > min(w, h):
        raise ParameterError(f"factor {factor} exceeds image extent {min(w, h)}")
    if factor == 1:
        return img.copy()
    small_h, small_w = math.ceil(h / factor), math.ceil(w / factor)
    small = _resample_axis(_resample_axis(x, small_h, 0), small_w, 1)
    big = _resample_axis(_resample_axis(small, h, 0), w, 1)
    return to_bytes(big)


def apply_gaussian_noise(img: np.ndarray, k: float, seed: int) -> np.ndarray:
    """Additive i.i.d. zero-mean Gaussian noise with variance ``k`` on the
    normalized scale. ``k = 0`` is the identity."""
    x = to_float(img)
    if k < 0:
        raise ParameterError(f"noise variance k must be >= 0, got {k}")
    if k == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return to_bytes(x + rng.normal(0.0, math.sqrt(k), x.shape))


def apply_gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Convolution with a normalized discrete Gaussian, reflect borders.
    ``sigma < 0.01`` is the identity."""
    x = to_float(img)
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    if sigma < 0.01:
        return img.copy()
    return to_bytes(_convolve(x, ConvolutionKernel.gaussian(sigma)))


def apply_salt_pepper(img: np.ndarray, density: float, seed: int) -> np.ndarray:
    """Each pixel is independently corrupted with probability ``density``;
    corrupted pixels become 0 or 255 on all three channels, equally likely."""
    _check_image(img)
    if not 0.0 <= density <= 1.0:
        raise ParameterError(f"density must lie in [0, 1], got {density}")
    if density == 0:
        return img.copy()
    h, w = img.shape[:2]
    rng = np.random.default_rng(seed)
    corrupted = rng.random((h, w)) < density
    salt = rng.random((h, w)) < 0.5
    out = img.copy()
    out[corrupted & salt] = 255
    out[corrupted & ~salt] = 0
    return out


def apply_motion_blur(img: np.ndarray, length: float, angle: float) -> np.ndarray:
    """Convolution with a normalized line kernel of ``length`` taps rasterized
    at ``angle`` degrees, reflect borders. ``length = 1`` is the identity."""
    x = to_float(img)
    if length < 1:
        raise ParameterError(f"length must be >= 1, got {length}")
    taps = int(round(length))
    if taps <= 1:
        return img.copy()
    return to_bytes(_convolve(x, ConvolutionKernel.motion_line(taps, angle)))


def apply_defocus(img: np.ndarray, radius: float) -> np.ndarray:
    """Convolution with a normalized disk kernel, reflect borders.
    ``radius < 1`` is the identity."""
    x = to_float(img)
    if radius < 0:
        raise ParameterError(f"radius must be >= 0, got {radius}")
    if radius < 1:
        return img.copy()
    return to_bytes(_convolve(x, ConvolutionKernel.disk(radius)))


def rain_streak_mask(shape: tuple[int, int], quantile: float, seed: int) -> np.ndarray:
    """Seeded uniform noise thresholded at ``quantile``: a sparse binary mask
    whose expected density is 1 - quantile."""
    if not 0.0 < quantile < 1.0:
        raise ParameterError(f"quantile must lie in (0, 1), got {quantile}")
    rng = np.random.default_rng(seed)
    return (rng.random(shape) >= quantile).astype(np.float64)


def apply_rain(
    img: np.ndarray,
    intensity: float,
    streak_length: float = 15,
    angle: float = 75.0,
    quantile: float = 0.995,
    seed: int = 0,
) -> np.ndarray:
    """Procedural rain streaks: a thresholded-noise mask is motion-blurred
    into streaks and blended additively, out = clamp(in + intensity * streaks).

    This is a classical stand-in, not a learned generator.
    """
    x = to_float(img)
    if not 0.0 <= intensity <= 1.0:
        raise ParameterError(f"intensity must lie in [0, 1], got {intensity}")
    if intensity == 0:
        return img.copy()
    mask = rain_streak_mask(x.shape[:2], quantile, seed)
    taps = int(round(streak_length))
    if taps > 1:
        streaks = ndi.convolve(mask, ConvolutionKernel.motion_line(taps, angle).weights, mode="reflect")
    else:
        streaks = mask
    return to_bytes(x + intensity * streaks[:, :, None])


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on normalized views; identical
    images return +inf."""
    _check_image(a)
    _check_image(b)
    if a.shape != b.shape:
        raise ShapeError(f"image dimensions differ: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64) / 255.0 - b.astype(np.float64) / 255.0
    mse = float(np.mean(diff**2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


# ---------------------------------------------------------------------------
# Degradation specs and severity presets


@dataclass
class DegradationSpec:
    """One imaging-condition transform: kind, parameters, and a seed.

    ``params`` uses the kernel argument names. Seeded kernels derive their
    randomness from ``seed`` alone; for motion blur and rain, a missing
    ``angle`` parameter is drawn per image from the seed (uniform [0, 180)).
    """

    kind: DegradationKind
    params: dict = field(default_factory=dict)
    seed: int = 0
    severity_preset: str | None = None

    def __post_init__(self):
        self.kind = DegradationKind(self.kind)
        self.validate()

    def validate(self) -> None:
        p = self.params
        kind = self.kind
        if kind is DegradationKind.HAZE and p.get("m", 0.0) < 0:
            raise ParameterError("haze m must be >= 0")
        if kind is DegradationKind.ILLUMINATION and p.get("gamma", 1.0) <= 0:
            raise ParameterError("gamma must be > 0")
        if kind is DegradationKind.LOW_RESOLUTION and p.get("factor", 1) < 1:
            raise ParameterError("factor must be >= 1")
        if kind is DegradationKind.GAUSSIAN_NOISE and p.get("k", 0.0) < 0:
            raise ParameterError("noise variance k must be >= 0")
        if kind is DegradationKind.GAUSSIAN_BLUR and p.get("sigma", 0.0) < 0:
            raise ParameterError("sigma must be >= 0")
        if kind is DegradationKind.SALT_PEPPER and not 0.0 <= p.get("density", 0.0) <= 1.0:
            raise ParameterError("density must lie in [0, 1]")
        if kind is DegradationKind.MOTION_BLUR and p.get("length", 1) < 1:
            raise ParameterError("length must be >= 1")
        if kind is DegradationKind.DEFOCUS and p.get("radius", 0.0) < 0:
            raise ParameterError("radius must be >= 0")
        if kind is DegradationKind.RAIN:
            if not 0.0 <= p.get("intensity", 0.0) <= 1.0:
                raise ParameterError("intensity must lie in [0, 1]")
            if not 0.0 < p.get("quantile", 0.995) < 1.0:
                raise ParameterError("quantile must lie in (0, 1)")

    def apply(self, img: np.ndarray, seed: int | None = None) -> np.ndarray:
        """Run the configured kernel. ``seed`` overrides the spec seed so the
        amplifier can mix in per-image seeds."""
        p = self.params
        s = self.seed if seed is None else seed
        kind = self.kind
        if kind is DegradationKind.HAZE:
            depth = p.get("depth", 10.0)
            if "depth_min" in p or "depth_max" in p:
                depth = (p["depth_min"], p["depth_max"])
            return apply_haze(img, p.get("m", 0.0), p.get("airlight", 1.0), depth)
        if kind is DegradationKind.ILLUMINATION:
            return apply_gamma(img, p.get("gamma", 1.0))
        if kind is DegradationKind.LOW_RESOLUTION:
            return apply_low_resolution(img, int(p.get("factor", 1)))
        if kind is DegradationKind.GAUSSIAN_NOISE:
            return apply_gaussian_noise(img, p.get("k", 0.0), s)
        if kind is DegradationKind.GAUSSIAN_BLUR:
            return apply_gaussian_blur(img, p.get("sigma", 0.0))
        if kind is DegradationKind.SALT_PEPPER:
            return apply_salt_pepper(img, p.get("density", 0.0), s)
        if kind is DegradationKind.MOTION_BLUR:
            angle = p.get("angle")
            if angle is None:
                angle = float(np.random.default_rng(s).uniform(0.0, 180.0))
            return apply_motion_blur(img, p.get("length", 1), angle)
        if kind is DegradationKind.DEFOCUS:
            return apply_defocus(img, p.get("radius", 0.0))
        if kind is DegradationKind.RAIN:
            angle = p.get("angle")
            if angle is None:
                angle = float(np.random.default_rng(s).uniform(0.0, 180.0))
            return apply_rain(
                img,
                p.get("intensity", 0.0),
                p.get("streak_length", 15),
                angle,
                p.get("quantile", 0.995),
                s,
            )
        raise ParameterError(f"unknown degradation kind {kind!r}")

    @classmethod
    def from_preset(cls, name: str, seed: int = 0) -> "DegradationSpec":
        if name not in PRESETS:
            raise ParameterError(f"unknown severity preset {name!r}")
        kind, params = PRESETS[name]
        return cls(kind=kind, params=dict(params), seed=seed, severity_preset=name)


# Haze m and noise k pairs follow the published severity sweep; the rest are
# toolkit defaults chosen for a visible moderate/severe contrast.
PRESETS: dict[str, tuple[DegradationKind, dict]] = {
    "haze-moderate": (DegradationKind.HAZE, {"m": 0.05}),
    "haze-severe": (DegradationKind.HAZE, {"m": 0.08}),
    "noise-moderate": (DegradationKind.GAUSSIAN_NOISE, {"k": 0.04}),
    "noise-severe": (DegradationKind.GAUSSIAN_NOISE, {"k": 0.06}),
    "illumination-dark": (DegradationKind.ILLUMINATION, {"gamma": 2.2}),
    "illumination-bright": (DegradationKind.ILLUMINATION, {"gamma": 0.45}),
    "lowres-moderate": (DegradationKind.LOW_RESOLUTION, {"factor": 2}),
    "lowres-severe": (DegradationKind.LOW_RESOLUTION, {"factor": 4}),
    "blur-moderate": (DegradationKind.GAUSSIAN_BLUR, {"sigma": 1.5}),
    "blur-severe": (DegradationKind.GAUSSIAN_BLUR, {"sigma": 3.0}),
    "saltpepper-moderate": (DegradationKind.SALT_PEPPER, {"density": 0.05}),
    "saltpepper-severe": (DegradationKind.SALT_PEPPER, {"density": 0.12}),
    "motion-moderate": (DegradationKind.MOTION_BLUR, {"length": 9}),
    "motion-severe": (DegradationKind.MOTION_BLUR, {"length": 17}),
    "defocus-moderate": (DegradationKind.DEFOCUS, {"radius": 3}),
    "defocus-severe": (DegradationKind.DEFOCUS, {"radius": 5}),
    "rain-moderate": (DegradationKind.RAIN, {"intensity": 0.5, "streak_length": 13, "quantile": 0.995}),
    "rain-severe": (DegradationKind.RAIN, {"intensity": 0.8, "streak_length": 21, "quantile": 0.99}),
}


def register_preset(name: str, kind: DegradationKind | str, params: dict) -> None:
    PRESETS[name] = (DegradationKind(kind), dict(params))


def load_presets(path) -> list[str]:
    """Merge presets from a JSON file of ``name -> {kind, params}`` entries.
    Returns the names that were registered."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ParameterError(f"preset file {path} must hold a name -> spec mapping")
    names = []
    for name, entry in raw.items():
        register_preset(name, entry["kind"], entry.get("params", {}))
        names.append(name)
    return names
