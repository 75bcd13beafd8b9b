"""2D orientation and confidence maps from Gabor filter banks, plus the
map-level orientation and mask losses.

Angle conventions: image x runs along columns, y along rows, and all map
angles are undirected line orientations in [0, pi). `gabor_kernel(theta)`
builds a filter whose carrier oscillates along theta, so it responds to
stripes *perpendicular* to theta; `orient_map` therefore probes line
orientation phi with the kernel at phi + pi/2 and stores phi, giving maps
where theta is the direction hair actually runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadKernelParams, DimensionMismatch, TruncatedFile, BadMagic

_BCE_EPS = 1e-7


@dataclass(frozen=True)
class GaborParams:
    sigma: float = 2.0       # px, envelope std along the carrier
    wavelength: float = 4.0  # px
    aspect: float = 0.5      # envelope y':x' ratio (< 1 elongates along the stripe)
    size: int = 9            # px, odd


def _gabor(theta, sigma, wavelength, aspect, size, phase):
    half = (size - 1) // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(float)
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    envelope = np.exp(-(xr ** 2 + (aspect * yr) ** 2) / (2.0 * sigma ** 2))
    return envelope * np.cos(2 * np.pi * xr / wavelength + phase)


def gabor_kernel(theta: float, sigma: float = 2.0, wavelength: float = 4.0,
                 aspect: float = 0.5, size: int = 9) -> np.ndarray:
    """Real oriented Gabor kernel, zero-mean after DC removal."""
    if size < 1 or size % 2 == 0:
        raise BadKernelParams(f"kernel size must be odd and positive, got {size}")
    if sigma <= 0 or wavelength <= 0 or aspect <= 0:
        raise BadKernelParams("sigma, wavelength and aspect must be positive")
    k = _gabor(theta, sigma, wavelength, aspect, size, 0.0)
    return k - k.mean()


def delta_theta(a, b):
    """Distance between undirected orientations: min(|d|, pi - |d|) after
    wrapping to [0, pi). Symmetric, zero at pi offsets, values in [0, pi/2]."""
    a = np.mod(np.asarray(a, dtype=float), np.pi)
    b = np.mod(np.asarray(b, dtype=float), np.pi)
    d = np.abs(a - b)
    out = np.minimum(d, np.pi - d)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class OrientationMap:
    """Per-pixel line orientation in [0, pi) with confidence in [0, 1]."""

    theta: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float)
        c = np.asarray(self.confidence, dtype=float)
        if t.ndim != 2 or t.shape != c.shape:
            raise DimensionMismatch("theta and confidence must be equal 2D arrays")
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "confidence", c)

    @property
    def height(self) -> int:
        return self.theta.shape[0]

    @property
    def width(self) -> int:
        return self.theta.shape[1]

    def to_bytes(self) -> bytes:
        head = b"ORI1" + struct.pack("<II", self.width, self.height)
        return (head + self.theta.astype("<f4").tobytes()
                + self.confidence.astype("<f4").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "OrientationMap":
        if len(data) < 4:
            raise TruncatedFile("file ends inside the magic", position=len(data))
        if data[:4] != b"ORI1":
            raise BadMagic(f"expected magic b'ORI1', got {data[:4]!r}", position=0)
        if len(data) < 12:
            raise TruncatedFile("file ends inside the size fields", position=len(data))
        w, h = struct.unpack_from("<II", data, 4)
        need = 12 + 2 * 4 * w * h
        if len(data) < need:
            raise TruncatedFile(f"need {need} bytes for a {w}x{h} map",
                                position=len(data))
        plane = 4 * w * h
        theta = np.frombuffer(data, dtype="<f4", count=w * h, offset=12)
        conf = np.frombuffer(data, dtype="<f4", count=w * h, offset=12 + plane)
        return cls(theta.reshape(h, w).astype(float),
                   conf.reshape(h, w).astype(float))


def orient_map(image: np.ndarray, num_angles: int = 32,
               params: GaborParams = GaborParams()) -> OrientationMap:
    """Dominant line orientation per pixel via a quadrature Gabor bank.

    Probes num_angles orientations spanning [0, pi); theta is the argmax of
    the quadrature response energy, confidence is the response variance
    across angles normalized by its image-wide maximum (so it is invariant
    to global brightness scaling and identically 0 on constant images).
    """
    if num_angles < 4:
        raise BadKernelParams("need at least 4 probe angles")
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise DimensionMismatch("image must be a 2D array")
    angles = np.arange(num_angles) * np.pi / num_angles
    responses = np.empty((num_angles,) + image.shape)
    kernel_l1 = 0.0
    for i, phi in enumerate(angles):
        theta_k = phi + np.pi / 2  # carrier perpendicular to the probed line
        kc = gabor_kernel(theta_k, params.sigma, params.wavelength,
                          params.aspect, params.size)
        ks = _gabor(theta_k, params.sigma, params.wavelength,
                    params.aspect, params.size, np.pi / 2)
        ks = ks - ks.mean()
        kernel_l1 = max(kernel_l1, np.abs(kc).sum(), np.abs(ks).sum())
        rc = ndimage.convolve(image, kc, mode="reflect")
        rs = ndimage.convolve(image, ks, mode="reflect")
        responses[i] = np.hypot(rc, rs)
    theta = angles[np.argmax(responses, axis=0)]
    var = responses.var(axis=0)
    # responses below the float-rounding floor of the convolution carry no
    # signal; without this a constant image normalizes its noise to 1
    floor = np.abs(image).max() * kernel_l1 * 1e-12
    var[responses.max(axis=0) <= floor] = 0.0
    peak = var.max()
    confidence = var / peak if peak > 0 else np.zeros_like(var)
    return OrientationMap(theta, confidence)


def orientation_loss(pred: OrientationMap, gt: OrientationMap) -> float:
    """Confidence-weighted mean angular distance, weights from gt confidence,
    divided by the full pixel count."""
    if pred.theta.shape != gt.theta.shape:
        raise DimensionMismatch(
            f"map shapes differ: {pred.theta.shape} vs {gt.theta.shape}")
    return float((delta_theta(pred.theta, gt.theta) * gt.confidence).mean())


def mask_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean binary cross-entropy between mask images in [0, 1]."""
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise DimensionMismatch(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    p = np.clip(pred, _BCE_EPS, 1.0 - _BCE_EPS)
    return float(-(gt * np.log(p) + (1.0 - gt) * np.log(1.0 - p)).mean())


def load_gray(path) -> np.ndarray:
    """8-bit grayscale image (PGM/PNG/...) as floats in [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("L"), dtype=float) / 255.0


def save_orientation_map(path, omap: OrientationMap) -> None:
    from .io import _atomic_write

    _atomic_write(path, omap.to_bytes())


def load_orientation_map(path) -> OrientationMap:
    with open(path, "rb") as fh:
        return OrientationMap.from_bytes(fh.read())
