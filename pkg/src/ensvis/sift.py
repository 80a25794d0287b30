"""Scale-space keypoint detection and 128-d local descriptors.

Coordinates follow image convention: ``x`` is the column and ``y`` the row,
both expressed at the resolution of the input image (octave 0). Keypoints
are strict extrema of a difference-of-Gaussians stack, refined to sub-pixel
position by a quadratic fit and filtered by contrast and an edge-response
ratio test. Descriptors are 4x4 spatial grids of 8-bin gradient-orientation
histograms, rotated into the keypoint frame, trilinearly interpolated,
L2-normalized, clipped at 0.2, and renormalized.

Images with too little texture to yield a handful of keypoints fall back to
descriptors sampled on a fixed grid so every image produces a usable
descriptor sample.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from sklearn.base import BaseEstimator, TransformerMixin

from .dataset import GrayImage
from .errors import DimensionError, InsufficientResolutionError

OCTAVES = 4
SCALES_PER_OCTAVE = 3
SIGMA0 = 1.6
ASSUMED_INPUT_BLUR = 0.5
CONTRAST_THRESH = 0.03
EDGE_RATIO = 10.0
MIN_KEYPOINTS = 8
DENSE_STRIDE = 8
DENSE_SIGMA = 1.6
ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_PEAK_RATIO = 0.8
MAX_ORIENTATIONS = 2
DESC_GRID = 4
DESC_ORI_BINS = 8
DESC_CELL_SCALE = 3.0
DESC_CLIP = 0.2
MAX_REFINE_STEPS = 5
DESC_LEN = DESC_GRID * DESC_GRID * DESC_ORI_BINS


@dataclass
class ScaleSpace:
    """Per-octave Gaussian stacks and their difference levels."""

    octaves: list  # octave -> (s + 3, H, W) Gaussian images
    dog: list  # octave -> (s + 2, H, W) difference-of-Gaussian images
    sigma0: float
    scales_per_octave: int

    @property
    def n_octaves(self) -> int:
        return len(self.octaves)

    def sigma_at(self, octave: int, level: float) -> float:
        """Absolute blur scale in input-image pixels."""
        return self.sigma0 * 2.0 ** (octave + level / self.scales_per_octave)


@dataclass
class Keypoint:
    x: float  # column, input-image pixels
    y: float  # row, input-image pixels
    scale: float  # absolute sigma
    orientation: float = 0.0  # radians in [0, 2*pi)
    response: float = 0.0  # |DoG| at the refined point
    # Discrete detection cell, kept so the extremum can be re-verified
    # against the raw DoG values.
    octave: int = 0
    level: int = 0
    ix: int = 0
    iy: int = 0


@dataclass
class DescriptorSet:
    """Rows of unit-norm descriptors for one image.

    Rows are unit L2 norm except for flagged all-zero rows, which only the
    grid fallback emits (a constant window has no gradient mass).
    """

    descriptors: np.ndarray  # (T, 128) float64
    image_id: int = -1
    skipped: int = 0

    @property
    def zero_rows(self) -> np.ndarray:
        return ~np.any(self.descriptors != 0.0, axis=1)


def _pixels(img):
    arr = img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D intensity grid, got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def build_scale_space(
    img,
    octaves: int = OCTAVES,
    scales_per_octave: int = SCALES_PER_OCTAVE,
    sigma0: float = SIGMA0,
) -> ScaleSpace:
    """Gaussian pyramid with s + 3 levels per octave and its DoG stack."""
    base = _pixels(img)
    if octaves < 1 or scales_per_octave < 2 or sigma0 <= 0:
        raise ValueError("octaves >= 1, scales_per_octave >= 2, sigma0 > 0 required")
    if min(base.shape) < 2**octaves:
        raise InsufficientResolutionError(
            f"{base.shape} image cannot host {octaves} octaves"
        )
    s = scales_per_octave
    level_sigmas = sigma0 * 2.0 ** (np.arange(s + 3) / s)
    first_blur = math.sqrt(max(sigma0**2 - ASSUMED_INPUT_BLUR**2, 0.0))
    gaussians = []
    dogs = []
    current = gaussian_filter(base, first_blur, mode="nearest") if first_blur > 0 else base
    for _ in range(octaves):
        stack = np.empty((s + 3,) + current.shape)
        stack[0] = current
        for i in range(1, s + 3):
            inc = math.sqrt(level_sigmas[i] ** 2 - level_sigmas[i - 1] ** 2)
            stack[i] = gaussian_filter(stack[i - 1], inc, mode="nearest")
        gaussians.append(stack)
        dogs.append(stack[1:] - stack[:-1])
        # Level s carries twice the base blur; every 2nd pixel seeds the
        # next octave at half resolution.
        current = stack[s][::2, ::2]
    return ScaleSpace(
        octaves=gaussians, dog=dogs, sigma0=sigma0, scales_per_octave=s
    )


def _strict_extrema(dog: np.ndarray, level: int, prefilter: float) -> np.ndarray:
    """(y, x) cells strictly above or below all 26 neighbors."""
    c = dog[level, 1:-1, 1:-1]
    candidate = np.abs(c) >= prefilter
    gt = np.ones_like(c, dtype=bool)
    lt = np.ones_like(c, dtype=bool)
    h, w = dog.shape[1:]
    for dl in (-1, 0, 1):
        plane = dog[level + dl]
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dl == 0 and dy == 0 and dx == 0:
                    continue
                n = plane[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
                gt &= c > n
                lt &= c < n
    ys, xs = np.nonzero(candidate & (gt | lt))
    return np.stack([ys + 1, xs + 1], axis=1)


def _is_strict_extremum(dog: np.ndarray, level: int, y: int, x: int) -> bool:
    cube = dog[level - 1 : level + 2, y - 1 : y + 2, x - 1 : x + 2]
    c = cube[1, 1, 1]
    others = np.delete(cube.ravel(), 13)
    return bool(np.all(c > others) or np.all(c < others))


def _refine(dog: np.ndarray, level: int, y: int, x: int):
    """Quadratic sub-pixel refinement; returns (level, y, x, offset, value)."""
    n_levels, h, w = dog.shape
    for _ in range(MAX_REFINE_STEPS):
        cube = dog[level - 1 : level + 2, y - 1 : y + 2, x - 1 : x + 2]
        grad = 0.5 * np.array(
            [
                cube[1, 1, 2] - cube[1, 1, 0],  # d/dx
                cube[1, 2, 1] - cube[1, 0, 1],  # d/dy
                cube[2, 1, 1] - cube[0, 1, 1],  # d/dlevel
            ]
        )
        dxx = cube[1, 1, 2] - 2 * cube[1, 1, 1] + cube[1, 1, 0]
        dyy = cube[1, 2, 1] - 2 * cube[1, 1, 1] + cube[1, 0, 1]
        dss = cube[2, 1, 1] - 2 * cube[1, 1, 1] + cube[0, 1, 1]
        dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
        dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
        dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
        hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None
        if np.all(np.abs(offset) <= 0.5):
            value = cube[1, 1, 1] + 0.5 * grad @ offset
            return level, y, x, offset, value
        x += int(round(np.clip(offset[0], -1, 1)))
        y += int(round(np.clip(offset[1], -1, 1)))
        level += int(round(np.clip(offset[2], -1, 1)))
        if not (1 <= level <= n_levels - 2 and 1 <= y <= h - 2 and 1 <= x <= w - 2):
            return None
    return None


def _passes_edge_test(dog_level: np.ndarray, y: int, x: int, edge_ratio: float) -> bool:
    dxx = dog_level[y, x + 1] - 2 * dog_level[y, x] + dog_level[y, x - 1]
    dyy = dog_level[y + 1, x] - 2 * dog_level[y, x] + dog_level[y - 1, x]
    dxy = 0.25 * (
        dog_level[y + 1, x + 1]
        - dog_level[y + 1, x - 1]
        - dog_level[y - 1, x + 1]
        + dog_level[y - 1, x - 1]
    )
    tr = dxx + dyy
    det = dxx * dyy - dxy * dxy
    if det <= 0:
        return False
    return tr * tr / det < (edge_ratio + 1.0) ** 2 / edge_ratio


def detect_keypoints(
    ss: ScaleSpace,
    contrast_thresh: float = CONTRAST_THRESH,
    edge_ratio: float = EDGE_RATIO,
) -> list:
    """Strict 26-neighbor DoG extrema surviving contrast and edge tests."""
    if contrast_thresh <= 0 or edge_ratio <= 0:
        raise ValueError("thresholds must be positive")
    s = ss.scales_per_octave
    keypoints = []
    for o, dog in enumerate(ss.dog):
        if min(dog.shape[1:]) < 3:
            continue
        for level in range(1, s + 1):
            for y0, x0 in _strict_extrema(dog, level, 0.5 * contrast_thresh):
                refined = _refine(dog, level, int(y0), int(x0))
                if refined is None:
                    continue
                lvl, y, x, offset, value = refined
                if abs(value) < contrast_thresh:
                    continue
                # The quadratic fit may have walked to a different cell;
                # only cells that are themselves strict extrema are kept so
                # every reported keypoint verifies against the raw DoG.
                if (lvl, y, x) != (level, y0, x0) and not _is_strict_extremum(
                    dog, lvl, y, x
                ):
                    continue
                if not _passes_edge_test(dog[lvl], y, x, edge_ratio):
                    continue
                scale_px = 2.0**o
                keypoints.append(
                    Keypoint(
                        x=(x + offset[0]) * scale_px,
                        y=(y + offset[1]) * scale_px,
                        scale=ss.sigma_at(o, lvl + offset[2]),
                        response=abs(value),
                        octave=o,
                        level=lvl,
                        ix=x,
                        iy=y,
                    )
                )
    return keypoints


def _gradients(img: np.ndarray):
    gy, gx = np.gradient(img)
    mag = np.hypot(gy, gx)
    ang = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    return mag, ang


def _orientation_angles(mag, ang, y, x, sigma):
    """Dominant gradient directions from a 36-bin weighted histogram."""
    h, w = mag.shape
    radius = max(int(round(3.0 * sigma)), 1)
    y0, y1 = max(y - radius, 0), min(y + radius + 1, h)
    x0, x1 = max(x - radius, 0), min(x + radius + 1, w)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    window_mag = mag[y0:y1, x0:x1]
    weight = np.exp(-((yy - y) ** 2 + (xx - x) ** 2) / (2.0 * sigma**2))
    votes = (window_mag * weight).ravel()
    pos = ang[y0:y1, x0:x1].ravel() * ORI_BINS / (2.0 * np.pi)
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    hist = np.zeros(ORI_BINS)
    np.add.at(hist, lo % ORI_BINS, votes * (1.0 - frac))
    np.add.at(hist, (lo + 1) % ORI_BINS, votes * frac)
    for _ in range(2):
        hist = (np.roll(hist, 1) + hist + np.roll(hist, -1)) / 3.0
    peak = hist.max()
    if peak <= 0:
        return []
    left = np.roll(hist, 1)
    right = np.roll(hist, -1)
    is_peak = (hist > left) & (hist > right) & (hist >= ORI_PEAK_RATIO * peak)
    bins = np.nonzero(is_peak)[0]
    bins = bins[np.argsort(hist[bins])[::-1]][:MAX_ORIENTATIONS]
    angles = []
    for b in bins:
        denom = left[b] - 2.0 * hist[b] + right[b]
        shift = 0.5 * (left[b] - right[b]) / denom if denom != 0 else 0.0
        angles.append(float(np.mod((b + shift) * 2.0 * np.pi / ORI_BINS, 2.0 * np.pi)))
    return angles


def _descriptor(mag, ang, y, x, sigma_oct, theta):
    """One 128-d histogram in the keypoint frame.

    The sampling window is intersected with the image; samples beyond the
    border are dropped rather than clamped, so border descriptors are
    built from the visible part of their support.
    """
    h, w = mag.shape
    d = DESC_GRID
    cell = DESC_CELL_SCALE * sigma_oct
    radius = int(round(cell * (d + 1) * math.sqrt(2.0) / 2.0))
    y0, y1 = max(y - radius, 0), min(y + radius + 1, h)
    x0, x1 = max(x - radius, 0), min(x + radius + 1, w)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dr = (yy - y).ravel()
    dc = (xx - x).ravel()
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    c_rot = (cos_t * dc + sin_t * dr) / cell
    r_rot = (-sin_t * dc + cos_t * dr) / cell
    rbin = r_rot + d / 2.0 - 0.5
    cbin = c_rot + d / 2.0 - 0.5
    keep = (rbin > -1.0) & (rbin < d) & (cbin > -1.0) & (cbin < d)
    if not np.any(keep):
        return np.zeros(DESC_LEN)
    rbin, cbin = rbin[keep], cbin[keep]
    votes = mag[y0:y1, x0:x1].ravel()[keep] * np.exp(
        -(r_rot[keep] ** 2 + c_rot[keep] ** 2) / (2.0 * (0.5 * d) ** 2)
    )
    obin = np.mod(
        (ang[y0:y1, x0:x1].ravel()[keep] - theta) * DESC_ORI_BINS / (2.0 * np.pi),
        DESC_ORI_BINS,
    )
    hist = np.zeros((d + 2, d + 2, DESC_ORI_BINS))
    r0 = np.floor(rbin).astype(int)
    c0 = np.floor(cbin).astype(int)
    o0 = np.floor(obin).astype(int)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    for ir, wr in ((0, 1.0 - fr), (1, fr)):
        for ic, wc in ((0, 1.0 - fc), (1, fc)):
            for io, wo in ((0, 1.0 - fo), (1, fo)):
                np.add.at(
                    hist,
                    (r0 + 1 + ir, c0 + 1 + ic, (o0 + io) % DESC_ORI_BINS),
                    votes * wr * wc * wo,
                )
    return hist[1 : d + 1, 1 : d + 1].ravel()


def finalize_descriptor(raw: np.ndarray, return_stages: bool = False):
    """L2-normalize, clip at 0.2, renormalize; zero input stays zero."""
    norm = np.linalg.norm(raw)
    if norm == 0:
        zero = np.zeros_like(raw)
        return (zero, zero, zero) if return_stages else zero
    unit = raw / norm
    clipped = np.minimum(unit, DESC_CLIP)
    final = clipped / np.linalg.norm(clipped)
    return (unit, clipped, final) if return_stages else final


def compute_descriptors(ss: ScaleSpace, kps: list, image_id: int = -1) -> DescriptorSet:
    """Oriented descriptors for detected keypoints.

    Keypoints whose descriptor window leaves the image, or whose window has
    no gradient mass, are skipped and tallied in ``skipped``. Orientation
    peaks within 80% of the histogram maximum duplicate the keypoint, two
    per location at most.
    """
    s = ss.scales_per_octave
    grads = {}
    rows = []
    skipped = 0
    for kp in kps:
        o = kp.octave
        sigma_oct = kp.scale / 2.0**o
        level = int(np.clip(round(s * math.log2(max(sigma_oct, 1e-9) / ss.sigma0)), 0, s + 2))
        key = (o, level)
        if key not in grads:
            grads[key] = _gradients(ss.octaves[o][level])
        mag, ang = grads[key]
        xo = kp.x / 2.0**o
        yo = kp.y / 2.0**o
        xi, yi = int(round(xo)), int(round(yo))
        if not (0 <= yi < mag.shape[0] and 0 <= xi < mag.shape[1]):
            skipped += 1
            continue
        angles = _orientation_angles(mag, ang, yi, xi, ORI_SIGMA_FACTOR * sigma_oct)
        if not angles:
            skipped += 1
            continue
        produced = False
        for theta in angles:
            raw = _descriptor(mag, ang, yi, xi, sigma_oct, theta)
            if not np.any(raw):
                continue
            kp.orientation = theta
            rows.append(finalize_descriptor(raw))
            produced = True
        if not produced:
            skipped += 1
    desc = np.vstack(rows) if rows else np.zeros((0, DESC_LEN))
    return DescriptorSet(descriptors=desc, image_id=image_id, skipped=skipped)


def dense_descriptors(
    img, stride: int = DENSE_STRIDE, sigma: float = DENSE_SIGMA, image_id: int = -1
) -> DescriptorSet:
    """Fixed-scale, zero-orientation descriptors on a regular grid."""
    pixels = _pixels(img)
    blur = math.sqrt(max(sigma**2 - ASSUMED_INPUT_BLUR**2, 0.0))
    base = gaussian_filter(pixels, blur, mode="nearest") if blur > 0 else pixels
    mag, ang = _gradients(base)
    rows = []
    for y in range(stride // 2, pixels.shape[0], stride):
        for x in range(stride // 2, pixels.shape[1], stride):
            raw = _descriptor(mag, ang, y, x, sigma, 0.0)
            rows.append(finalize_descriptor(raw))
    desc = np.vstack(rows) if rows else np.zeros((0, DESC_LEN))
    return DescriptorSet(descriptors=desc, image_id=image_id, skipped=0)


def extract_sift(
    img,
    image_id: int = -1,
    octaves: int = OCTAVES,
    scales_per_octave: int = SCALES_PER_OCTAVE,
    sigma0: float = SIGMA0,
    contrast_thresh: float = CONTRAST_THRESH,
    edge_ratio: float = EDGE_RATIO,
    min_keypoints: int = MIN_KEYPOINTS,
    dense_stride: int = DENSE_STRIDE,
) -> DescriptorSet:
    """Full detector + descriptor pipeline with grid fallback."""
    pixels = _pixels(img)
    octaves = min(octaves, int(math.log2(max(min(pixels.shape), 2))))
    ss = build_scale_space(pixels, octaves, scales_per_octave, sigma0)
    kps = detect_keypoints(ss, contrast_thresh, edge_ratio)
    if len(kps) < min_keypoints:
        return dense_descriptors(pixels, stride=dense_stride, image_id=image_id)
    result = compute_descriptors(ss, kps, image_id=image_id)
    if result.descriptors.shape[0] < min_keypoints:
        return dense_descriptors(pixels, stride=dense_stride, image_id=image_id)
    return result


class SiftExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer from grayscale images to descriptor sets."""

    def __init__(
        self,
        octaves=OCTAVES,
        scales_per_octave=SCALES_PER_OCTAVE,
        sigma0=SIGMA0,
        contrast_thresh=CONTRAST_THRESH,
        edge_ratio=EDGE_RATIO,
        min_keypoints=MIN_KEYPOINTS,
        dense_stride=DENSE_STRIDE,
    ):
        self.octaves = octaves
        self.scales_per_octave = scales_per_octave
        self.sigma0 = sigma0
        self.contrast_thresh = contrast_thresh
        self.edge_ratio = edge_ratio
        self.min_keypoints = min_keypoints
        self.dense_stride = dense_stride

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return [
            extract_sift(
                img,
                image_id=i,
                octaves=self.octaves,
                scales_per_octave=self.scales_per_octave,
                sigma0=self.sigma0,
                contrast_thresh=self.contrast_thresh,
                edge_ratio=self.edge_ratio,
                min_keypoints=self.min_keypoints,
                dense_stride=self.dense_stride,
            )
            for i, img in enumerate(X)
        ]
