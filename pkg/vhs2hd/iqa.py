"""
No-reference image quality: BRISQUE features (+ optional support-vector
regression score) and PIQE. Lower is better for both.

Everything here is pure numpy/scipy on a luminance image in the 0-255 range.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.optimize import brentq
from scipy.special import gamma

from vhs2hd.errors import DegenerateInputError, FrameSizeError, IqaModelError
from vhs2hd.frames import Frame

MSCN_WINDOW = 7
MSCN_SIGMA = 7.0 / 6.0
MSCN_C = 1.0

ALPHA_MIN = 0.2
ALPHA_MAX = 10.0
ALPHA_STEP = 1e-3
MIN_FIT_SAMPLES = 100

BRISQUE_FEATURES = 36
PAIR_SHIFTS = ((0, 1), (1, 0), (1, 1), (-1, 1))

PIQE_BLOCK = 16
PIQE_MIN_SIDE = 32
PIQE_ACTIVITY_THRESHOLD = 0.1
PIQE_IMPAIRED_THRESHOLD = 0.1
PIQE_SEGMENT = 6
PIQE_C = 1.0

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# svm-scale ranges of the published BRISQUE model (feature order as brisque_features)
BRISQUE_FEATURE_RANGES = np.array([
    [0.338, 10], [0.017204, 0.806612],
    [0.236, 1.642], [-0.123884, 0.20293], [0.000155, 0.712298], [0.001122, 0.470257],
    [0.244, 1.641], [-0.123586, 0.179083], [0.000152, 0.710456], [0.000975, 0.470984],
    [0.249, 1.555], [-0.135687, 0.100858], [0.000174, 0.684173], [0.000913, 0.534174],
    [0.258, 1.561], [-0.143408, 0.100486], [0.000179, 0.685696], [0.000888, 0.536508],
    [0.471, 3.264], [0.012809, 0.703171],
    [0.218, 1.046], [-0.094876, 0.187459], [1.5e-05, 0.442057], [0.001272, 0.40803],
    [0.222, 1.042], [-0.115772, 0.162604], [1.6e-05, 0.444362], [0.001374, 0.40243],
    [0.227, 0.996], [-0.117188, 0.098323], [3e-05, 0.531903], [0.001122, 0.369589],
    [0.228, 0.99], [-0.12243, 0.098658], [2.8e-05, 0.530092], [0.001118, 0.370399],
])

ImageLike = Union[Frame, np.ndarray]


# --- luminance and MSCN ---


def to_luminance(img: ImageLike) -> np.ndarray:
    """H×W float64 luminance on the 0-255 scale (Frame, H×W×3 RGB array or H×W gray array)."""
    if isinstance(img, Frame):
        img = img.to_rgb8()
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        r, g, b = LUMA_WEIGHTS
        return r * arr[..., 0] + g * arr[..., 1] + b * arr[..., 2]
    raise ValueError("Expected H×W or H×W×3 image, got shape %s" % (arr.shape,))


@lru_cache(maxsize=4)
def gaussian_window(size: int = MSCN_WINDOW, sigma: float = MSCN_SIGMA) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    w = np.outer(k, k)
    return w / w.sum()


def compute_mscn(gray: np.ndarray, c: float = MSCN_C, mode: str = "reflect") -> np.ndarray:
    """
    Mean-subtracted contrast-normalized coefficients (I - mu) / (sigma + c) with a
    7×7 Gaussian window (sigma 7/6). `mode` is the scipy.ndimage border mode.

    Raises:
        FrameSizeError: image smaller than the window
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.ndim != 2:
        raise ValueError("compute_mscn expects a single-channel image")
    if min(gray.shape) < MSCN_WINDOW:
        raise FrameSizeError("Image %s is smaller than the %d×%d window" % (gray.shape, MSCN_WINDOW, MSCN_WINDOW))
    w = gaussian_window()
    # Centered on one pixel value: constant images give exact zeros.
    centered = gray - gray.flat[0]
    mu = ndimage.correlate(centered, w, mode=mode)
    sigma = np.sqrt(np.abs(ndimage.correlate(centered * centered, w, mode=mode) - mu * mu))
    return (centered - mu) / (sigma + c)


# --- distribution fits ---


def _ggd_ratio(alpha):
    return gamma(1.0 / alpha) * gamma(3.0 / alpha) / gamma(2.0 / alpha) ** 2


def _aggd_ratio(alpha):
    return gamma(2.0 / alpha) ** 2 / (gamma(1.0 / alpha) * gamma(3.0 / alpha))


@lru_cache(maxsize=1)
def _alpha_grid() -> np.ndarray:
    return np.arange(ALPHA_MIN, ALPHA_MAX + ALPHA_STEP / 2, ALPHA_STEP)


def _solve_alpha(ratio_fn, target: float) -> float:
    """Nearest grid point of ratio_fn(alpha) == target, refined by brentq between its neighbours."""
    grid = _alpha_grid()
    values = ratio_fn(grid)
    index = int(np.argmin(np.abs(values - target)))
    lo = grid[max(index - 1, 0)]
    hi = grid[min(index + 1, len(grid) - 1)]
    f_lo = ratio_fn(lo) - target
    f_hi = ratio_fn(hi) - target
    if f_lo * f_hi < 0:
        return float(brentq(lambda a: ratio_fn(a) - target, lo, hi, xtol=1e-10))
    return float(grid[index])


def _check_samples(samples: np.ndarray) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < MIN_FIT_SAMPLES:
        raise DegenerateInputError("Need at least %d samples, got %d" % (MIN_FIT_SAMPLES, x.size))
    if not np.all(np.isfinite(x)):
        raise DegenerateInputError("Samples contain non-finite values")
    if np.var(x) == 0:
        raise DegenerateInputError("Samples have zero variance")
    return x


def fit_ggd(samples) -> Tuple[float, float]:
    """
    Zero-mean generalized Gaussian fit by moment matching.
    Returns (alpha, sigma) with sigma = sqrt(E[x^2]).
    """
    x = _check_samples(samples)
    second = np.mean(x * x)
    first = np.mean(np.abs(x))
    alpha = _solve_alpha(_ggd_ratio, second / first ** 2)
    return alpha, float(np.sqrt(second))


def fit_aggd(samples) -> Tuple[float, float, float, float]:
    """
    Asymmetric generalized Gaussian fit.
    Returns (alpha, sigma_left, sigma_right, eta); eta is the distribution mean.
    """
    x = _check_samples(samples)
    left = x[x < 0]
    right = x[x > 0]
    if left.size == 0 or right.size == 0:
        raise DegenerateInputError("Samples are all of one sign")
    sigma_l = float(np.sqrt(np.mean(left * left)))
    sigma_r = float(np.sqrt(np.mean(right * right)))
    g = sigma_l / sigma_r
    r_hat = np.mean(np.abs(x)) ** 2 / np.mean(x * x)
    target = r_hat * (g ** 3 + 1) * (g + 1) / (g ** 2 + 1) ** 2
    alpha = _solve_alpha(_aggd_ratio, target)
    eta = (sigma_r - sigma_l) * gamma(2.0 / alpha) / gamma(1.0 / alpha) * np.sqrt(gamma(1.0 / alpha) / gamma(3.0 / alpha))
    return alpha, sigma_l, sigma_r, float(eta)


# --- BRISQUE ---


def half_scale(gray: np.ndarray) -> np.ndarray:
    """Bilinear downsample by 2 (pixel-center aligned), i.e. the mean of each 2×2 block."""
    h, w = gray.shape
    g = gray[: h - h % 2, : w - w % 2]
    return 0.25 * (g[0::2, 0::2] + g[1::2, 0::2] + g[0::2, 1::2] + g[1::2, 1::2])


def _scale_features(gray: np.ndarray) -> List[float]:
    mscn = compute_mscn(gray)
    alpha, sigma = fit_ggd(mscn)
    out = [alpha, sigma ** 2]
    for shift in PAIR_SHIFTS:
        pair = mscn * np.roll(mscn, shift, axis=(0, 1))
        a, sl, sr, eta = fit_aggd(pair)
        out += [a, eta, sl ** 2, sr ** 2]
    return out


def brisque_features(img: ImageLike) -> np.ndarray:
    """
    36 features: for the full and the half scale, (alpha, sigma^2) of the MSCN
    coefficients followed by (alpha, eta, sigma_l^2, sigma_r^2) of the pairwise
    products along horizontal, vertical and both diagonal directions.
    """
    gray = to_luminance(img)
    features = _scale_features(gray) + _scale_features(half_scale(gray))
    return np.asarray(features, dtype=np.float64)


@dataclass
class SvrModel:
    """
    Epsilon-SVR with RBF kernel as stored by libsvm's svm-train, plus the
    svm-scale feature ranges applied before prediction.
    """
    gamma: float
    rho: float
    coefs: np.ndarray
    support_vectors: np.ndarray
    ranges: np.ndarray = field(default_factory=lambda: BRISQUE_FEATURE_RANGES.copy())
    lower: float = -1.0
    upper: float = 1.0

    def scale(self, features: np.ndarray) -> np.ndarray:
        lo, hi = self.ranges[:, 0], self.ranges[:, 1]
        span = np.where(hi > lo, hi - lo, 1.0)
        return self.lower + (self.upper - self.lower) * (features - lo) / span

    def predict(self, features: Sequence[float]) -> float:
        f = self.scale(np.asarray(features, dtype=np.float64))
        d2 = np.sum((self.support_vectors - f) ** 2, axis=1)
        return float(np.dot(self.coefs, np.exp(-self.gamma * d2)) - self.rho)


def _parse_range_file(path: Path, n: int) -> Tuple[np.ndarray, float, float]:
    lines = [line.split() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not lines or lines[0] != ["x"] or len(lines) < 2:
        raise IqaModelError("%s is not an svm-scale range file" % path)
    lower, upper = float(lines[1][0]), float(lines[1][1])
    ranges = np.zeros((n, 2))
    for parts in lines[2:]:
        index = int(parts[0]) - 1
        if not 0 <= index < n:
            raise IqaModelError("Range index %d out of bounds in %s" % (index + 1, path))
        ranges[index] = [float(parts[1]), float(parts[2])]
    return ranges, lower, upper


@lru_cache(maxsize=4)
def load_svr_model(model_path: str, range_path: Optional[str] = None) -> SvrModel:
    """
    Parse a libsvm text model (svm_type epsilon_svr, kernel_type rbf). Without a
    range file the published BRISQUE ranges are used.

    Raises:
        FileNotFoundError: model (or range) file missing
        IqaModelError: malformed file
    """
    path = Path(model_path)
    if not path.is_file():
        raise FileNotFoundError(str(path))
    header = {}
    vectors: List[np.ndarray] = []
    coefs: List[float] = []
    try:
        lines = iter(path.read_text(encoding="utf-8").splitlines())
        for line in lines:
            if line.strip() == "SV":
                break
            key, _, value = line.partition(" ")
            header[key] = value.strip()
        for line in lines:
            parts = line.split()
            if not parts:
                continue
            coefs.append(float(parts[0]))
            sv = np.zeros(BRISQUE_FEATURES)
            for item in parts[1:]:
                index, value = item.split(":")
                sv[int(index) - 1] = float(value)
            vectors.append(sv)
        if header.get("kernel_type") != "rbf":
            raise IqaModelError("Only rbf kernels are supported, got %r" % header.get("kernel_type"))
        gamma_value = float(header["gamma"])
        rho = float(header["rho"].split()[0])
    except (KeyError, ValueError, IndexError) as e:
        raise IqaModelError("Malformed SVR model %s: %s" % (path, e)) from e
    if not vectors:
        raise IqaModelError("SVR model %s has no support vectors" % path)
    model = SvrModel(gamma=gamma_value, rho=rho, coefs=np.asarray(coefs), support_vectors=np.stack(vectors))
    if range_path is not None:
        rpath = Path(range_path)
        if not rpath.is_file():
            raise FileNotFoundError(str(rpath))
        model.ranges, model.lower, model.upper = _parse_range_file(rpath, BRISQUE_FEATURES)
    return model


def brisque_score(
    features: Sequence[float],
    model_path: Union[str, Path],
    range_path: Optional[Union[str, Path]] = None,
) -> float:
    """SVR regression of the 36 features; raises FileNotFoundError when the model is missing."""
    model = load_svr_model(str(model_path), str(range_path) if range_path is not None else None)
    return model.predict(features)


# --- PIQE ---


@dataclass
class PiqeResult:
    score: float
    activity_mask: np.ndarray
    artifact_mask: np.ndarray
    noise_mask: np.ndarray
    active_blocks: int
    no_active_blocks: bool = False


def _segments(edge: np.ndarray) -> np.ndarray:
    n = PIQE_BLOCK - PIQE_SEGMENT + 1
    return np.stack([edge[i:i + PIQE_SEGMENT] for i in range(n)])


def _noticeable_artifact(block: np.ndarray) -> bool:
    """Any 6-pixel segment along one of the four block edges with std below the threshold."""
    edges = (block[0, :], block[:, -1], block[-1, :], block[:, 0])
    return any(bool(np.any(np.std(_segments(e), axis=1, ddof=1) < PIQE_IMPAIRED_THRESHOLD)) for e in edges)


def _center_surround_ratio(block: np.ndarray) -> float:
    # Center columns 7 and 8; surround drops columns 7 and 9 (sequential deletion).
    c1 = (PIQE_BLOCK - 1 + 1) // 2
    center = np.concatenate([block[:, c1 - 1], block[:, c1]])
    surround = np.delete(np.delete(block, c1 - 1, axis=1), c1, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.std(center, ddof=1) / np.std(surround, ddof=1)
    return 0.0 if np.isnan(ratio) else float(ratio)


def _noisy(block: np.ndarray, block_var: float) -> bool:
    sigma = np.sqrt(block_var)
    csd = _center_surround_ratio(block)
    beta = abs(sigma - csd) / max(sigma, csd)
    return bool(sigma > 2 * beta)


def piqe_score(img: ImageLike) -> PiqeResult:
    """
    Block-based perception quality: 16×16 blocks of the MSCN map, spatially active
    blocks scored for noticeable artifacts and noise.
    score = (sum of distorted block scores + C) / (active blocks + C) * 100, C = 1.
    An image without active blocks scores 100 and sets no_active_blocks.

    Raises:
        FrameSizeError: image smaller than 32×32
    """
    gray = to_luminance(img)
    rows, cols = gray.shape
    if rows < PIQE_MIN_SIDE or cols < PIQE_MIN_SIDE:
        raise FrameSizeError("PIQE needs at least %d×%d, got %d×%d" % (PIQE_MIN_SIDE, PIQE_MIN_SIDE, rows, cols))
    pad_r, pad_c = (-rows) % PIQE_BLOCK, (-cols) % PIQE_BLOCK
    if pad_r or pad_c:
        gray = np.pad(gray, ((0, pad_r), (0, pad_c)), mode="symmetric")
    peak = gray.max()
    gray = np.round(255.0 * gray / peak) if peak > 0 else np.zeros_like(gray)
    mscn = compute_mscn(gray, c=PIQE_C, mode="nearest")

    activity = np.zeros(mscn.shape, dtype=bool)
    artifacts = np.zeros(mscn.shape, dtype=bool)
    noise = np.zeros(mscn.shape, dtype=bool)
    distortion = 0.0
    active = 0
    for i in range(0, mscn.shape[0], PIQE_BLOCK):
        for j in range(0, mscn.shape[1], PIQE_BLOCK):
            block = mscn[i:i + PIQE_BLOCK, j:j + PIQE_BLOCK]
            block_var = float(np.var(block, ddof=1))
            if block_var <= PIQE_ACTIVITY_THRESHOLD:
                continue
            window = (slice(i, i + PIQE_BLOCK), slice(j, j + PIQE_BLOCK))
            activity[window] = True
            active += 1
            if _noticeable_artifact(block):
                artifacts[window] = True
                distortion += 1.0 - block_var
            if _noisy(block, block_var):
                noise[window] = True
                distortion += block_var

    score = (distortion + PIQE_C) / (active + PIQE_C) * 100.0
    return PiqeResult(
        score=float(np.clip(score, 0.0, 100.0)),
        activity_mask=activity[:rows, :cols],
        artifact_mask=artifacts[:rows, :cols],
        noise_mask=noise[:rows, :cols],
        active_blocks=active,
        no_active_blocks=active == 0,
    )
