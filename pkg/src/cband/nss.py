"""Natural-scene statistics of activation maps.

MSCN normalisation with a 7x7 Gaussian window, zero-mean generalized Gaussian
fit by moment matching, and per-frame feature assembly.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.special import gammaln

from .errors import DegenerateInput

ALPHA_MIN = 0.05
ALPHA_MAX = 10.0
ALPHA_STEP = 0.001
ALPHA_TOL = 1e-6
MIN_GGD_SAMPLES = 16
BRISQUE_SIGMA = 7.0 / 6.0


class FeatureMode(enum.IntEnum):
    GGD = 0
    MEAN_STD = 1
    ALPHA_ONLY = 2
    SIGMA_ONLY = 3

    @property
    def per_channel(self) -> int:
        return 2 if self in (FeatureMode.GGD, FeatureMode.MEAN_STD) else 1

    @classmethod
    def parse(cls, text: str) -> "FeatureMode":
        return cls[text.upper().replace("-", "_")]


@dataclass(frozen=True)
class GaussianWindow:
    half_width: int
    half_height: int
    sigma: float
    weights: np.ndarray  # (2L+1, 2K+1), rows indexed by vertical offset

    @property
    def profile_x(self) -> np.ndarray:
        return _profile(self.half_width, self.sigma)

    @property
    def profile_y(self) -> np.ndarray:
        return _profile(self.half_height, self.sigma)


def _profile(half: int, sigma: float) -> np.ndarray:
    k = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(k * k) / (2.0 * sigma * sigma))
    return g / g.sum()


def build_window(K: int = 3, L: int = 3, sigma: Optional[float] = None) -> GaussianWindow:
    """Unit-volume circular Gaussian truncated at 3 sigma, i.e. sigma = K/3 unless overridden."""
    if K < 1 or L < 1:
        raise ValueError("window half-sizes must be >= 1")
    if sigma is None:
        sigma = K / 3.0
    # separable: the outer product of the normalised 1-D profiles is the normalised 2-D kernel
    weights = np.outer(_profile(L, sigma), _profile(K, sigma))
    return GaussianWindow(K, L, float(sigma), weights)


def _local_mean(x: np.ndarray, window: GaussianWindow) -> np.ndarray:
    # scipy "reflect" is the half-sample symmetric extension (d c b a | a b c d)
    out = ndimage.correlate1d(x, window.profile_x, axis=-1, mode="reflect")
    return ndimage.correlate1d(out, window.profile_y, axis=-2, mode="reflect")


def mscn(fmap: np.ndarray, window: Optional[GaussianWindow] = None, C1: float = 1.0) -> np.ndarray:
    """MSCN coefficients of a 2-D map, or of each map in a (C, H, W) stack.

    Local variance uses the population form E[x^2] - mu^2, clamped at zero.
    """
    if window is None:
        window = build_window()
    x = np.asarray(fmap, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("mscn expects at least a 2-D array")
    mu = _local_mean(x, window)
    var = _local_mean(x * x, window) - mu * mu
    sigma = np.sqrt(np.maximum(var, 0.0))
    return (x - mu) / (sigma + C1)


# ---------------------------------------------------------------------------
# GGD fit


def ggd_ratio(alpha):
    """r(alpha) = Gamma(1/a) Gamma(3/a) / Gamma(2/a)^2, which equals E[x^2] / E[|x|]^2."""
    a = np.asarray(alpha, dtype=np.float64)
    return np.exp(gammaln(1.0 / a) + gammaln(3.0 / a) - 2.0 * gammaln(2.0 / a))


@lru_cache(maxsize=None)
def _alpha_grid() -> tuple[np.ndarray, np.ndarray]:
    n = int(round((ALPHA_MAX - ALPHA_MIN) / ALPHA_STEP)) + 1
    alphas = ALPHA_MIN + ALPHA_STEP * np.arange(n)
    ratios = ggd_ratio(alphas)
    if not np.all(np.diff(ratios) < 0):
        raise AssertionError("GGD moment ratio must be strictly decreasing on the alpha grid")
    alphas.flags.writeable = False
    ratios.flags.writeable = False
    return alphas, ratios


def alpha_grid() -> tuple[np.ndarray, np.ndarray]:
    return _alpha_grid()


def solve_alpha(rho) -> tuple[np.ndarray, np.ndarray]:
    """Invert r(alpha) = rho. Returns (alpha, clamped) arrays.

    Nearest grid ratio first, then bisection inside the neighbouring grid cells.
    """
    alphas, ratios = _alpha_grid()
    rho = np.atleast_1d(np.asarray(rho, dtype=np.float64))
    low_clamp = rho >= ratios[0]
    high_clamp = rho <= ratios[-1]
    # ratios descend; search on the ascending reversal
    rev = ratios[::-1]
    pos = np.searchsorted(rev, rho)
    hi_i = np.clip(pos, 1, len(rev) - 1)
    cand_a = len(rev) - 1 - hi_i
    cand_b = len(rev) - hi_i
    nearest = np.where(np.abs(ratios[cand_a] - rho) <= np.abs(ratios[cand_b] - rho), cand_a, cand_b)
    lo = alphas[np.maximum(nearest - 1, 0)].copy()
    hi = alphas[np.minimum(nearest + 1, len(alphas) - 1)].copy()
    while True:
        mid = 0.5 * (lo + hi)
        # r decreasing: r(mid) > rho means the root lies above mid
        above = ggd_ratio(mid) > rho
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
        if np.all(hi - lo < ALPHA_TOL):
            break
    alpha = 0.5 * (lo + hi)
    alpha = np.where(low_clamp, ALPHA_MIN, np.where(high_clamp, ALPHA_MAX, alpha))
    return alpha, low_clamp | high_clamp


@dataclass(frozen=True)
class GGDParams:
    alpha: float
    sigma: float
    clamped: bool = False


def fit_ggd(samples) -> GGDParams:
    """Moment-matching fit of a zero-mean GGD; sigma is the RMS of the samples."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < MIN_GGD_SAMPLES:
        raise ValueError(f"need at least {MIN_GGD_SAMPLES} samples, got {x.size}")
    m1 = np.mean(np.abs(x))
    m2 = np.mean(x * x)
    if m1 == 0.0:
        raise DegenerateInput("all samples are zero")
    alpha, clamped = solve_alpha(m2 / (m1 * m1))
    return GGDParams(float(alpha[0]), float(np.sqrt(m2)), bool(clamped[0]))


def fit_ggd_batch(x: np.ndarray):
    """Row-wise GGD fit of a (C, N) array. Returns (alpha, sigma, clamped, degenerate)."""
    x = np.asarray(x, dtype=np.float64)
    m1 = np.mean(np.abs(x), axis=1)
    m2 = np.mean(x * x, axis=1)
    degenerate = m1 == 0.0
    rho = np.where(degenerate, 1.0, m2 / np.where(degenerate, 1.0, m1 * m1))
    alpha, clamped = solve_alpha(rho)
    alpha = np.where(degenerate, ALPHA_MAX, alpha)
    return alpha, np.sqrt(m2), clamped | degenerate, degenerate


# ---------------------------------------------------------------------------
# per-frame features


@dataclass
class NSSFeatureVector:
    values: np.ndarray
    mode: FeatureMode
    frame_index: int = 0
    diagnostics: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.values)


def frame_features(maps, mode: FeatureMode = FeatureMode.GGD,
                   window: Optional[GaussianWindow] = None, C1: float = 1.0) -> NSSFeatureVector:
    """MSCN + per-channel statistics, interleaved (a1, s1, a2, s2, ...) in channel order.

    ``maps`` is an ActivationMaps or a (C, H, W) array. Constant channels give
    (ALPHA_MAX, 0) and an entry in ``diagnostics``.
    """
    data = getattr(maps, "data", maps)
    frame_index = getattr(maps, "frame_index", 0)
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"expected (C, H, W) activation maps, got shape {data.shape}")
    C = data.shape[0]
    coeffs = mscn(data, window, C1).reshape(C, -1)
    diagnostics = []
    if mode is FeatureMode.MEAN_STD:
        first = coeffs.mean(axis=1)
        second = coeffs.std(axis=1)
        for c in np.flatnonzero(~np.any(coeffs != 0.0, axis=1)):
            diagnostics.append({"channel": int(c), "issue": "constant channel"})
    else:
        if coeffs.shape[1] < MIN_GGD_SAMPLES:
            raise ValueError(
                f"activation maps of {data.shape[1]}x{data.shape[2]} give fewer than {MIN_GGD_SAMPLES} samples"
            )
        first, second, clamped, degenerate = fit_ggd_batch(coeffs)
        for c in np.flatnonzero(clamped):
            issue = "constant channel" if degenerate[c] else "alpha clamped to grid boundary"
            diagnostics.append({"channel": int(c), "issue": issue})
    if mode.per_channel == 2:
        values = np.empty(2 * C)
        values[0::2] = first
        values[1::2] = second
    elif mode is FeatureMode.ALPHA_ONLY:
        values = first.copy()
    else:
        values = second.copy()
    return NSSFeatureVector(values, mode, frame_index, diagnostics)


def alpha_values(vec: NSSFeatureVector) -> np.ndarray:
    if vec.mode is FeatureMode.GGD:
        return vec.values[0::2]
    if vec.mode is FeatureMode.ALPHA_ONLY:
        return vec.values
    raise ValueError(f"{vec.mode.name} vectors carry no alpha values")


def fitted_alpha_means(vectors: Sequence[NSSFeatureVector]) -> np.ndarray:
    """Channel-mean alpha per vector, over channels no vector flagged in its diagnostics.

    Comparing means across frames only makes sense on a shared channel set, and
    flagged channels sit at a grid bound rather than at a fitted value.
    """
    if not vectors:
        raise ValueError("no vectors")
    flagged = {d["channel"] for v in vectors for d in v.diagnostics}
    alphas = np.stack([alpha_values(v) for v in vectors])
    keep = np.setdiff1d(np.arange(alphas.shape[1]), sorted(flagged))
    if keep.size == 0:
        return np.full(len(vectors), np.nan)
    return alphas[:, keep].mean(axis=1)


def monotone_steps(trace) -> int:
    """Number of consecutive steps moving in the direction of the overall first-to-last change."""
    trace = np.asarray(trace, dtype=np.float64)
    direction = np.sign(trace[-1] - trace[0])
    return int(np.sum(np.sign(np.diff(trace)) == direction)) if direction else 0
