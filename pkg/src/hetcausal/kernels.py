"""RBF kernels, centering, the biased empirical HSIC and its Gamma null."""

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.spatial.distance import pdist, squareform

from .errors import InvalidData, InvalidParameter, DegenerateData, SampleTooSmall


@dataclass(frozen=True)
class KernelMatrix:
    values: np.ndarray
    bandwidth: float
    kind: str = "RBF"

    @property
    def n(self):
        return self.values.shape[0]

    def check(self, rtol=1e-12, psd_tol=1e-8):
        """Raise AssertionError if the matrix violates the kernel invariants."""
        v = self.values
        scale = max(np.abs(v).max(), 1.0)
        assert np.allclose(v, v.T, rtol=0, atol=rtol * scale), "not symmetric"
        if self.kind == "RBF":
            assert np.all(np.diag(v) == 1.0), "RBF diagonal must be 1"
        eig = np.linalg.eigvalsh(v)
        assert eig.min() >= -psd_tol * max(eig.max(), 0.0), "not PSD"
        return True


@dataclass(frozen=True)
class HsicNullMoments:
    mean: float
    variance: float
    sample_size: int


def _as_points(points):
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.ndim != 2:
        raise InvalidData(f"points must be 1-d or 2-d, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidData("points contain non-finite values")
    return p


def rbf_kernel_matrix(points, bandwidth):
    p = _as_points(points)
    if p.shape[0] < 2:
        raise InvalidParameter("need at least 2 points")
    if not bandwidth > 0:
        raise InvalidParameter(f"bandwidth must be positive, got {bandwidth}")
    d2 = squareform(pdist(p, "sqeuclidean"))
    return KernelMatrix(np.exp(-d2 / (2.0 * bandwidth**2)), float(bandwidth))


def median_heuristic_bandwidth(points):
    """Median of the pairwise Euclidean distances (i < j)."""
    p = _as_points(points)
    if p.shape[0] < 2:
        raise InvalidParameter("need at least 2 points")
    med = float(np.median(pdist(p)))
    if med == 0.0:
        raise DegenerateData("median pairwise distance is zero")
    return med


def center_kernel(K):
    """H K H with H = I - 11'/n, computed without forming H."""
    v = K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    row = v.mean(axis=0, keepdims=True)
    col = v.mean(axis=1, keepdims=True)
    return v - row - col + v.mean()


def _values(K):
    return K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)


def hsic_biased(K, L):
    """(1/n^2) tr(K H L H), clamped at zero."""
    k, l = _values(K), _values(L)
    if k.shape != l.shape:
        raise InvalidParameter(f"kernel size mismatch: {k.shape} vs {l.shape}")
    n = k.shape[0]
    if n < 2:
        raise InvalidParameter("need at least 2 observations")
    val = float(np.sum(center_kernel(k) * l)) / n**2
    return max(val, 0.0)


def hsic_gradient(x, theta, bandwidths):
    """Gradient of ``hsic_biased(rbf(x, bx), rbf(theta, bt))`` w.r.t. theta."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    if n < 2 or x.shape[0] != n:
        raise InvalidParameter("x and theta must have the same length >= 2")
    bx, bt = bandwidths
    kc = center_kernel(rbf_kernel_matrix(x, bx))
    lt = rbf_kernel_matrix(theta, bt).values
    return _hsic_grad_from(kc, lt, theta, bt)


def _hsic_grad_from(kc, lt, theta, bt):
    # d/dθ_a of Σ_ij Kc_ij L_ij / n² = (2/n²) Σ_j Kc_aj L_aj (θ_j - θ_a) / s²
    n = theta.shape[0]
    diff = theta[None, :] - theta[:, None]
    return 2.0 * np.sum(kc * lt * diff, axis=1) / (n**2 * bt**2)


def hsic_null_moments(K, L):
    """Mean and variance of the biased HSIC under independence."""
    k, l = _values(K), _values(L)
    n = k.shape[0]
    if n < 6:
        raise SampleTooSmall(f"null moments need n >= 6, got {n}")
    if l.shape != k.shape:
        raise InvalidParameter(f"kernel size mismatch: {k.shape} vs {l.shape}")
    off = n * (n - 1)
    mu_x = (k.sum() - np.trace(k)) / off
    mu_y = (l.sum() - np.trace(l)) / off
    mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / n

    b = (center_kernel(k) * center_kernel(l)) ** 2
    np.fill_diagonal(b, 0.0)
    var = b.sum() / off
    var *= 2.0 * (n - 4) * (n - 5) / (n * (n - 1) * (n - 2) * (n - 3))
    return HsicNullMoments(max(float(mean), 0.0), float(var), n)


def gamma_params(mean, variance):
    """Moment-matched Gamma: (shape, scale) = (m^2/v, v/m)."""
    if not (mean > 0 and variance > 0):
        raise InvalidParameter(f"mean and variance must be positive, got {mean}, {variance}")
    return mean**2 / variance, variance / mean


def gamma_quantile(mean, variance, level):
    if not 0.0 < level < 1.0:
        raise InvalidParameter(f"level must lie in (0, 1), got {level}")
    shape, scale = gamma_params(mean, variance)
    return float(stats.gamma.ppf(level, shape, scale=scale))


def gamma_sf(t, mean, variance):
    shape, scale = gamma_params(mean, variance)
    return float(stats.gamma.sf(t, shape, scale=scale))
