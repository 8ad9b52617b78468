"""Per-observation latent mechanism parameters for an additive noise model.

The effect ``y`` is modelled as a GP over the augmented input ``[x, theta]``;
``theta`` is fitted by maximizing the GP log-likelihood minus
``lam * log HSIC(x, theta)``, which pushes the latent parameters to stay
independent of the cause.
"""

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import linalg

from .errors import (
    EstimationFailure,
    InvalidData,
    InvalidParameter,
    NumericalFailure,
)
from .kernels import (
    center_kernel,
    hsic_biased,
    median_heuristic_bandwidth,
    rbf_kernel_matrix,
    _hsic_grad_from,
)
from .scg import scg_maximize

LOG_2PI = np.log(2.0 * np.pi)
HSIC_FLOOR = 1e-12
INIT_SD = 0.1
# largest per-coordinate SCG step, in units of the kernel bandwidth
MAX_STEP = 0.1
MAX_RESTARTS = 3


@dataclass(frozen=True)
class LatentConfig:
    lam: float = 50.0
    latent_dim: int = 1
    beta: float = 100.0
    kernel_bandwidth: object = "median"
    max_iters: int = 200
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise InvalidParameter(f"lambda must be >= 0, got {self.lam}")
        if self.latent_dim < 1:
            raise InvalidParameter("latent_dim must be >= 1")
        if not self.beta > 0:
            raise InvalidParameter("beta must be positive")
        if self.max_iters < 1:
            raise InvalidParameter("max_iters must be >= 1")
        if not self.tol > 0:
            raise InvalidParameter("tol must be positive")
        bw = self.kernel_bandwidth
        if bw != "median" and not (isinstance(bw, (int, float)) and bw > 0):
            raise InvalidParameter(f"kernel_bandwidth must be 'median' or positive, got {bw!r}")

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


@dataclass(frozen=True)
class LatentFit:
    theta: np.ndarray
    objective_trace: list
    final_objective: float
    hsic_x_theta: float
    config: LatentConfig
    hsic_x_theta_init: float = field(default=float("nan"))


def _factor(gram):
    """Cholesky factor of ``gram``, adding escalating jitter on failure."""
    gram = np.asarray(gram, dtype=float)
    jitter = 1e-6 * float(np.mean(np.diag(gram)))
    a = gram
    for attempt in range(4):
        try:
            return linalg.cho_factor(a, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            if attempt == 3:
                break
            a = gram + jitter * np.eye(gram.shape[0])
            jitter *= 10.0
    raise NumericalFailure("covariance not positive definite after jitter")


def _loglik_from_factor(cho, y, out_dim):
    n = y.shape[0]
    alpha = linalg.cho_solve(cho, y)
    logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
    val = -0.5 * out_dim * n * LOG_2PI - 0.5 * out_dim * logdet - 0.5 * float(y @ alpha)
    return val, alpha


def gp_log_likelihood(gram, y, out_dim):
    y = np.asarray(y, dtype=float)
    gram = np.asarray(gram, dtype=float)
    if gram.shape != (y.shape[0], y.shape[0]):
        raise InvalidParameter(f"gram shape {gram.shape} does not match y of length {y.shape[0]}")
    return _loglik_from_factor(_factor(gram), y, out_dim)[0]


def marginal_projection_likelihood(K, y, d, beta):
    """GP log-likelihood with covariance ``K + I/beta`` and ``d`` output dims."""
    k = K.values if hasattr(K, "values") else np.asarray(K, dtype=float)
    return gp_log_likelihood(k + np.eye(k.shape[0]) / beta, y, d)


def resolve_bandwidth(x, config):
    if config.kernel_bandwidth == "median":
        return median_heuristic_bandwidth(x)
    return float(config.kernel_bandwidth)


class _Problem:
    """Objective and gradient for fixed data, sharing one factorization per theta."""

    def __init__(self, x, y, config):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        n = self.x.shape[0]
        if self.y.shape[0] != n:
            raise InvalidParameter("x and y must have the same length")
        if n < 6:
            raise InvalidParameter(f"need n >= 6 observations, got {n}")
        self.config = config
        self.bw = resolve_bandwidth(self.x, config)
        self.kx = rbf_kernel_matrix(self.x, self.bw).values
        self.kxc = center_kernel(self.kx)
        self.out_dim = config.latent_dim + 1
        self._key = None

    def _eval(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self._key is not None and np.array_equal(theta, self._key):
            return self._cache
        if theta.shape != self.x.shape:
            raise InvalidParameter("theta must have the same length as x")
        if not np.all(np.isfinite(theta)):
            raise NumericalFailure("non-finite theta")
        n = theta.shape[0]
        kt = rbf_kernel_matrix(theta, self.bw).values
        kxt = self.kx * kt
        cho = _factor(kxt + np.eye(n) / self.config.beta)
        ll, alpha = _loglik_from_factor(cho, self.y, self.out_dim)
        hsic = max(float(np.sum(self.kxc * kt)) / n**2, 0.0)
        value = ll - self.config.lam * np.log(hsic + HSIC_FLOOR)
        self._key = theta.copy()
        self._cache = (value, cho, alpha, kt, kxt, hsic)
        return self._cache

    def value(self, theta):
        return self._eval(theta)[0]

    def gradient(self, theta):
        theta = np.asarray(theta, dtype=float)
        _, cho, alpha, kt, kxt, hsic = self._eval(theta)
        n = theta.shape[0]
        kinv = linalg.cho_solve(cho, np.eye(n))
        w = -0.5 * self.out_dim * kinv + 0.5 * np.outer(alpha, alpha)
        diff = theta[None, :] - theta[:, None]
        g_ll = 2.0 * np.sum(w * kxt * diff, axis=1) / self.bw**2
        if self.config.lam == 0:
            return g_ll
        g_h = _hsic_grad_from(self.kxc, kt, theta, self.bw)
        return g_ll - self.config.lam * g_h / (hsic + HSIC_FLOOR)

    def hsic(self, theta):
        return self._eval(theta)[5]


def objective(theta, x, y, config):
    return _Problem(x, y, config).value(theta)


def objective_gradient(theta, x, y, config):
    return _Problem(x, y, config).gradient(theta)


def hsic_x_theta(x, theta, bandwidth):
    return hsic_biased(rbf_kernel_matrix(x, bandwidth), rbf_kernel_matrix(theta, bandwidth))


def _standardize(v):
    v = np.asarray(v, dtype=float)
    sd = v.std()
    if sd == 0:
        raise InvalidData("input has zero variance")
    return (v - v.mean()) / sd


def initial_theta(n, rng):
    return rng.normal(0.0, INIT_SD, size=n)


def fit_latent_params(x, y, config=None):
    """Fit latent parameters to (x, y); both are standardized internally."""
    config = config or LatentConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidParameter("x and y must be 1-d arrays of equal length")
    if x.shape[0] < 10:
        raise InvalidParameter(f"need n >= 10 observations, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidData("x and y must be finite")
    xs, ys = _standardize(x), _standardize(y)
    problem = _Problem(xs, ys, config)
    rng = np.random.default_rng(config.seed)

    last_err = None
    for _ in range(MAX_RESTARTS + 1):
        init = initial_theta(xs.shape[0], rng)
        try:
            h0 = problem.hsic(init)
            theta, trace = scg_maximize(
                problem.value, problem.gradient, init, config.max_iters, config.tol,
                max_step=MAX_STEP * problem.bw,
            )
        except NumericalFailure as err:
            last_err = err
            continue
        return LatentFit(
            theta=theta,
            objective_trace=[float(v) for v in trace],
            final_objective=float(trace[-1]),
            hsic_x_theta=float(problem.hsic(theta)),
            config=config,
            hsic_x_theta_init=float(h0),
        )
    raise EstimationFailure(f"latent fit failed after {MAX_RESTARTS} restarts: {last_err}")
