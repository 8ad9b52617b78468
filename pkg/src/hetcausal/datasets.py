"""Pair-file ingestion and seeded synthetic generators."""

import ast
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DegenerateData, FormatError, InvalidData, InvalidParameter, ParseError


@dataclass(frozen=True)
class DataPair:
    x: np.ndarray
    y: np.ndarray
    true_direction: str = None
    true_labels: np.ndarray = None
    source_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape or x.shape[0] < 2:
            raise InvalidData("x and y must be 1-d of equal length >= 2")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidData("x and y must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.true_labels is not None:
            lab = np.asarray(self.true_labels, dtype=int)
            if lab.shape != x.shape:
                raise InvalidData("true_labels must match x in length")
            object.__setattr__(self, "true_labels", lab)
        if self.true_direction not in (None, "XtoY", "YtoX"):
            raise InvalidParameter(f"unknown direction {self.true_direction!r}")

    @property
    def n(self):
        return self.x.shape[0]


# -- expression descriptors ---------------------------------------------------

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
)


def compile_expression(expr):
    """Compile a function of ``x`` built from arithmetic and a few numpy ufuncs."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as err:
        raise InvalidParameter(f"bad expression {expr!r}: {err.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise InvalidParameter(f"disallowed syntax {type(node).__name__} in {expr!r}")
        if isinstance(node, ast.Name) and node.id != "x" and node.id not in _FUNCS and node.id not in _CONSTS:
            raise InvalidParameter(f"unknown name {node.id!r} in {expr!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise InvalidParameter(f"unknown function in {expr!r}")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise InvalidParameter(f"non-numeric constant in {expr!r}")
    code = compile(tree, "<regime>", "eval")

    def f(x):
        out = eval(code, {"__builtins__": {}}, {**_FUNCS, **_CONSTS, "x": np.asarray(x, dtype=float)})
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(x)).copy()

    return f


_X_DISTS = {"uniform": ("low", "high"), "normal": ("loc", "scale")}


@dataclass(frozen=True)
class SimSpec:
    """Mixture of additive noise regimes ``y = f_c(x) + N(0, noise_sd^2)``.

    ``regimes`` holds ``(expression, weight)`` pairs; weights are normalized
    with a warning if they do not sum to one.
    """
    regimes: tuple
    noise_sd: float = 0.05
    n: int = 300
    seed: int = 0
    x_distribution: dict = field(default_factory=lambda: {"kind": "uniform", "low": 0.0, "high": 1.1})

    def __post_init__(self):
        if not self.regimes:
            raise InvalidParameter("need at least one regime")
        regimes = tuple((str(e), float(w)) for e, w in self.regimes)
        w = np.array([r[1] for r in regimes])
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise InvalidParameter("regime weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            warnings.warn(f"regime weights sum to {w.sum():g}; normalizing", stacklevel=3)
            w = w / w.sum()
            regimes = tuple((e, float(wi)) for (e, _), wi in zip(regimes, w))
        for e, _ in regimes:
            compile_expression(e)
        object.__setattr__(self, "regimes", regimes)
        if not self.noise_sd > 0:
            raise InvalidParameter("noise_sd must be positive")
        if self.n < 10:
            raise InvalidParameter("n must be >= 10")
        if self.seed < 0:
            raise InvalidParameter("seed must be nonnegative")
        dist = dict(self.x_distribution)
        kind = dist.get("kind")
        if kind not in _X_DISTS or any(p not in dist for p in _X_DISTS[kind]):
            raise InvalidParameter(f"bad x_distribution {dist!r}")
        object.__setattr__(self, "x_distribution", dist)

    @property
    def weights(self):
        return np.array([w for _, w in self.regimes])

    def to_dict(self):
        return {
            "regimes": [[e, w] for e, w in self.regimes],
            "noise_sd": self.noise_sd,
            "n": self.n,
            "seed": self.seed,
            "x_distribution": dict(self.x_distribution),
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["regimes"] = tuple(tuple(r) for r in d["regimes"])
        return cls(**d)


def three_regime_spec(n=300, seed=0, noise_sd=0.05):
    return SimSpec(
        regimes=(("x**3", 1 / 3), ("0.5*x", 1 / 3), ("0.8 - x**3", 1 / 3)),
        noise_sd=noise_sd, n=n, seed=seed,
        x_distribution={"kind": "uniform", "low": 0.0, "high": 1.1},
    )


def _draw_x(dist, n, rng):
    if dist["kind"] == "uniform":
        return rng.uniform(dist["low"], dist["high"], n)
    return rng.normal(dist["loc"], dist["scale"], n)


def simulate_mixture_anm(spec):
    rng = np.random.default_rng(spec.seed)
    x = _draw_x(spec.x_distribution, spec.n, rng)
    w = spec.weights
    z = rng.choice(w.size, size=spec.n, p=w / w.sum())
    y = np.empty(spec.n)
    for c, (expr, _) in enumerate(spec.regimes):
        idx = z == c
        y[idx] = compile_expression(expr)(x[idx])
    y += rng.normal(0.0, spec.noise_sd, spec.n)
    return DataPair(x, y, "XtoY", z, f"mixture-anm-seed{spec.seed}", {"spec": spec.to_dict()})


GRID_SPACING = 4.0


def simulate_gaussian_mixture_grid(k, n_per, seed):
    """k standard bivariate Gaussians centred at (4j, 4j)."""
    if not 1 <= k <= 8:
        raise InvalidParameter("k must lie in [1, 8]")
    if n_per < 10:
        raise InvalidParameter("n_per must be >= 10")
    rng = np.random.default_rng(seed)
    z = np.repeat(np.arange(k), n_per)
    c = GRID_SPACING * z
    x = c + rng.standard_normal(z.size)
    y = c + rng.standard_normal(z.size)
    return DataPair(x, y, None, z, f"gaussian-grid-k{k}-seed{seed}", {"k": k, "n_per": n_per, "seed": seed})


# -- file IO --------------------------------------------------------------------


def load_pair_file(path):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"no such file: {path}")
    rows = []
    ncol = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                vals = [float(t) for t in tokens]
            except ValueError:
                raise ParseError(f"{path.name}: non-numeric token on line {lineno}", line=lineno) from None
            if ncol is None:
                ncol = len(vals)
                if ncol < 2:
                    raise FormatError(f"{path.name}: need >= 2 columns, found {ncol}")
            elif len(vals) != ncol:
                raise ParseError(f"{path.name}: expected {ncol} columns on line {lineno}, got {len(vals)}",
                                 line=lineno)
            rows.append(vals[:2])
    if ncol is None:
        raise FormatError(f"{path.name}: empty file")
    if ncol > 2:
        warnings.warn(f"{path.name}: ignoring {ncol - 2} extra column(s)", stacklevel=2)
    a = np.array(rows, dtype=float)
    return DataPair(a[:, 0], a[:, 1], source_id=path.stem)


def write_pair_file(pair, path, labels_path=None):
    """Write x y columns; labels go to a sidecar file, one integer per row."""
    np.savetxt(path, np.column_stack([pair.x, pair.y]), fmt="%.17g")
    if labels_path is not None and pair.true_labels is not None:
        np.savetxt(labels_path, pair.true_labels, fmt="%d")


def load_theta_file(path):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"no such file: {path}")
    try:
        theta = np.loadtxt(path, dtype=float, ndmin=1)
    except ValueError as err:
        raise ParseError(f"{path.name}: {err}") from None
    if theta.ndim != 1:
        theta = theta[:, 0]
    if not np.all(np.isfinite(theta)):
        raise InvalidData("theta contains non-finite values")
    return theta


# -- transforms ------------------------------------------------------------------


def standardize(pair):
    mx, my = pair.x.mean(), pair.y.mean()
    sx, sy = pair.x.std(), pair.y.std()
    if sx == 0 or sy == 0:
        raise DegenerateData(f"{pair.source_id or 'pair'}: zero variance")
    meta = dict(pair.meta)
    meta["standardize"] = {"x_mean": float(mx), "x_sd": float(sx), "y_mean": float(my), "y_sd": float(sy)}
    return replace(pair, x=(pair.x - mx) / sx, y=(pair.y - my) / sy, meta=meta)


def subsample(pair, m, seed):
    if not 1 <= m <= pair.n:
        raise InvalidParameter(f"cannot draw {m} of {pair.n} rows")
    idx = np.random.default_rng(seed).choice(pair.n, size=m, replace=False)
    labels = None if pair.true_labels is None else pair.true_labels[idx]
    meta = dict(pair.meta)
    meta["subsample"] = {"m": int(m), "seed": int(seed)}
    return replace(pair, x=pair.x[idx], y=pair.y[idx], true_labels=labels, meta=meta)


def derive_seed(*keys):
    """Deterministic 32-bit seed from a root seed and job coordinates."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# -- correlation tests ------------------------------------------------------------


def _fisher_test(r, dof, alpha):
    if not 0.0 < alpha < 1.0:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha}")
    if abs(r) >= 1.0:
        return float(np.sign(r)), True
    zstat = np.arctanh(r) * np.sqrt(dof)
    p = 2.0 * stats.norm.sf(abs(zstat))
    return float(r), bool(p < alpha)


def _pearson(x, y):
    xc, yc = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(yc @ yc)
    if sx == 0 or sy == 0:
        raise DegenerateData("zero variance")
    return float(np.clip(xc @ yc / (sx * sy), -1.0, 1.0))


def marginal_correlation_test(pair, alpha=0.05):
    """Pearson r with a two-sided Fisher-z test, ignoring labels."""
    if pair.n < 4:
        raise InvalidParameter("need n >= 4")
    return _fisher_test(_pearson(pair.x, pair.y), pair.n - 3, alpha)


def within_cluster_correlation_test(pair, alpha=0.05):
    """Fisher-z test on cluster-centred data with n - k - 2 degrees of freedom."""
    if pair.true_labels is None:
        raise InvalidParameter("within-cluster test needs labels")
    labels = pair.true_labels
    uniq, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if counts.min() < 4:
        raise InvalidParameter("every cluster needs >= 4 points")
    k = uniq.size
    xc = pair.x - (np.bincount(inv, pair.x) / counts)[inv]
    yc = pair.y - (np.bincount(inv, pair.y) / counts)[inv]
    return _fisher_test(_pearson(xc, yc), pair.n - k - 2, alpha)
