"""Scaled conjugate gradient (Moller, 1993) run as a maximizer."""

import numpy as np

from .errors import NumericalFailure

SIGMA0 = 1e-4
BETA_MIN = 1e-15
BETA_MAX = 1e100


def _checked(value, what, it):
    if not np.all(np.isfinite(value)):
        raise NumericalFailure(f"non-finite {what} at iteration {it}", iteration=it)
    return value


def scg_maximize(f, g, init, max_iters=500, tol=1e-6, max_step=None):
    """Maximize ``f`` with gradient ``g`` starting from ``init``.

    Stops once an accepted step changes f by less than ``tol``, the gradient
    norm drops below ``tol``, or after ``max_iters`` iterations. Only steps
    that do not decrease f are accepted, so the returned trace is monotone.

    Returns ``(argmax, trace)`` where trace[0] is f(init).
    """
    # minimize -f internally
    x = np.array(init, dtype=float)
    nparams = x.size
    fold = -float(_checked(f(x), "objective", 0))
    gradnew = -np.asarray(_checked(g(x), "gradient", 0), dtype=float)
    gradold = gradnew
    trace = [-fold]
    if np.linalg.norm(gradnew) < tol:
        return x, trace

    d = -gradnew
    success = True
    nsuccess = 0
    beta = 1.0
    mu = kappa = theta = 0.0

    for it in range(1, max_iters + 1):
        if success:
            mu = d @ gradnew
            if mu >= 0:
                d = -gradnew
                mu = d @ gradnew
            kappa = d @ d
            if kappa < np.finfo(float).eps:
                break
            sigma = SIGMA0 / np.sqrt(kappa)
            gplus = -np.asarray(_checked(g(x + sigma * d), "gradient", it), dtype=float)
            theta = d @ (gplus - gradnew) / sigma

        # scale the curvature estimate to keep the local model positive definite
        delta = theta + beta * kappa
        if delta <= 0:
            delta = beta * kappa
            beta = beta - theta / kappa
        alpha = -mu / delta
        if max_step is not None:
            alpha = min(alpha, max_step / np.max(np.abs(d)))

        xnew = x + alpha * d
        fnew = -float(_checked(f(xnew), "objective", it))
        comparison = 2.0 * (fnew - fold) / (alpha * mu)
        if comparison >= 0 and fnew <= fold:
            success = True
            nsuccess += 1
            x = xnew
            df = fold - fnew
            fold = fnew
            trace.append(-fnew)
            gradold = gradnew
            gradnew = -np.asarray(_checked(g(x), "gradient", it), dtype=float)
            if abs(df) < tol or np.linalg.norm(gradnew) < tol:
                break
        else:
            success = False
            trace.append(-fold)

        if comparison < 0.25:
            beta = min(4.0 * beta, BETA_MAX)
        if comparison > 0.75:
            beta = max(0.5 * beta, BETA_MIN)

        if nsuccess == nparams:
            d = -gradnew
            nsuccess = 0
        elif success:
            gamma = (gradold - gradnew) @ gradnew / mu
            d = gamma * d - gradnew

    return x, trace
