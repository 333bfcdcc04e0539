from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, no_grad

METRICS = ("norm", "elementwise")


def finite_diff_errors(
    f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5, metric: str = "elementwise"
) -> dict[str, float]:
    """Relative error per parameter between autodiff and central differences.

    ``f`` re-evaluates the scalar objective from the current parameter values
    and must be deterministic. With ``metric="elementwise"`` the error is the
    worst ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`` over coordinates; with
    ``"norm"`` it is ``||g_ad - g_fd|| / max(1e-12, ||g_ad|| + ||g_fd||)`` over
    the whole tensor, which is not dominated by difference noise on tiny entries.
    """
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    for p in params:
        p.grad = None
    backward(f())
    analytic = {id(p): (p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1)
                for p in params}
    errors: dict[str, float] = {}
    with no_grad():
        for p in params:
            flat = p.data.reshape(-1)
            g_ad = np.asarray(analytic[id(p)], dtype=np.float64)
            g_fd = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = f().item()
                flat[i] = orig - eps
                f_minus = f().item()
                flat[i] = orig
                g_fd[i] = (f_plus - f_minus) / (2 * eps)
            if metric == "norm":
                err = np.linalg.norm(g_ad - g_fd) / max(1e-12, np.linalg.norm(g_ad) + np.linalg.norm(g_fd))
            else:
                err = np.max(np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd)), initial=0.0)
            errors[getattr(p, "name", str(id(p)))] = float(err)
    return errors


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
                      metric: str = "elementwise") -> float:
    errors = finite_diff_errors(f, params, eps, metric)
    return max(errors.values(), default=0.0)
