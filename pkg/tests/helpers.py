"""Shared test oracles: central finite differences against tape gradients."""

from __future__ import annotations

import numpy as np

from coopsurv.autodiff import Tensor


def numeric_gradient(f, x: Tensor, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f() w.r.t. x.data."""
    base = x.data
    grad = np.zeros_like(base)
    flat = base.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def grads_close(analytic: np.ndarray, numeric: np.ndarray,
                rtol: float = 1e-4, atol: float = 1e-8) -> bool:
    analytic = np.asarray(analytic, dtype=np.float64)
    diff = float(np.max(np.abs(analytic - numeric))) if analytic.size else 0.0
    if diff <= atol:
        return True
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))))
    return diff <= rtol * scale


def check_gradients(build_loss, params: list[Tensor], step: float = 1e-5,
                    rtol: float = 1e-4) -> None:
    """Assert tape gradients of build_loss() match finite differences.

    build_loss must rebuild the graph from the current parameter values on
    every call and return the scalar loss Tensor.
    """
    loss = build_loss()
    for p in params:
        p.grad = None
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    def scalar():
        return build_loss().item()

    for p, got in zip(params, analytic):
        want = numeric_gradient(scalar, p, step=step)
        assert grads_close(got, want, rtol=rtol), (
            f"gradient mismatch for shape {p.shape}:\nanalytic={got}\nnumeric={want}")
