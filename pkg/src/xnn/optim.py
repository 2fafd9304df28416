"""Update rules: Adam for everything but W, Cayley steps for W on St(p, k)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError
from .model import orthonormal_columns


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p, dtype=float) for p in params],
                   [np.zeros_like(p, dtype=float) for p in params])


def adam_step(st: AdamState, params, grads, eta: float):
    """One bias-corrected Adam update.

    Returns the new parameter list; ``st`` is advanced in place.
    """
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    if not st.m:
        st.m = [np.zeros_like(p, dtype=float) for p in params]
        st.v = [np.zeros_like(p, dtype=float) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient passed to adam_step")
    st.t += 1
    c1 = 1.0 - st.beta1 ** st.t
    c2 = 1.0 - st.beta2 ** st.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g
        out.append(p - eta * (st.m[i] / c1) / (np.sqrt(st.v[i] / c2) + st.eps))
    return out


def skew_from_grad(W: np.ndarray, G: np.ndarray) -> np.ndarray:
    A = G @ W.T
    return A - A.T


def cayley_step(W: np.ndarray, G: np.ndarray, tau: float) -> np.ndarray:
    """W(tau) = (I + tau/2 A)^-1 (I - tau/2 A) W with A = G W^T - W G^T."""
    A = skew_from_grad(W, G)
    half = 0.5 * tau * A
    eye = np.eye(W.shape[0])
    try:
        out = np.linalg.solve(eye + half, (eye - half) @ W)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Cayley solve failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise NumericError("Cayley step produced non-finite values")
    return out


def l1_subgradient(x, lam: float) -> np.ndarray:
    if lam < 0:
        raise ValueError("l1 strength must be >= 0")
    return lam * np.sign(np.asarray(x, dtype=float))


def reorthonormalize(W: np.ndarray) -> np.ndarray:
    """Closest-in-sign Q factor; undoes floating-point drift off St(p, k)."""
    return orthonormal_columns(W)
