"""Training objectives: the beta-weighted image/spectrogram loss and soft-DTW."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .engine.tensor import (
    DTYPE,
    DimensionError,
    Tensor,
    abs_,
    add,
    mean_all,
    record,
    scale,
    square,
    sub,
)


@dataclass(frozen=True)
class LossWeights:
    beta: float = 0.05
    lam: float = 1e-4
    gamma: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def mae(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return mean_all(abs_(sub(a, b)))


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return mean_all(square(sub(a, b)))


def composite_loss(s: Tensor, s_rev: Tensor, C: Tensor, C_cont: Tensor, beta: float) -> Tensor:
    """beta * MAE(image) + (1 - beta) * MSE(spectrogram)."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return add(scale(mae(s, s_rev), beta), scale(mse(C, C_cont), 1.0 - beta))


@numba.njit(cache=True)
def _softmin3(a, b, c, gamma):
    m = min(a, b, c)
    if m == np.inf:
        return np.inf
    s = np.exp(-(a - m) / gamma) + np.exp(-(b - m) / gamma) + np.exp(-(c - m) / gamma)
    return m - gamma * np.log(s)


@numba.njit(cache=True)
def _sdtw_forward(D, gamma):
    n, m = D.shape
    R = np.full((n + 2, m + 2), np.inf)
    R[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            R[i, j] = D[i - 1, j - 1] + _softmin3(R[i - 1, j], R[i, j - 1], R[i - 1, j - 1], gamma)
    return R


@numba.njit(cache=True)
def _sdtw_backward(D, R, gamma):
    """Expected alignment matrix E = dR[n, m] / dD."""
    n, m = D.shape
    Dp = np.zeros((n + 2, m + 2))
    Dp[1:n + 1, 1:m + 1] = D
    E = np.zeros((n + 2, m + 2))
    E[n + 1, m + 1] = 1.0
    Rb = R.copy()
    for i in range(n + 2):
        for j in range(m + 2):
            if Rb[i, j] == np.inf:
                Rb[i, j] = -np.inf
    Rb[n + 1, m + 1] = R[n, m]
    for j in range(m, 0, -1):
        for i in range(n, 0, -1):
            a = np.exp((Rb[i + 1, j] - Rb[i, j] - Dp[i + 1, j]) / gamma)
            b = np.exp((Rb[i, j + 1] - Rb[i, j] - Dp[i, j + 1]) / gamma)
            c = np.exp((Rb[i + 1, j + 1] - Rb[i, j] - Dp[i + 1, j + 1]) / gamma)
            E[i, j] = E[i + 1, j] * a + E[i, j + 1] * b + E[i + 1, j + 1] * c
    return E[1:n + 1, 1:m + 1]


def _check_sequences(a: np.ndarray, b: np.ndarray, gamma: float) -> None:
    if a.size == 0 or b.size == 0:
        raise ValueError("soft-DTW needs non-empty sequences")
    if gamma <= 0:
        raise ValueError("gamma must be positive")


def soft_dtw_value(a, b, gamma: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    _check_sequences(a, b, gamma)
    D = (a[:, None] - b[None, :]) ** 2
    return float(_sdtw_forward(D, float(gamma))[a.size, b.size])


def soft_dtw(a: Tensor, b: Tensor, gamma: float = 1.0) -> Tensor:
    """Soft-DTW discrepancy with squared-difference cost, differentiable in both inputs."""
    a64 = a.data.astype(np.float64).ravel()
    b64 = b.data.astype(np.float64).ravel()
    _check_sequences(a64, b64, gamma)
    diff = a64[:, None] - b64[None, :]
    D = diff * diff
    R = _sdtw_forward(D, float(gamma))
    value = R[a64.size, b64.size]

    def grad_fn(g):
        E = _sdtw_backward(D, R, float(gamma))
        weighted = 2.0 * E * diff * np.asarray(g).item()
        ga = weighted.sum(axis=1).reshape(a.shape)
        gb = (-weighted.sum(axis=0)).reshape(b.shape)
        return ga.astype(DTYPE), gb.astype(DTYPE)

    return record(np.asarray(value, dtype=DTYPE), (a, b), grad_fn, "soft_dtw")


def hard_dtw(a, b) -> float:
    """Classic min-cost DTW with squared-difference cost."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    n, m = a.size, b.size
    R = np.full((n + 1, m + 1), np.inf)
    R[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            R[i, j] = (a[i - 1] - b[j - 1]) ** 2 + min(R[i - 1, j], R[i, j - 1], R[i - 1, j - 1])
    return float(R[n, m])


def decimate(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    return x[::factor]


@dataclass
class LossTerms:
    total: Tensor
    image_mae: float
    audio_mse: float
    dtw: float


def total_loss(
    s: Tensor,
    s_rev: Tensor,
    C: Tensor,
    C_cont: Tensor,
    c: Tensor,
    c_cont: Tensor,
    weights: LossWeights,
    decimation: int = 32,
) -> LossTerms:
    """Composite loss plus lambda * soft-DTW between decimated waveforms."""
    image_term = mae(s, s_rev)
    audio_term = mse(C, C_cont)
    total = add(scale(image_term, weights.beta), scale(audio_term, 1.0 - weights.beta))
    dtw_value = 0.0
    if weights.lam > 0:
        dtw = soft_dtw(decimate(c, decimation), decimate(c_cont, decimation), weights.gamma)
        dtw_value = dtw.item()
        total = add(total, scale(dtw, weights.lam))
    return LossTerms(total, image_term.item(), audio_term.item(), dtw_value)
