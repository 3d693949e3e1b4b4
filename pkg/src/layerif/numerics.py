"""Dense linear algebra, smoothing and rank-statistics kernels.

Everything here works on float64 numpy arrays and is a pure function of its
inputs.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np
import scipy.linalg


class NumericsError(ValueError):
    """Raised when a kernel's preconditions are violated."""


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise NumericsError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def sherman_morrison_apply(v, g, lam: float) -> np.ndarray:
    """Apply ``(lam * I + g g^T)^{-1}`` to ``v`` in closed form."""
    v = _as_vector(v, "v")
    g = _as_vector(g, "g")
    if v.shape != g.shape:
        raise NumericsError(f"dimension mismatch: v has {v.size}, g has {g.size}")
    if not lam > 0:
        raise NumericsError(f"damping must be positive, got {lam}")
    coef = float(g @ v) / (lam + float(g @ g))
    return (v - coef * g) / lam


def sherman_morrison_mean(v, G, lam: float) -> np.ndarray:
    """Average of ``sherman_morrison_apply(v, g_k, lam)`` over the rows ``g_k`` of ``G``.

    Row-batched; equal to looping over rows up to rounding.
    """
    v = _as_vector(v, "v")
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[1] != v.size:
        raise NumericsError(f"dimension mismatch: v has {v.size}, G has shape {G.shape}")
    if G.shape[0] == 0:
        raise NumericsError("need at least one rank-one term")
    if not lam > 0:
        raise NumericsError(f"damping must be positive, got {lam}")
    n = G.shape[0]
    coefs = (G @ v) / (lam + np.einsum("ij,ij->i", G, G))
    return (v - (G.T @ coefs) / n) / lam


def solve_spd(A, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A`` by Cholesky.

    A factorization failure is reported, never patched with extra damping.
    """
    A = np.asarray(A, dtype=np.float64)
    b = _as_vector(b, "b")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NumericsError(f"A must be square, got shape {A.shape}")
    if A.shape[0] != b.size:
        raise NumericsError(f"dimension mismatch: A is {A.shape}, b has {b.size}")
    scale = max(float(np.max(np.abs(A))), np.finfo(np.float64).tiny) if A.size else 1.0
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * scale):
        raise NumericsError("A is not symmetric")
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"Cholesky factorization failed: {exc}") from exc
    return scipy.linalg.cho_solve(factor, b)


def savgol_coeffs(window: int, polyorder: int) -> np.ndarray:
    """Interior smoothing weights for a centered least-squares polynomial fit."""
    _check_savgol_params(window, polyorder)
    half = window // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    vander = np.vander(offsets, polyorder + 1, increasing=True)
    # Row 0 of the pseudo-inverse evaluates the fitted polynomial at offset 0.
    return np.linalg.pinv(vander)[0]


def _check_savgol_params(window: int, polyorder: int) -> None:
    if window < 1 or window % 2 == 0:
        raise NumericsError(f"window must be a positive odd count, got {window}")
    if polyorder < 0 or polyorder >= window:
        raise NumericsError(f"polyorder must satisfy 0 <= polyorder < window, got {polyorder}")


def _fit_eval(segment: np.ndarray, polyorder: int, at: np.ndarray) -> np.ndarray:
    n = segment.size
    center = (n - 1) / 2.0
    pos = np.arange(n, dtype=np.float64) - center
    vander = np.vander(pos, polyorder + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(vander, segment, rcond=None)
    return np.vander(at - center, polyorder + 1, increasing=True) @ coef


def savitzky_golay(x, window: int = 7, polyorder: int = 3) -> np.ndarray:
    """Savitzky-Golay smoothing with polynomial edge fitting.

    Interior points get the centered least-squares estimate. The first and last
    ``window // 2`` points are read off a polynomial fitted to the first/last
    full window, so edges reproduce polynomials of degree ``<= polyorder`` too.
    """
    x = _as_vector(x, "x")
    _check_savgol_params(window, polyorder)
    if x.size < window:
        raise NumericsError(f"input length {x.size} shorter than window {window}")
    half = window // 2
    weights = savgol_coeffs(window, polyorder)
    out = np.empty_like(x)
    windows = np.lib.stride_tricks.sliding_window_view(x, window)
    out[half : x.size - half] = windows @ weights
    if half:
        out[:half] = _fit_eval(x[:window], polyorder, np.arange(half, dtype=np.float64))
        tail_at = np.arange(window - half, window, dtype=np.float64)
        out[x.size - half :] = _fit_eval(x[-window:], polyorder, tail_at)
    return out


def rank_average(x) -> np.ndarray:
    """1-based fractional ranks; tied values share the mean of their positions."""
    x = _as_vector(x, "x")
    order = np.argsort(x, kind="stable")
    sorted_x = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman's rho as the Pearson correlation of average ranks."""
    a = _as_vector(a, "a")
    b = _as_vector(b, "b")
    if a.size != b.size:
        raise NumericsError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise NumericsError("spearman needs at least two observations")
    ra = rank_average(a) - (a.size + 1) / 2.0
    rb = rank_average(b) - (b.size + 1) / 2.0
    sa = float(ra @ ra)
    sb = float(rb @ rb)
    if sa == 0.0 or sb == 0.0:
        raise NumericsError("zero rank variance: correlation undefined")
    rho = float(ra @ rb) / np.sqrt(sa * sb)
    return float(np.clip(rho, -1.0, 1.0))


def softmax(x) -> np.ndarray:
    x = _as_vector(x, "x")
    z = np.exp(x - np.max(x))
    return z / z.sum()


def softmax_topk(logits, k: int) -> np.ndarray:
    """Softmax restricted to the ``k`` largest logits and renormalized.

    Returns a dense vector with exactly ``k`` nonzero entries. Ties go to the
    lower index.
    """
    logits = _as_vector(logits, "logits")
    if not 1 <= k <= logits.size:
        raise NumericsError(f"k must be in [1, {logits.size}], got {k}")
    chosen = np.argsort(-logits, kind="stable")[:k]
    # Renormalizing the selected softmax entries equals a softmax over the selection.
    sel = logits[chosen]
    w = np.exp(sel - sel.max())
    out = np.zeros_like(logits)
    out[chosen] = w / w.sum()
    return out


def compensated_sum(xs: Iterable[float]) -> float:
    """Fixed-order compensated (Kahan-Babuska/Neumaier) summation."""
    total = 0.0
    comp = 0.0
    for x in xs:
        x = float(x)
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
    return total + comp


def compensated_row_sum(rows: np.ndarray) -> np.ndarray:
    """Column-wise compensated sum over the rows of a 2-D array, in row order."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise NumericsError(f"expected a 2-D array, got shape {rows.shape}")
    total = np.zeros(rows.shape[1])
    comp = np.zeros(rows.shape[1])
    for x in rows:
        t = total + x
        big = np.abs(total) >= np.abs(x)
        comp += np.where(big, (total - t) + x, (x - t) + total)
        total = t
    return total + comp


def require_finite(arr, what: str) -> None:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{what} contains non-finite values")


__all__: Sequence[str] = [
    "NumericsError",
    "compensated_row_sum",
    "compensated_sum",
    "rank_average",
    "require_finite",
    "savgol_coeffs",
    "savitzky_golay",
    "sherman_morrison_apply",
    "sherman_morrison_mean",
    "softmax",
    "softmax_topk",
    "solve_spd",
    "spearman",
]
