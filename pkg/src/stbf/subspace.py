"""Subspace decomposition of spectrograms and fixed-length utterance features.

The SVD is a one-sided Jacobi orthogonalization in double precision: plane
rotations are applied to column pairs of the (possibly transposed) matrix
until all pairs are orthogonal, giving left singular vectors and singular
values as normalized columns and their norms, while the accumulated
rotations give the right singular vectors. The square factor of the short
side comes out complete; the tall side is completed to a full orthogonal
basis with a QR complement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .audio_io import UtteranceMeta
from .errors import DecompositionError, NumericInputError, ParameterError
from .spectrogram import MelSpectrogram

# Singular values at or below max(sigma) * _RELIABLE_RTOL have directions
# dominated by rounding noise; their basis vectors are taken from the
# orthogonal completion instead of normalizing a near-zero column.
_RELIABLE_RTOL = 1e-13
_ROTATION_TOL = 1e-14
_SWEEP_CAP_FACTOR = 100
# Column pairs with squared-norm ratio at or below this are numerically
# dependent. Rotating them cannot converge: the residual of a parallel
# pair stays parallel, so its cosine never drops below _ROTATION_TOL no
# matter how small it gets. Their directions are unreliable by the rtol
# above, so skipping loses nothing.
_DEP_NORM_RATIO2 = 1e-28


@dataclass
class SubspaceDecomposition:
    """Full SVD of a C x T matrix: U (C x C), sigma (min(C,T), descending),
    Vt (T x T). Columns of U are the spectral basis, rows of Vt the temporal
    basis."""

    U: np.ndarray
    sigma: np.ndarray
    Vt: np.ndarray


@dataclass
class SubspaceConfig:
    d_s: int = 2
    d_t: int = 5
    window: int = 25
    stride: int = 1


@dataclass
class UtteranceFeature:
    """Fixed-length utterance vector: flattened top-d_s spectral basis
    columns followed by windowed mean/std blocks of the top-d_t temporal
    bases. ``padded`` flags utterances shorter than d_t frames, whose
    missing temporal blocks are zero."""

    spectral_part: np.ndarray
    temporal_part: np.ndarray
    d_s: int
    d_t: int
    window: int
    meta: UtteranceMeta | None = None
    padded: bool = False

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.spectral_part, self.temporal_part])


@njit(cache=True, nogil=True)
def _jacobi_orthogonalize(a, v, max_sweeps, tol, dep_ratio2):
    # Cyclic one-sided Jacobi: rotate column pairs (p, q) of a (m x n,
    # m >= n) until all pairwise inner products are negligible relative to
    # the column norms. v (n x n, starts as identity) accumulates the
    # rotations. Returns sweeps used, or -1 if the cap is hit.
    m, n = a.shape
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(m):
                    ap = a[i, p]
                    aq = a[i, q]
                    alpha += ap * ap
                    beta += aq * aq
                    gamma += ap * aq
                if gamma == 0.0:
                    continue
                if min(alpha, beta) <= dep_ratio2 * max(alpha, beta):
                    continue
                if abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    ap = a[i, p]
                    aq = a[i, q]
                    a[i, p] = c * ap - s * aq
                    a[i, q] = s * ap + c * aq
                for i in range(n):
                    vp = v[i, p]
                    vq = v[i, q]
                    v[i, p] = c * vp - s * vq
                    v[i, q] = s * vp + c * vq
        if not rotated:
            return sweep + 1
    return -1


def _complete_orthogonal(w: np.ndarray, m: int) -> np.ndarray:
    # Extend the orthonormal columns of w (m x r) to an m x m orthogonal
    # matrix whose first r columns are exactly w. Canonical basis vectors
    # are orthogonalized against the accepted columns (two Gram-Schmidt
    # passes) and kept unless they lie in the current span; the trace
    # identity sum_k |(I-P)e_k|^2 = m - rank(P) guarantees enough survive
    # any threshold below 1/sqrt(m).
    r = w.shape[1]
    out = np.empty((m, m))
    out[:, :r] = w
    count = r
    for k in range(m):
        if count == m:
            break
        cand = np.zeros(m)
        cand[k] = 1.0
        for _ in range(2):
            cand -= out[:, :count] @ (out[:, :count].T @ cand)
        norm = math.sqrt(cand @ cand)
        if norm > 1e-6:
            out[:, count] = cand / norm
            count += 1
    if count < m:
        raise DecompositionError("could not complete an orthogonal basis")
    return out


def _as_matrix(s: MelSpectrogram | np.ndarray) -> np.ndarray:
    values = s.values if isinstance(s, MelSpectrogram) else np.asarray(s)
    if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
        raise ParameterError(f"expected a non-empty 2-D matrix, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NumericInputError("matrix contains non-finite entries")
    return np.array(values, dtype=np.float64)


def svd(s: MelSpectrogram | np.ndarray) -> SubspaceDecomposition:
    """Full SVD with a deterministic sign convention.

    Each left singular vector's largest-magnitude entry is made
    non-negative (its paired right vector flips with it); completion
    vectors beyond min(C, T) follow the same rule individually. Repeated
    calls on the same matrix are bit-identical.
    """
    a = _as_matrix(s)
    n_rows, n_cols = a.shape
    thin_is_left = n_rows >= n_cols
    work = a.copy() if thin_is_left else a.T.copy()
    m, n = work.shape
    v = np.eye(n)
    sweeps = _jacobi_orthogonalize(
        work, v, _SWEEP_CAP_FACTOR * n, _ROTATION_TOL, _DEP_NORM_RATIO2
    )
    if sweeps < 0:
        raise DecompositionError(
            f"Jacobi sweeps exceeded cap {_SWEEP_CAP_FACTOR * n} "
            f"for shape {a.shape}"
        )
    sigma = np.sqrt(np.sum(work * work, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]
    s_max = sigma[0] if n else 0.0
    n_reliable = int(np.sum(sigma > s_max * _RELIABLE_RTOL)) if s_max > 0 else 0
    thin = _complete_orthogonal(work[:, :n_reliable] / sigma[:n_reliable], m)
    if thin_is_left:
        u_full, vt_full = thin, v.T
    else:
        u_full, vt_full = v, thin.T

    n_pairs = min(n_rows, n_cols)
    for j in range(n_pairs):
        k = int(np.argmax(np.abs(u_full[:, j])))
        if u_full[k, j] < 0.0:
            u_full[:, j] = -u_full[:, j]
            vt_full[j, :] = -vt_full[j, :]
    for j in range(n_pairs, n_rows):
        k = int(np.argmax(np.abs(u_full[:, j])))
        if u_full[k, j] < 0.0:
            u_full[:, j] = -u_full[:, j]
    for j in range(n_pairs, n_cols):
        k = int(np.argmax(np.abs(vt_full[j, :])))
        if vt_full[j, k] < 0.0:
            vt_full[j, :] = -vt_full[j, :]
    return SubspaceDecomposition(U=u_full, sigma=sigma, Vt=vt_full)


def truncate(
    dec: SubspaceDecomposition, d_s: int, d_t: int
) -> tuple[np.ndarray, np.ndarray]:
    """Top d_s spectral basis columns and top d_t temporal basis rows."""
    n_rows = dec.U.shape[0]
    n_cols = dec.Vt.shape[0]
    if not 1 <= d_s <= n_rows:
        raise ParameterError(f"d_s must be in [1, {n_rows}], got {d_s}")
    if not 1 <= d_t <= n_cols:
        raise ParameterError(f"d_t must be in [1, {n_cols}], got {d_t}")
    return dec.U[:, :d_s].copy(), dec.Vt[:d_t, :].copy()


def temporal_window_stats(
    v: np.ndarray, window: int = 25, stride: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise mean and population std over sliding windows of ``v``.

    Windows are v[k*stride : k*stride + window]; a vector shorter than the
    window is cyclically tiled to fill a single window, and a single window
    yields a zero std.
    """
    if window < 1:
        raise ParameterError(f"window must be >= 1, got {window}")
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ParameterError("expected a non-empty 1-D vector")
    if x.size < window:
        windows = np.resize(x, window)[None, :]
    else:
        windows = np.lib.stride_tricks.sliding_window_view(x, window)[::stride]
    return windows.mean(axis=0), windows.std(axis=0)


def utterance_feature(
    s: MelSpectrogram | np.ndarray,
    cfg: SubspaceConfig,
    meta: UtteranceMeta | None = None,
) -> UtteranceFeature:
    """Fixed-length feature for one utterance: d_s*C spectral values plus
    2*window*d_t windowed temporal statistics, invariant to T."""
    dec = svd(s)
    n_rows = dec.U.shape[0]
    n_cols = dec.Vt.shape[0]
    if not 1 <= cfg.d_s <= n_rows:
        raise ParameterError(f"d_s must be in [1, {n_rows}], got {cfg.d_s}")
    if cfg.d_t < 1:
        raise ParameterError(f"d_t must be >= 1, got {cfg.d_t}")
    spectral, temporal_rows = truncate(dec, cfg.d_s, min(cfg.d_t, n_cols))
    spectral_part = spectral.flatten(order="F")
    blocks = []
    padded = False
    for i in range(cfg.d_t):
        if i < temporal_rows.shape[0]:
            mean, std = temporal_window_stats(
                temporal_rows[i], cfg.window, cfg.stride
            )
            blocks.append(mean)
            blocks.append(std)
        else:
            blocks.append(np.zeros(cfg.window))
            blocks.append(np.zeros(cfg.window))
            padded = True
    return UtteranceFeature(
        spectral_part=spectral_part,
        temporal_part=np.concatenate(blocks),
        d_s=cfg.d_s,
        d_t=cfg.d_t,
        window=cfg.window,
        meta=meta,
        padded=padded,
    )
