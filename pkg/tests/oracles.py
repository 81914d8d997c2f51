"""Independent reference implementations used to derive expected test values.

Everything here is deliberately written by the most direct route available
(brute-force loops, textbook iterations, closed forms) rather than sharing
code with the package under test. numpy.linalg and scikit-learn are allowed
in this file only; the package itself never calls them.
"""
from __future__ import annotations

import numpy as np


# -- linear algebra ------------------------------------------------------------


def jacobi_eigensolver(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100):
    """Classical two-sided cyclic Jacobi eigendecomposition of a symmetric
    matrix. Returns (eigenvalues descending, eigenvectors as columns).

    Independent of the package's one-sided SVD: it rotates the matrix itself
    rather than column pairs of the input, so agreement between the two is a
    genuine cross-check.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be symmetric")
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * max(1.0, np.sqrt(np.sum(np.diag(a) ** 2))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    order = np.argsort(np.diag(a))[::-1]
    return np.diag(a)[order], v[:, order]


def singular_values_via_gram(s: np.ndarray) -> np.ndarray:
    """Descending singular values of s from the Jacobi eigendecomposition of
    the smaller Gram matrix (s·sT or sT·s)."""
    s = np.asarray(s, dtype=np.float64)
    gram = s @ s.T if s.shape[0] <= s.shape[1] else s.T @ s
    eigs, _ = jacobi_eigensolver(gram)
    return np.sqrt(np.clip(eigs, 0.0, None))


def principal_angles(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Principal angles (radians, ascending) between the column spans of a
    and b, via orthonormalization and the SVD of the cross-Gram matrix."""
    qa, _ = np.linalg.qr(np.asarray(a, dtype=np.float64))
    qb, _ = np.linalg.qr(np.asarray(b, dtype=np.float64))
    sv = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.arccos(np.clip(np.sort(sv)[::-1], -1.0, 1.0))


def truncation_error(s: np.ndarray, d: int) -> float:
    """Frobenius norm of s minus its best rank-d approximation, computed
    directly from a reference SVD (not from the discarded-sigma identity,
    which is the claim under test)."""
    u, sig, vt = np.linalg.svd(np.asarray(s, dtype=np.float64), full_matrices=False)
    approx = (u[:, :d] * sig[:d]) @ vt[:d]
    return float(np.linalg.norm(s - approx))


# -- windowing -----------------------------------------------------------------


def window_stats_loop(v: np.ndarray, w: int, stride: int):
    """Brute-force sliding-window mean/std: windows v[k*stride : k*stride+w];
    a vector shorter than w is cyclically tiled to one window. Population
    std, zero vector when only one window exists."""
    v = np.asarray(v, dtype=np.float64)
    t = len(v)
    if t < w:
        tiled = np.array([v[i % t] for i in range(w)])
        return tiled.copy(), np.zeros(w)
    k = (t - w) // stride + 1
    rows = np.array([v[j * stride : j * stride + w] for j in range(k)])
    mean = np.array([rows[:, i].mean() for i in range(w)])
    std = np.array([rows[:, i].std() for i in range(w)])
    return mean, std


# -- signals -------------------------------------------------------------------


def dft_peak_hz(samples: np.ndarray, sample_rate: float) -> float:
    """Frequency (Hz) of the largest-magnitude positive-frequency DFT bin."""
    samples = np.asarray(samples, dtype=np.float64)
    spectrum = np.abs(np.fft.rfft(samples))
    spectrum[0] = 0.0  # ignore DC
    return float(np.fft.rfftfreq(len(samples), d=1.0 / sample_rate)[np.argmax(spectrum)])


def spectral_centroid_hz(samples: np.ndarray, sample_rate: float) -> float:
    """Amplitude-weighted mean frequency of the magnitude spectrum."""
    samples = np.asarray(samples, dtype=np.float64)
    mag = np.abs(np.fft.rfft(samples))
    freqs = np.fft.rfftfreq(len(samples), d=1.0 / sample_rate)
    total = mag.sum()
    if total == 0.0:
        return 0.0
    return float((freqs * mag).sum() / total)


def frame_rms_db(samples: np.ndarray, frame_len: int) -> np.ndarray:
    """Per-frame RMS energy in dB over non-overlapping frames, floored to
    avoid log(0)."""
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples) // frame_len
    out = []
    for i in range(n):
        frame = samples[i * frame_len : (i + 1) * frame_len]
        rms = np.sqrt(np.mean(frame**2))
        out.append(20.0 * np.log10(max(rms, 1e-12)))
    return np.array(out)


def delta_regression(x: np.ndarray, n: int = 2) -> np.ndarray:
    """Reference delta features: regression over a +/-n frame window with
    edge replication, applied along the time axis of a T x C matrix."""
    x = np.asarray(x, dtype=np.float64)
    t = x.shape[0]
    denom = 2.0 * sum(k * k for k in range(1, n + 1))
    out = np.zeros_like(x)
    for i in range(t):
        acc = np.zeros(x.shape[1])
        for k in range(1, n + 1):
            fwd = x[min(i + k, t - 1)]
            bwd = x[max(i - k, 0)]
            acc += k * (fwd - bwd)
        out[i] = acc / denom
    return out


# -- learning ------------------------------------------------------------------


def softmax_ce_grad(logits: np.ndarray, labels: np.ndarray):
    """Closed-form loss and logit gradient for mean cross-entropy over a
    softmax: dL/dz = (p - onehot) / B."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    b = z.shape[0]
    loss = -np.mean(np.log(p[np.arange(b), labels]))
    grad = p.copy()
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def quadratic_optimum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimizer of 0.5 xT A x - bT x for symmetric positive-definite A."""
    return np.linalg.solve(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def nearest_centroid_accuracy(x: np.ndarray, labels: np.ndarray) -> float:
    """Leave-one-out nearest-class-centroid accuracy; a floor any trainable
    classifier should clear on separable data."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    hits = 0
    for i in range(len(x)):
        best, best_d = None, np.inf
        for c in classes:
            rows = (labels == c) & (np.arange(len(x)) != i)
            if not rows.any():
                continue
            d = np.linalg.norm(x[rows].mean(axis=0) - x[i])
            if d < best_d:
                best, best_d = c, d
        hits += best == labels[i]
    return hits / len(x)


def linear_probe_r2(x: np.ndarray, y: np.ndarray) -> float:
    """R-squared of ordinary least squares (with intercept) predicting y
    from x; measures linearly decodable information."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    design = np.hstack([x, np.ones((len(x), 1))])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0


def exact_binomial_two_sided(k: int, n: int) -> float:
    """Two-sided exact binomial p-value at p=1/2: doubled lower tail of
    min(k, n-k), capped at 1. Reference for the matched-pairs test."""
    from fractions import Fraction
    from math import comb

    if n == 0:
        return 1.0
    lo = min(k, n - k)
    tail = Fraction(sum(comb(n, i) for i in range(lo + 1)), 2**n)
    return float(min(Fraction(1), 2 * tail))


def linear_probe_accuracy(x: np.ndarray, labels: np.ndarray) -> float:
    """Leave-one-out accuracy of a least-squares one-hot linear probe
    (with intercept); measures linearly decodable class information."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    onehot = np.array([[lab == c for c in classes] for lab in labels], float)
    design = np.hstack([x, np.ones((len(x), 1))])
    hits = 0
    for i in range(len(x)):
        keep = np.arange(len(x)) != i
        coef, *_ = np.linalg.lstsq(design[keep], onehot[keep], rcond=None)
        pred = int(np.argmax(design[i] @ coef))
        hits += classes[pred] == labels[i]
    return hits / len(x)


def silhouette_oracle(x: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient over all points: (b - a) / max(a, b)
    with a = mean intra-class distance (excluding self) and b = smallest
    mean distance to another class. Standard definition, Euclidean."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    dist = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    classes = sorted(set(labels.tolist()))
    scores = []
    for i in range(len(x)):
        same = (labels == labels[i]) & (np.arange(len(x)) != i)
        if not same.any():
            scores.append(0.0)
            continue
        a = dist[i, same].mean()
        b = min(
            dist[i, labels == c].mean() for c in classes if c != labels[i]
        )
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))
