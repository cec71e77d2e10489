"""Quantitative metrics: success rate, Rouge-L, FID, agreement statistics.

All functions are pure and deterministic. Tokenization for Rouge-L is
fixed (lowercase, split on non-alphanumerics) because every reported
number depends on it.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from deckgen.errors import DeckgenError


class SizeTooSmall(DeckgenError):
    pass


class DegenerateCovariance(DeckgenError):
    pass


class ZeroVariance(DeckgenError):
    pass


def success_rate(runs) -> float:
    """100 x (runs with every slide applied) / runs.

    Accepts GenerationTrace-like objects (anything with a `succeeded`
    attribute) or plain booleans.
    """
    runs = list(runs)
    if not runs:
        raise ValueError("success_rate needs at least one run")
    wins = sum(1 for r in runs if bool(getattr(r, "succeeded", r)))
    return 100.0 * wins / len(runs)


_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeScore:
    """LCS-based precision/recall/F1; either side empty scores all zeros."""
    if not candidate or not reference:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = _lcs_length(candidate, reference)
    if lcs == 0:
        return RougeScore(0.0, 0.0, 0.0)
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return RougeScore(p, r, 2 * p * r / (p + r))


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix via eigendecomposition."""
    eigvals, eigvecs = np.linalg.eigh(mat)
    if eigvals.min(initial=0.0) < -1e-8:
        raise DegenerateCovariance(
            f"matrix has negative eigenvalue {eigvals.min():.3e}"
        )
    eigvals = np.clip(eigvals, 0.0, None)
    return (eigvecs * np.sqrt(eigvals)) @ eigvecs.T


def fid(features_a, features_b) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + tr(Ca + Cb - 2 (Ca Cb)^(1/2)), with the product
    square root computed symmetrically as sqrt(sa Cb sa) for sa=sqrt(Ca).
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be 2-D with equal dimension")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise SizeTooSmall("each feature set needs at least 2 vectors")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    ca = np.cov(a, rowvar=False)
    cb = np.cov(b, rowvar=False)
    sa = _sqrtm_psd(ca)
    covmean_trace = np.trace(_sqrtm_psd(sa @ cb @ sa))
    value = float(
        np.sum((mu_a - mu_b) ** 2) + np.trace(ca) + np.trace(cb) - 2.0 * covmean_trace
    )
    if not math.isfinite(value):
        raise DegenerateCovariance("non-finite distance")
    return max(value, 0.0)


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ValueError("pearson needs two equal-length 1-D arrays, length >= 3")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("constant input")
    sxy = float(dx @ dy)
    if sxy * sxy == sxx * syy:
        # Perfectly (anti)correlated: return the exact unit value instead
        # of letting sqrt rounding shave an ulp.
        return math.copysign(1.0, sxy)
    return sxy / math.sqrt(sxx * syy)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        # Ties share the average of the ranks they span (1-based).
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ValueError("spearman needs two equal-length 1-D arrays, length >= 3")
    return pearson(_average_ranks(x), _average_ranks(y))


def fleiss_kappa(ratings) -> float:
    """Fleiss' kappa for a subjects x raters matrix of category labels."""
    matrix = [list(row) for row in ratings]
    if not matrix or len(matrix[0]) < 2:
        raise ValueError("kappa needs >= 1 subject and >= 2 raters")
    n_raters = len(matrix[0])
    if any(len(row) != n_raters for row in matrix):
        raise ValueError("all subjects need the same number of raters")

    categories = sorted({label for row in matrix for label in row})
    counts = np.zeros((len(matrix), len(categories)), dtype=np.float64)
    index = {c: k for k, c in enumerate(categories)}
    for i, row in enumerate(matrix):
        for label in row:
            counts[i, index[label]] += 1

    n = float(n_raters)
    p_subject = (np.sum(counts * counts, axis=1) - n) / (n * (n - 1))
    p_bar = float(p_subject.mean())
    if p_bar == 1.0:
        return 1.0
    p_cat = counts.sum(axis=0) / counts.sum()
    p_e = float(np.sum(p_cat * p_cat))
    return (p_bar - p_e) / (1.0 - p_e)


def sr_weighted(score: float, sr: float) -> float:
    """Score averaged over all runs with failures contributing 0."""
    return score * sr / 100.0


def fit_feature_dim(vectors, dim: int = 64) -> list[np.ndarray]:
    """Truncate or zero-pad each vector to exactly dim entries."""
    out = []
    for v in vectors:
        arr = np.asarray(v, dtype=np.float64).ravel()
        if arr.size >= dim:
            out.append(arr[:dim].copy())
        else:
            out.append(np.pad(arr, (0, dim - arr.size)))
    return out
