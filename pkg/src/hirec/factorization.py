"""Item-similarity inputs and their low-rank factorization.

Three similarity inputs feed the recommenders:

* ``gram_p2p``   -- co-positive item gram matrix (positive.T @ positive),
* ``cross_n2p``  -- negative-to-positive cross matrix (negative.T @ positive),
* ``stacked_rt`` -- the two stacked vertically, factorized once so a single
  model captures both channels and their interaction.

Factorization is alternating least squares: each half-sweep solves a ridge
regression exactly for one factor block, so the regularized objective can
never increase. Zeros in the input are treated as unobserved by default;
the low-rank reconstruction is what fills them in with estimated similarity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .feedback import FeedbackMatrices
from .util import substream

_MAGIC = b"HIFM"
_HEADER = struct.Struct("<4sHIIH")  # magic, version, n1, n2, k


@dataclass
class SimilarityInput:
    matrix: sparse.csr_matrix
    kind: str  # p2p | n2p | stacked

    def __post_init__(self):
        n1, n2 = self.matrix.shape
        if self.kind == "p2p" and n1 != n2:
            raise ValueError("p2p similarity input must be square")
        if self.kind == "stacked" and n1 != 2 * n2:
            raise ValueError("stacked input must have 2*n rows")


@dataclass
class FactorModel:
    """Rank-k factor pair; ``left @ right`` smooths the factorized input."""

    left: np.ndarray   # n1 x k
    right: np.ndarray  # k x n2
    k: int
    lam: float
    kind: str
    seed: int
    training_error: list = field(default_factory=list)  # per-iteration fitted RMSE
    objective: list = field(default_factory=list)       # per half-sweep, regularized

    @property
    def shape(self):
        return (self.left.shape[0], self.right.shape[1])


def gram_p2p(fm: FeedbackMatrices) -> SimilarityInput:
    """Item-item co-positive counts: items liked together by the same users."""
    m = (fm.positive.T @ fm.positive).tocsr()
    m.sort_indices()
    return SimilarityInput(m, "p2p")


def cross_n2p(fm: FeedbackMatrices) -> SimilarityInput:
    """Items disliked by users crossed with items the same users liked."""
    m = (fm.negative.T @ fm.positive).tocsr()
    m.sort_indices()
    return SimilarityInput(m, "n2p")


def stacked_rt(fm: FeedbackMatrices) -> SimilarityInput:
    """Vertical concatenation of the p2p and n2p inputs (2n x n)."""
    m = sparse.vstack([gram_p2p(fm).matrix, cross_n2p(fm).matrix]).tocsr()
    return SimilarityInput(m, "stacked")


def factorize(sim: SimilarityInput, k, lam=0.05, iters=15, observed_only=True,
              seed=0, stop_tol=1e-4) -> FactorModel:
    """Alternating ridge solves for a rank-k approximation of ``sim.matrix``.

    With ``observed_only`` (the default) only stored nonzeros contribute to
    the loss; otherwise every entry, zeros included, is a target. Stops
    early once the relative objective improvement over a full iteration
    drops below ``stop_tol``. Deterministic for a fixed seed.
    """
    if k < 1 or iters < 1:
        raise ValueError("k and iters must be >= 1")
    M = sim.matrix.tocsr()
    if not np.isfinite(M.data).all():
        raise ValueError("similarity input contains non-finite values")
    left, right, errors, objectives = _als(
        M, k, lam=lam, iters=iters, observed_only=observed_only,
        seed=seed, stop_tol=stop_tol,
    )
    return FactorModel(left, right, k, lam, sim.kind, seed,
                       training_error=errors, objective=objectives)


def reconstruct(model: FactorModel, row=None) -> np.ndarray:
    """One smoothed row (or, with ``row=None``, the full dense product)."""
    if row is None:
        return model.left @ model.right
    return model.left[row] @ model.right


def _als(M: sparse.csr_matrix, k, lam, iters, observed_only, seed, stop_tol):
    n1, n2 = M.shape
    rng = substream(seed, "als_init")
    # O(1)-magnitude initial reconstructions
    left = rng.uniform(0.0, 1.0 / np.sqrt(k), size=(n1, k))
    right = rng.uniform(0.0, 1.0 / np.sqrt(k), size=(k, n2))

    Mt = M.T.tocsr()
    errors, objectives = [], []
    prev = np.inf
    for _ in range(iters):
        if observed_only:
            _solve_rows(M, left, right, lam)
            objectives.append(_objective_observed(M, left, right, lam)[0])
            right = _solve_rows_out(Mt, right.T.copy(), left.T, lam).T
            obj, res_sq = _objective_observed(M, left, right, lam)
            rmse = np.sqrt(res_sq / M.nnz) if M.nnz else 0.0
        else:
            left = _solve_full(M, right, lam)
            objectives.append(_objective_full(M, left, right, lam)[0])
            right = _solve_full(Mt, left.T, lam).T
            obj, total_sq = _objective_full(M, left, right, lam)
            rmse = np.sqrt(max(total_sq, 0.0) / (M.shape[0] * M.shape[1]))
        objectives.append(obj)
        errors.append(float(rmse))
        if prev < np.inf and prev > 0 and (prev - obj) / prev < stop_tol:
            break
        prev = obj
    return left, right, errors, objectives


def _solve_rows(M, left, right, lam):
    """In-place ridge solve of every row of ``left`` against observed columns."""
    k = left.shape[1]
    eye = lam * np.eye(k)
    indptr, indices, data = M.indptr, M.indices, M.data
    for i in range(M.shape[0]):
        lo, hi = indptr[i], indptr[i + 1]
        if lo == hi:
            left[i] = 0.0
            continue
        cols = indices[lo:hi]
        r = right[:, cols]
        a = r @ r.T + eye
        b = r @ data[lo:hi]
        left[i] = np.linalg.solve(a, b)
    return left


def _solve_rows_out(Mt, out, other_t, lam):
    # same solve viewed from the transposed side; out is (n2 x k)
    k = out.shape[1]
    eye = lam * np.eye(k)
    indptr, indices, data = Mt.indptr, Mt.indices, Mt.data
    other = other_t.T  # (n1 x k)
    for j in range(Mt.shape[0]):
        lo, hi = indptr[j], indptr[j + 1]
        if lo == hi:
            out[j] = 0.0
            continue
        rows = indices[lo:hi]
        l = other[rows]
        a = l.T @ l + eye
        b = l.T @ data[lo:hi]
        out[j] = np.linalg.solve(a, b)
    return out


def _solve_full(M, right, lam):
    """Exact update when every entry (zeros included) is a target."""
    k = right.shape[0]
    gram = right @ right.T + lam * np.eye(k)
    rhs = M @ right.T  # sparse @ dense
    return np.linalg.solve(gram, np.asarray(rhs).T).T


def _objective_observed(M, left, right, lam):
    res_sq, _ = _observed_stats(M, left, right)
    reg = lam * (np.sum(left * left) + np.sum(right * right))
    return res_sq + reg, res_sq


def _objective_full(M, left, right, lam):
    # ||M - LR||_F^2 expanded so the dense product never materializes
    lt_l = left.T @ left
    r_rt = right @ right.T
    _, cross = _observed_stats(M, left, right)
    total = float((M.data ** 2).sum()) - 2.0 * cross + float(np.sum(lt_l * r_rt))
    reg = lam * (np.sum(left * left) + np.sum(right * right))
    return total + reg, total


def _observed_stats(M, left, right, nnz_budget=2_000_000):
    """Residual sum of squares and <data, prediction> over stored entries,
    evaluated in row blocks so memory stays bounded at any scale."""
    indptr, indices, data = M.indptr, M.indices, M.data
    res_sq = 0.0
    dot = 0.0
    r0 = 0
    n1 = M.shape[0]
    while r0 < n1:
        r1 = int(np.searchsorted(indptr, indptr[r0] + nnz_budget, side="right"))
        r1 = max(min(r1, n1), r0 + 1)
        lo, hi = indptr[r0], indptr[r1]
        if lo != hi:
            rows = np.repeat(np.arange(r0, r1), np.diff(indptr[r0:r1 + 1]))
            pred = np.einsum("ij,ji->i", left[rows], right[:, indices[lo:hi]])
            d = data[lo:hi]
            res_sq += float(np.sum((d - pred) ** 2))
            dot += float(np.dot(d, pred))
        r0 = r1
    return res_sq, dot


def save_factors(model: FactorModel, path) -> None:
    """Flat binary layout: 16-byte header, then left and right factors as
    row-major float64. A plain-text sidecar carries the training metadata."""
    path = Path(path)
    n1, n2 = model.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, n1, n2, model.k))
        fh.write(np.ascontiguousarray(model.left, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(model.right, dtype=np.float64).tobytes())
    with open(path.with_suffix(path.suffix + ".meta"), "w") as fh:
        fh.write(f"kind={model.kind}\n")
        fh.write(f"lambda={model.lam!r}\n")
        fh.write(f"iters={len(model.training_error)}\n")
        fh.write(f"seed={model.seed}\n")


def load_factors(path) -> FactorModel:
    path = Path(path)
    with open(path, "rb") as fh:
        magic, version, n1, n2, k = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a factor model file")
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        left = np.frombuffer(fh.read(8 * n1 * k), dtype=np.float64).reshape(n1, k).copy()
        right = np.frombuffer(fh.read(8 * k * n2), dtype=np.float64).reshape(k, n2).copy()
    meta = {}
    meta_path = path.with_suffix(path.suffix + ".meta")
    if meta_path.exists():
        for line in meta_path.read_text().splitlines():
            key, _, val = line.partition("=")
            meta[key] = val
    return FactorModel(left, right, k,
                       lam=float(meta.get("lambda", "nan")),
                       kind=meta.get("kind", "unknown"),
                       seed=int(meta.get("seed", "0")))
