"""Hot numeric kernels: exact cosine k-NN and neighbor-weighted feature sums.

Each kernel has a numba ``@njit`` implementation and a pure-numpy fallback;
``backend.use_numba()`` decides which one is bound at import time.  Both paths
are exercised by the test suite and compared by ``benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import numpy as np

from .backend import use_numba

NEG_INF = -np.inf


def normalize_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """L2-normalize rows; zero rows stay zero.  Returns (normalized, zero_mask)."""
    norms = np.linalg.norm(mat, axis=1)
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    return mat / safe[:, None], zero


def _knn_topk_numpy(embeddings: np.ndarray, k: int) -> np.ndarray:
    """Top-k cosine neighbors per row, ties broken toward the lower index.

    Zero rows neither select nor get selected.  Returns an (n, k) int array
    padded with -1 where fewer than k valid neighbors exist.
    """
    n = embeddings.shape[0]
    normed, zero = normalize_rows(embeddings.astype(np.float64))
    sims = normed @ normed.T
    sims[:, zero] = NEG_INF
    np.fill_diagonal(sims, NEG_INF)
    out = np.full((n, k), -1, dtype=np.int64)
    ids = np.arange(n)
    for i in range(n):
        if zero[i]:
            continue
        order = np.lexsort((ids, -sims[i]))
        row = order[np.isfinite(sims[i, order])][:k]
        out[i, : row.size] = row
    return out


def _knn_topk_numba_impl():
    from numba import njit

    @njit(cache=True)
    def knn(normed, zero, k):  # pragma: no cover - jitted
        n, d = normed.shape
        out = np.full((n, k), -1, dtype=np.int64)
        best_sim = np.empty(k, dtype=np.float64)
        best_idx = np.empty(k, dtype=np.int64)
        for i in range(n):
            if zero[i]:
                continue
            cnt = 0
            for j in range(n):
                if j == i or zero[j]:
                    continue
                s = 0.0
                for t in range(d):
                    s += normed[i, t] * normed[j, t]
                # insertion sort; tie favors lower j (later equal sims do not displace)
                pos = cnt
                while pos > 0 and (best_sim[pos - 1] < s):
                    pos -= 1
                if pos < k:
                    stop = cnt if cnt < k else k - 1
                    for q in range(stop, pos, -1):
                        best_sim[q] = best_sim[q - 1]
                        best_idx[q] = best_idx[q - 1]
                    best_sim[pos] = s
                    best_idx[pos] = j
                    if cnt < k:
                        cnt += 1
            for q in range(cnt):
                out[i, q] = best_idx[q]
        return out

    return knn


def _knn_topk_numba(embeddings: np.ndarray, k: int) -> np.ndarray:
    normed, zero = normalize_rows(embeddings.astype(np.float64))
    return _KNN_JIT(np.ascontiguousarray(normed), zero, k)


def _seg_weighted_sum_numpy(weights, feats, idx):
    """out[b] = sum_s weights[b, s] * feats[idx[b, s]]; idx < 0 rows are skipped."""
    gathered = feats[np.maximum(idx, 0)]
    w = np.where(idx >= 0, weights, 0.0)
    return np.einsum("bs,bsm->bm", w, gathered)


def _seg_weighted_sum_bwd_numpy(grad_out, weights, feats, idx, need_feat_grad):
    gathered = feats[np.maximum(idx, 0)]
    valid = idx >= 0
    d_weights = np.einsum("bm,bsm->bs", grad_out, gathered)
    d_weights[~valid] = 0.0
    d_feats = None
    if need_feat_grad:
        d_feats = np.zeros_like(feats)
        w = np.where(valid, weights, 0.0)
        contrib = w[:, :, None] * grad_out[:, None, :]
        np.add.at(d_feats, np.maximum(idx, 0).ravel(), contrib.reshape(-1, feats.shape[1]))
        # padded slots scattered weight 0 into row 0; nothing to undo
    return d_weights, d_feats


def _seg_weighted_sum_numba_impl():
    from numba import njit

    @njit(cache=True)
    def fwd(weights, feats, idx):  # pragma: no cover - jitted
        b, s = idx.shape
        m = feats.shape[1]
        out = np.zeros((b, m), dtype=np.float64)
        for bi in range(b):
            for si in range(s):
                j = idx[bi, si]
                if j < 0:
                    continue
                w = weights[bi, si]
                for t in range(m):
                    out[bi, t] += w * feats[j, t]
        return out

    @njit(cache=True)
    def bwd(grad_out, weights, feats, idx, need_feat_grad):  # pragma: no cover
        b, s = idx.shape
        m = feats.shape[1]
        d_weights = np.zeros((b, s), dtype=np.float64)
        d_feats = np.zeros((feats.shape[0], m), dtype=np.float64)
        for bi in range(b):
            for si in range(s):
                j = idx[bi, si]
                if j < 0:
                    continue
                acc = 0.0
                for t in range(m):
                    acc += grad_out[bi, t] * feats[j, t]
                d_weights[bi, si] = acc
                if need_feat_grad:
                    w = weights[bi, si]
                    for t in range(m):
                        d_feats[j, t] += w * grad_out[bi, t]
        return d_weights, d_feats

    return fwd, bwd


def _seg_weighted_sum_numba(weights, feats, idx):
    return _SEG_FWD_JIT(
        np.ascontiguousarray(weights), np.ascontiguousarray(feats), np.ascontiguousarray(idx)
    )


def _seg_weighted_sum_bwd_numba(grad_out, weights, feats, idx, need_feat_grad):
    d_w, d_f = _SEG_BWD_JIT(
        np.ascontiguousarray(grad_out),
        np.ascontiguousarray(weights),
        np.ascontiguousarray(feats),
        np.ascontiguousarray(idx),
        need_feat_grad,
    )
    return d_w, (d_f if need_feat_grad else None)


if use_numba():
    _KNN_JIT = _knn_topk_numba_impl()
    _SEG_FWD_JIT, _SEG_BWD_JIT = _seg_weighted_sum_numba_impl()
    knn_topk = _knn_topk_numba
    seg_weighted_sum = _seg_weighted_sum_numba
    seg_weighted_sum_bwd = _seg_weighted_sum_bwd_numba
else:
    knn_topk = _knn_topk_numpy
    seg_weighted_sum = _seg_weighted_sum_numpy
    seg_weighted_sum_bwd = _seg_weighted_sum_bwd_numpy

# always-available references for cross-checking in tests and benchmarks
knn_topk_numpy = _knn_topk_numpy
seg_weighted_sum_numpy = _seg_weighted_sum_numpy
seg_weighted_sum_bwd_numpy = _seg_weighted_sum_bwd_numpy
