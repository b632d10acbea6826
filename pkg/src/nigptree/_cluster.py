"""Small deterministic k-means utilities shared by node init and tree building."""
import numpy as np


def _sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=-1)


def kmeans_plusplus(X, k, rng):
    """Indices of ``k`` seeds chosen by D^2 sampling."""
    n = X.shape[0]
    if k > n:
        raise ValueError(f"cannot pick {k} seeds from {n} points")
    idx = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            # fewer distinct points than seeds: fall back to unused indices
            free = np.setdiff1d(np.arange(n), idx)
            nxt = int(rng.choice(free))
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[nxt:nxt + 1])[:, 0])
    return np.asarray(idx)


def kmeans(X, k, rng, n_iter=50):
    """Lloyd iterations from k-means++ seeds. Empty clusters keep their center."""
    X = np.asarray(X, dtype=float)
    centers = X[kmeans_plusplus(X, k, rng)].copy()
    for _ in range(n_iter):
        assign = np.argmin(_sq_dists(X, centers), axis=1)
        new = centers.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new[j] = X[members].mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def balanced_two_means(P, rng, n_iter=50):
    """Split the rows of ``P`` into two groups whose sizes differ by at most one.

    Seeds come from k-means++; assignment ranks points by how much closer they
    are to one center than the other and cuts the ranking in half, which is the
    optimal size-constrained assignment for two clusters. Returns a boolean
    mask for group 0.
    """
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    if k < 2:
        raise ValueError("need at least two points to split")
    centers = P[kmeans_plusplus(P, 2, rng)].copy()
    sizes = sorted({k // 2, k - k // 2})
    mask = None
    for _ in range(n_iter):
        d2 = _sq_dists(P, centers)
        margin = d2[:, 0] - d2[:, 1]
        order = np.argsort(margin, kind="stable")
        best = None
        for size in sizes:
            cand = np.zeros(k, dtype=bool)
            cand[order[:size]] = True
            cost = d2[cand, 0].sum() + d2[~cand, 1].sum()
            if best is None or cost < best[0]:
                best = (cost, cand)
        new_mask = best[1]
        if mask is not None and np.array_equal(new_mask, mask):
            break
        mask = new_mask
        centers = np.stack([P[mask].mean(axis=0), P[~mask].mean(axis=0)])
    return mask
