"""Brute-force references for tests.

Nothing here reuses the linear algebra of ``pg_node`` or ``tree``; only the
kernel evaluator is shared. Solves go through ``numpy.linalg`` and the
leaf probabilities are built by walking every root-to-leaf path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_N = 12
MAX_QUADRATURE_N = 3
N_HERMITE = 50
PRIOR_JITTER_REL = 1e-10


@dataclass(frozen=True)
class ExactPosterior:
    mean: np.ndarray
    cov: np.ndarray
    log_evidence: float


def _theta(c):
    c = abs(float(c))
    if c < 1e-6:
        return 0.25
    return np.tanh(c / 2.0) / (2.0 * c)


def _logistic_loglik(f, y):
    # log sigmoid((2y - 1) f), computed stably
    s = np.where(np.asarray(y) == 1, 1.0, -1.0)
    return -np.logaddexp(0.0, -s * f)


def exact_pg_binary(X, y, kernel, tol=1e-10, max_iter=10000):
    """Full-rank PG variational posterior over f at the training points.

    ``log_evidence`` is the Gauss-Hermite log marginal likelihood for
    ``n <= 3``; above that it is the converged full-rank ELBO, a lower bound.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n = X.shape[0]
    if n > MAX_N:
        raise ValueError(f"oracle is limited to n <= {MAX_N}, got n={n}")
    kappa = y.astype(float) - 0.5
    K = np.array([[kernel.eval(X[i], X[j]) for j in range(n)] for i in range(n)])
    K = K + PRIOR_JITTER_REL * kernel.output_scale * np.eye(n)
    eye = np.eye(n)

    # every quantity goes through B = I + W^1/2 K W^1/2, so K is never inverted
    mean, cov = np.zeros(n), K.copy()
    previous = -np.inf
    for _ in range(max_iter):
        c = np.sqrt(mean ** 2 + np.diag(cov))
        root = np.sqrt([_theta(ci) for ci in c])
        B = eye + root[:, None] * K * root[None, :]
        cov = K - (K * root[None, :]) @ np.linalg.solve(B, root[:, None] * K)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ kappa
        c = np.sqrt(mean ** 2 + np.diag(cov))
        theta = np.array([_theta(ci) for ci in c])
        second = mean ** 2 + np.diag(cov)
        expected = np.sum(-np.log(2.0) + kappa * mean - 0.5 * theta * second
                          - (np.logaddexp(c / 2.0, -c / 2.0) - np.log(2.0))
                          + 0.5 * c ** 2 * theta)
        # KL(N(mean, cov) || N(0, K)) with cov = (K^-1 + W)^-1, W the tilts that built cov
        B_inv = np.linalg.inv(B)
        _, logdet_B = np.linalg.slogdet(B)
        quad = mean @ np.linalg.solve(eye + root[:, None] ** 2 * K, kappa)
        kl = 0.5 * (np.trace(B_inv) + quad - n + logdet_B)
        value = expected - kl
        if abs(value - previous) < tol:
            break
        previous = value

    if n <= MAX_QUADRATURE_N:
        log_evidence = _hermite_log_evidence(K, y)
    else:
        log_evidence = float(value)
    return ExactPosterior(mean, cov, log_evidence)


def _hermite_log_evidence(K, y):
    """log of E_{f ~ N(0, K)} prod_i sigmoid((2y_i - 1) f_i) on a tensor Gauss-Hermite grid."""
    n = K.shape[0]
    nodes, weights = np.polynomial.hermite_e.hermegauss(N_HERMITE)
    weights = weights / np.sqrt(2.0 * np.pi)
    w, V = np.linalg.eigh(K)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    grid = np.stack(np.meshgrid(*[np.arange(N_HERMITE)] * n, indexing="ij"), -1).reshape(-1, n)
    F = nodes[grid] @ root.T
    total = np.sum(np.log(weights[grid]), axis=1) + np.sum(_logistic_loglik(F, y), axis=1)
    top = total.max()
    return float(top + np.log(np.sum(np.exp(total - top))))


# -- tree path enumeration -------------------------------------------------

def _node_moments(pg, x, sigma_x):
    Z = pg.inducing
    m = Z.shape[0]
    Kzz = np.array([[pg.kernel.eval(Z[i], Z[j]) for j in range(m)] for i in range(m)])
    Kzz = Kzz + pg.jitter * np.eye(m)
    kz = np.array([pg.kernel.eval(Z[i], x) for i in range(m)])
    w = np.linalg.solve(Kzz, pg.q_mean)
    a = np.linalg.solve(Kzz, kz)
    mean = kz @ w
    var = pg.kernel.eval(x, x) - kz @ a + a @ pg.q_cov @ a
    var = max(var, 1e-12 * pg.kernel.output_scale)
    if sigma_x is not None:
        grad = sum(w[i] * pg.kernel.grad_x1(x, Z[i]) for i in range(m))
        var += float(np.sum(grad ** 2 * sigma_x))
    return mean, var


def enumerate_tree_probs(tree, x_star, noise=None):
    """Class probabilities of one input by explicit enumeration of all leaf paths."""
    x = np.asarray(x_star, dtype=float).ravel()
    sigma_x = None
    if noise is not None:
        sigma_x = np.asarray(getattr(noise, "sigma_x", noise), dtype=float)

    def leaves(node, path):
        if node.left is None:
            yield node.classes[0], path
            return
        yield from leaves(node.left, path + ((node, True),))
        yield from leaves(node.right, path + ((node, False),))

    cache = {}
    out = np.zeros(tree.n_classes)
    for cls, path in leaves(tree.root, ()):
        prob = 1.0
        for node, go_left in path:
            if id(node) not in cache:
                mean, var = _node_moments(node.pg, x, sigma_x)
                z = mean / np.sqrt(1.0 + np.pi * var / 8.0)
                cache[id(node)] = 1.0 / (1.0 + np.exp(-z))
            p = cache[id(node)]
            prob *= p if go_left else 1.0 - p
        out[cls] = prob
    return out
