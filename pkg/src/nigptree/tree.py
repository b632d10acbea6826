"""Class trees of binary PG nodes and the NIGP-Tree training loop."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.spatial.distance import pdist

from ._cluster import balanced_two_means
from .denoise import denoise, parse_denoiser
from .kernels import DimensionError, make_kernel
from .pg_node import Adam, NoiseModel, PGNode

logger = logging.getLogger(__name__)

MODEL_FORMAT = "nigptree-model"
MODEL_SCHEMA_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.1
    n_inducing: int = 2
    kernel: str = "rbf"
    alpha: float = 1.5
    lengthscale: float | None = None
    output_scale: float = 1.0
    ard: bool = False
    noisy: bool = True
    denoiser: str = "svd"
    train_on_denoised: bool = True
    sweeps_per_epoch: int = 5
    seed: int = 0

    def validate(self):
        if not (isinstance(self.epochs, int) and self.epochs >= 1):
            raise ValueError(f"epochs must be an integer >= 1, got {self.epochs!r}")
        if not (isinstance(self.n_inducing, int) and self.n_inducing >= 1):
            raise ValueError(f"n_inducing must be an integer >= 1, got {self.n_inducing!r}")
        if not (isinstance(self.sweeps_per_epoch, int) and self.sweeps_per_epoch >= 1):
            raise ValueError("sweeps_per_epoch must be an integer >= 1")
        for name in ("ard", "noisy", "train_on_denoised"):
            if not isinstance(getattr(self, name), bool):
                raise ValueError(f"{name} must be true or false")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not isinstance(self.kernel, str) or not isinstance(self.denoiser, str):
            raise ValueError("kernel and denoiser must be strings")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.output_scale > 0:
            raise ValueError(f"output_scale must be positive, got {self.output_scale}")
        if self.lengthscale is not None and not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        make_kernel(self.kernel, 1, 1.0, 1.0, self.alpha)
        parse_denoiser(self.denoiser)
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TreeNode:
    """A node of the class tree. Leaves hold one class and no classifier."""

    classes: tuple
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    pg: PGNode | None = None

    @property
    def is_leaf(self):
        return self.left is None


class ClassTree:
    """Binary tree whose leaves are classes.

    At every internal node the left branch has bit 1: ``pg`` models the
    probability that an instance belongs to ``left.classes``.
    """

    def __init__(self, root: TreeNode, n_classes: int, noise: NoiseModel | None = None):
        self.root = root
        self.n_classes = n_classes
        self.noise = noise

    def internal_nodes(self):
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                out.append(node)
                stack.extend([node.right, node.left])
        return out

    def paths(self):
        """For each class, the list of (internal node, branch bit) from the root."""
        result = {}

        def walk(node, prefix):
            if node.is_leaf:
                result[node.classes[0]] = prefix
                return
            walk(node.left, prefix + [(node, 1)])
            walk(node.right, prefix + [(node, 0)])

        walk(self.root, [])
        return result

    @property
    def depth(self):
        return max(len(p) for p in self.paths().values())

    @property
    def input_dim(self):
        return self.internal_nodes()[0].pg.kernel.input_dim

    def check_invariants(self):
        leaves = []
        for node in [self.root] + [n for v in self.internal_nodes() for n in (v.left, v.right)]:
            if node.is_leaf:
                if len(node.classes) != 1:
                    raise AssertionError("leaf with more than one class")
                leaves.append(node.classes[0])
            else:
                lset, rset = set(node.left.classes), set(node.right.classes)
                if lset & rset or lset | rset != set(node.classes):
                    raise AssertionError(f"bad partition at node {node.classes}")
        if sorted(leaves) != list(range(self.n_classes)):
            raise AssertionError("every class must appear in exactly one leaf")
        if self.depth > math.ceil(math.log2(self.n_classes)) + 1:
            raise AssertionError("tree too deep")

    # -- prediction ------------------------------------------------------
    def class_probabilities(self, X, noise=None, method="probit", n_draws=1000, seed=0):
        """Leaf probabilities: product of branch probabilities along each class path.

        ``noise`` adds the input-noise variance correction; ``method="mc"``
        replaces the probit-matched approximation of E[sigmoid(f)] with
        seeded Monte-Carlo draws.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        probs = np.ones((X.shape[0], self.n_classes))
        rng = np.random.default_rng(seed)
        for node in self.internal_nodes():
            if node.pg is None:
                raise RuntimeError(f"node {node.classes} has no trained classifier")
            mean, var = node.pg.predict_f(X, noise=noise)
            p_left = expected_sigmoid(mean, var, method, n_draws, rng)
            probs[:, list(node.left.classes)] *= p_left[:, None]
            probs[:, list(node.right.classes)] *= (1.0 - p_left)[:, None]
        return probs

    def predict(self, X, noise=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DimensionError(f"input has dimension {X.shape[1]}, model has {self.input_dim}")
        # argmax returns the first maximum, so ties go to the smaller class index
        return np.argmax(self.class_probabilities(X, noise=noise), axis=1)

    def total_elbo(self, X, y):
        return float(sum(node.pg.elbo(*_route(node, X, y)) for node in self.internal_nodes()))

    # -- serialization ---------------------------------------------------
    def to_dict(self):
        def enc(node):
            if node.is_leaf:
                return {"classes": list(node.classes)}
            return {"classes": list(node.classes), "pg": node.pg.to_dict(),
                    "left": enc(node.left), "right": enc(node.right)}

        return {
            "n_classes": self.n_classes,
            "noise": None if self.noise is None else self.noise.sigma_x.tolist(),
            "root": enc(self.root),
        }

    @classmethod
    def from_dict(cls, state):
        def dec(d):
            if "left" not in d:
                return TreeNode(tuple(d["classes"]))
            return TreeNode(tuple(d["classes"]), dec(d["left"]), dec(d["right"]),
                            PGNode.from_dict(d["pg"]))

        noise = None if state["noise"] is None else NoiseModel(np.asarray(state["noise"]))
        return cls(dec(state["root"]), int(state["n_classes"]), noise)


def expected_sigmoid(mean, var, method="probit", n_draws=1000, rng=None):
    if method == "probit":
        return _sigmoid(mean / np.sqrt(1.0 + np.pi * var / 8.0))
    if method == "mc":
        rng = np.random.default_rng(rng)
        z = rng.standard_normal((n_draws, 1))
        return _sigmoid(mean[None, :] + np.sqrt(var)[None, :] * z).mean(axis=0)
    raise ValueError(f"unknown method {method!r}")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _route(node, X, y):
    """Instances whose class path passes through ``node`` and their branch bits."""
    mask = np.isin(y, node.classes)
    bits = np.isin(y[mask], node.left.classes).astype(int)
    return X[mask], bits


def class_centroids(X, y, n_classes):
    missing = [c for c in range(n_classes) if np.sum(y == c) < 2]
    if missing:
        raise ValueError(f"classes absent or with fewer than two instances: {missing}")
    return np.stack([X[y == c].mean(axis=0) for c in range(n_classes)])


def build_structure(centroids, rng):
    """Recursive balanced 2-means over class centroids. Returns the root TreeNode."""

    def grow(classes):
        if len(classes) == 1:
            return TreeNode(tuple(classes))
        mask = balanced_two_means(centroids[list(classes)], rng)
        a = [c for c, m in zip(classes, mask) if m]
        b = [c for c, m in zip(classes, mask) if not m]
        # the group holding the smallest class index goes left
        left, right = (a, b) if a[0] < b[0] else (b, a)
        return TreeNode(tuple(classes), grow(left), grow(right))

    return grow(list(range(centroids.shape[0])))


def median_lengthscale(X, rng, max_rows=1000):
    if X.shape[0] > max_rows:
        X = X[np.sort(rng.choice(X.shape[0], max_rows, replace=False))]
    dist = pdist(X)
    dist = dist[dist > 0]
    return float(np.median(dist)) if dist.size else 1.0


def _validate_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2:
        raise DimensionError("X must be a 2-D matrix")
    if y.shape != (X.shape[0],):
        raise DimensionError(f"{y.shape[0]} labels for {X.shape[0]} rows")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.mod(y, 1) == 0):
            raise ValueError("labels must be integers")
        y = y.astype(int)
    if y.min() < 0:
        raise ValueError("labels must be nonnegative")
    n_classes = int(y.max()) + 1
    if n_classes < 2:
        raise ValueError("need at least two classes")
    return X, y, n_classes


def build_tree(X, y, config: TrainConfig, kernel=None, rng=None):
    """Partition classes with balanced 2-means and initialise one PG node per split."""
    X, y, n_classes = _validate_xy(X, y)
    config.validate()
    rng = np.random.default_rng(config.seed if rng is None else rng)
    centroids = class_centroids(X, y, n_classes)
    if kernel is None:
        ls = config.lengthscale or median_lengthscale(X, rng)
        kernel = make_kernel(config.kernel, X.shape[1], ls, config.output_scale, config.alpha)
    tree = ClassTree(build_structure(centroids, rng), n_classes)
    for node in tree.internal_nodes():
        Xv, bits = _route(node, X, y)
        m = min(config.n_inducing, Xv.shape[0])
        node.pg = PGNode.init(Xv, bits, kernel, m, rng=rng)
    return tree


@dataclass
class TrainResult:
    tree: ClassTree
    X: np.ndarray
    inducing: list
    elbo_history: list = field(default_factory=list)
    accuracy_history: list = field(default_factory=list)
    noise: NoiseModel | None = None
    sigma_x: np.ndarray | None = None


def _n_threads():
    try:
        return max(1, int(os.environ.get("NIGP_THREADS", "1")))
    except ValueError:
        return 1


def train(X, y, config: TrainConfig, noise=None, groups=None):
    """Fit a NIGP-Tree.

    Denoises the inputs (unless the denoiser is ``none``), estimates the
    per-feature noise variance from the residual, builds the tree, then per
    epoch runs coordinate-ascent sweeps on every node followed by one
    gradient step on kernel hyperparameters and inducing locations.
    ``noise`` overrides the estimated noise variances.
    """
    config.validate()
    S, y, n_classes = _validate_xy(X, y)
    method, kwargs = parse_denoiser(config.denoiser)
    dn = denoise(S, method, groups=groups, **kwargs)
    X_fit = dn.clean if config.train_on_denoised else S
    sigma_x = dn.sigma_x if noise is None else NoiseModel(
        noise.sigma_x if isinstance(noise, NoiseModel) else noise).sigma_x
    noise_model = NoiseModel(sigma_x) if config.noisy else None

    tree = build_tree(X_fit, y, config)
    tree.noise = noise_model
    nodes = tree.internal_nodes()
    routed = [_route(node, X_fit, y) for node in nodes]
    optimizers = [Adam(config.learning_rate) for _ in nodes]

    def fit_node(i):
        node, (Xv, bits) = nodes[i], routed[i]
        for _ in range(config.sweeps_per_epoch):
            node.pg.update_variational(Xv, bits)
        return node.pg.step_hyperparameters(Xv, bits, optimizers[i], ard=config.ard)

    result = TrainResult(tree, X_fit, [], noise=noise_model, sigma_x=sigma_x)
    with ThreadPoolExecutor(max_workers=_n_threads()) as pool:
        for epoch in range(config.epochs):
            total = float(sum(pool.map(fit_node, range(len(nodes)))))
            if not np.isfinite(total):
                raise FloatingPointError(
                    f"non-finite total ELBO at epoch {epoch}: "
                    + ", ".join(f"{n.classes}: {n.pg.kernel!r}" for n in nodes))
            acc = float(np.mean(tree.predict(X_fit, noise=noise_model) == y))
            result.elbo_history.append(total)
            result.accuracy_history.append(acc)
            logger.debug("epoch %d  elbo %.6f  train acc %.4f", epoch, total, acc)
    result.inducing = [node.pg.inducing for node in nodes]
    return result


def class_probabilities(tree, x_star, noise=None):
    return tree.class_probabilities(np.atleast_2d(x_star), noise=noise)[0]


def predict(tree, X_star, noise=None):
    return tree.predict(X_star, noise=noise)
