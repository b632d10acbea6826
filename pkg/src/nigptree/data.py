"""Feature datasets: file formats, synthetic stand-ins and splits.

CSV layout: header ``label,f0,...,f{d-1}`` (optionally ``label,group,f0,...``
when rows carry a sequence id), one instance per row.

Packed layout (little-endian): ``b"NGPT"``, u16 version, u32 n, u32 d,
u32 C, n u32 labels, then n*d float64 features in row-major order.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"NGPT"
PACKED_VERSION = 1
_HEADER = struct.Struct("<4sHIII")


class DataFormatError(ValueError):
    pass


@dataclass
class FeatureDataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: list = field(default=None)
    groups: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise DataFormatError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise DataFormatError(
                f"{self.labels.shape[0]} labels for {self.features.shape[0]} rows")
        if self.labels.size and self.labels.min() < 0:
            raise DataFormatError("labels must be nonnegative")
        if self.class_names is None:
            C = int(self.labels.max()) + 1 if self.labels.size else 0
            self.class_names = [str(c) for c in range(C)]
        self.class_names = list(self.class_names)
        if self.labels.size and self.labels.max() >= len(self.class_names):
            raise DataFormatError(
                f"label {self.labels.max()} out of range for {len(self.class_names)} classes")
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=int)
            if self.groups.shape != self.labels.shape:
                raise DataFormatError("groups must have one entry per row")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    @property
    def C(self):
        return len(self.class_names)

    def subset(self, idx):
        idx = np.asarray(idx)
        return FeatureDataset(self.features[idx], self.labels[idx], self.class_names,
                              None if self.groups is None else self.groups[idx])


# -- file formats ----------------------------------------------------------

def _infer_format(path, fmt):
    if fmt is not None:
        if fmt not in ("csv", "packed"):
            raise DataFormatError(f"unknown format {fmt!r}; use 'csv' or 'packed'")
        return fmt
    return "csv" if str(path).lower().endswith(".csv") else "packed"


def load_features(path, format=None, n_classes=None):
    fmt = _infer_format(path, format)
    if fmt == "csv":
        ds = _load_csv(path)
    else:
        ds = _load_packed(path)
    if n_classes is not None:
        if ds.labels.max() >= n_classes:
            raise DataFormatError(f"label {ds.labels.max()} out of range for {n_classes} classes")
        ds = FeatureDataset(ds.features, ds.labels, [str(c) for c in range(n_classes)], ds.groups)
    return ds


def _load_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: no rows")
        header = [h.strip() for h in header]
        if not header or header[0] != "label":
            raise DataFormatError(f"{path}:1: header must start with 'label'")
        has_group = len(header) > 1 and header[1] == "group"
        n_feat = len(header) - 1 - has_group
        if n_feat < 1:
            raise DataFormatError(f"{path}:1: no feature columns")
        labels, groups, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                label = int(row[0])
                if has_group:
                    groups.append(int(row[1]))
                values = [float(v) for v in row[1 + has_group:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if label < 0:
                raise DataFormatError(f"{path}:{lineno}: label {label} out of range")
            labels.append(label)
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no rows")
    return FeatureDataset(np.array(rows), np.array(labels),
                          groups=np.array(groups) if has_group else None)


def _load_packed(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, version, n, d, C = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != PACKED_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if n == 0:
        raise DataFormatError(f"{path}: no rows")
    expected = _HEADER.size + 4 * n + 8 * n * d
    if len(blob) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=_HEADER.size).astype(int)
    feats = np.frombuffer(blob, dtype="<f8", count=n * d, offset=_HEADER.size + 4 * n)
    if labels.max() >= C:
        row = int(np.argmax(labels >= C))
        raise DataFormatError(f"{path}: row {row}: label {labels[row]} out of range for {C} classes")
    return FeatureDataset(feats.reshape(n, d).astype(float), labels,
                          [str(c) for c in range(C)])


def save_features(ds: FeatureDataset, path, format=None):
    fmt = _infer_format(path, format)
    tmp = f"{path}.tmp"
    if fmt == "csv":
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            group_col = ["group"] if ds.groups is not None else []
            w.writerow(["label"] + group_col + [f"f{j}" for j in range(ds.d)])
            for i in range(ds.n):
                g = [int(ds.groups[i])] if ds.groups is not None else []
                w.writerow([int(ds.labels[i])] + g + [repr(float(v)) for v in ds.features[i]])
    else:
        with open(tmp, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, PACKED_VERSION, ds.n, ds.d, ds.C))
            fh.write(ds.labels.astype("<u4").tobytes())
            fh.write(np.ascontiguousarray(ds.features, dtype="<f8").tobytes())
    os.replace(tmp, path)


# -- synthetic data --------------------------------------------------------

def _centroids(C, d, separation, rng):
    if C <= d + 1:
        # regular simplex with unit edge, embedded through a random rotation
        V = np.eye(C) - 1.0 / C
        U, s, _ = np.linalg.svd(V, full_matrices=False)
        coords = U[:, : C - 1] * s[: C - 1] / np.sqrt(2.0)
    else:
        side = int(np.ceil(C ** (1.0 / d)))
        grid = np.stack(np.meshgrid(*[np.arange(side)] * d, indexing="ij"), -1).reshape(-1, d)
        grid = grid - (side - 1) / 2.0
        order = np.lexsort((np.arange(len(grid)), np.sum(grid ** 2, axis=1)))
        coords = grid[order[:C]].astype(float)
    k = coords.shape[1]
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    return separation * coords @ Q[:, :k].T


def _smooth_paths(length, d, smoothness, rng):
    t = np.arange(length, dtype=float)
    cov = np.exp(-0.5 * ((t[:, None] - t[None, :]) / smoothness) ** 2)
    w, V = np.linalg.eigh(cov)
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return root @ rng.normal(size=(length, d))


def synth_blobs(C, per_class, d, separation, noise_sigma=0.0, seed=0,
                seq_len=None, smoothness=2.0):
    """Gaussian class blobs with unit spread plus N(0, noise_sigma^2) observation noise.

    With ``seq_len`` each class is emitted as contiguous sequences of that
    length whose within-class offsets drift smoothly (unit marginal variance,
    correlation length ``smoothness`` rows), mimicking consecutive video frames;
    ``groups`` then holds the sequence id. Clean part and noise draw from
    separate streams, so ``noise_sigma=0`` with the same seed gives the clean
    features.
    """
    if C < 2 or per_class < 2 or d < 1:
        raise ValueError("need C >= 2, per_class >= 2 and d >= 1")
    if not (np.isfinite(separation) and separation > 0):
        raise ValueError(f"infeasible geometry: separation must be positive, got {separation}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    if seq_len is not None and (seq_len < 2 or per_class % seq_len):
        raise ValueError("seq_len must be >= 2 and divide per_class")
    geo_rng, spread_rng, noise_rng = (np.random.default_rng(s)
                                      for s in np.random.SeedSequence(seed).spawn(3))
    centers = _centroids(C, d, float(separation), geo_rng)
    gaps = np.sqrt(np.sum((centers[:, None] - centers[None]) ** 2, axis=-1))
    if np.min(gaps[~np.eye(C, dtype=bool)]) < separation * (1 - 1e-9):
        raise ValueError(f"infeasible geometry for C={C}, d={d}")
    feats, labels, groups = [], [], []
    for c in range(C):
        if seq_len is None:
            offsets = spread_rng.normal(size=(per_class, d))
            groups.append(np.full(per_class, c))
        else:
            n_seq = per_class // seq_len
            offsets = np.concatenate([_smooth_paths(seq_len, d, smoothness, spread_rng)
                                      for _ in range(n_seq)])
            groups.append(c * n_seq + np.repeat(np.arange(n_seq), seq_len))
        feats.append(centers[c] + offsets)
        labels.append(np.full(per_class, c))
    X = np.concatenate(feats)
    S = X + noise_sigma * noise_rng.normal(size=X.shape)
    return FeatureDataset(S, np.concatenate(labels), [f"class{c}" for c in range(C)],
                          np.concatenate(groups) if seq_len is not None else None)


# -- splits ----------------------------------------------------------------

def split(ds: FeatureDataset, test_fraction, seed=0):
    """Stratified random split; row order is preserved inside each part."""
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in range(ds.C):
        members = np.flatnonzero(ds.labels == c)
        if members.size == 0:
            continue
        if members.size < 2:
            raise ValueError(f"class {c} has a single instance; cannot stratify")
        k = int(np.clip(np.round(test_fraction * members.size), 1, members.size - 1))
        test_idx.append(rng.permutation(members)[:k])
    test_mask = np.zeros(ds.n, dtype=bool)
    test_mask[np.concatenate(test_idx)] = True
    return ds.subset(np.flatnonzero(~test_mask)), ds.subset(np.flatnonzero(test_mask))


def split_sequential(ds: FeatureDataset, n_train, n_test=None):
    """First ``n_train`` rows of every sequence train, the next ``n_test`` test."""
    if ds.groups is None:
        raise ValueError("sequential split needs per-row sequence ids (groups)")
    n_test = n_train if n_test is None else n_test
    train_idx, test_idx = [], []
    for g in np.unique(ds.groups):
        rows = np.flatnonzero(ds.groups == g)
        if rows.size < n_train + n_test:
            raise ValueError(f"sequence {g} has {rows.size} rows, need {n_train + n_test}")
        train_idx.append(rows[:n_train])
        test_idx.append(rows[n_train:n_train + n_test])
    return ds.subset(np.concatenate(train_idx)), ds.subset(np.concatenate(test_idx))
