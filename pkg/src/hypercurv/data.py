"""Datasets: synthetic trees, CSV ingestion and the Gromov delta statistic."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_LEAVES = 100_000


class DataSizeError(ValueError):
    pass


class CsvParseError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    provenance: str = ""
    label_names: list = field(default_factory=list)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise DataSizeError("a dataset needs at least two rows of features")
        if y.shape != (X.shape[0],):
            raise ValueError("labels must have one entry per row")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        self.features, self.labels = X, y

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def split(self, val_fraction: float, seed: int):
        """Seeded disjoint (train, validation) split, stratified by label."""
        if not 0 < val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")
        rng = np.random.default_rng(seed)
        val_idx = []
        for k in np.unique(self.labels):
            idx = np.flatnonzero(self.labels == k)
            rng.shuffle(idx)
            m = int(round(val_fraction * len(idx)))
            val_idx.extend(idx[:m].tolist())
        mask = np.zeros(len(self), dtype=bool)
        mask[val_idx] = True
        if mask.all() or not mask.any():
            raise DataSizeError("split leaves one side empty")
        return (self.features[~mask], self.labels[~mask]), (self.features[mask], self.labels[mask])


# ------------------------------------------------------------------ trees

def _tree_nodes(depth: int, branching: int, d_in: int, rng):
    level = [np.zeros(d_in)]
    groups = [0]
    for ell in range(1, depth + 1):
        nxt, ng = [], []
        for node, g in zip(level, groups):
            for j in range(branching):
                step = rng.standard_normal(d_in)
                step /= np.linalg.norm(step)
                nxt.append(node + step * 2.0 ** (-ell))
                ng.append(j if ell == 1 else g)
        level, groups = nxt, ng
    return np.array(level), np.array(groups, dtype=np.int64)


def gen_tree_dataset(depth: int, branching: int, noise_sigma: float, d_in: int, seed: int,
                     samples_per_leaf: int = 1) -> Dataset:
    """Leaves of a random balanced tree embedded in ``R^d_in``.

    A child sits at its parent plus a random unit step scaled by
    ``2^-level``; each leaf emits ``samples_per_leaf`` points with isotropic
    Gaussian noise ``noise_sigma``.  The label is the root child whose
    subtree contains the leaf.
    """
    if depth < 2 or branching < 2:
        raise ValueError("need depth >= 2 and branching >= 2")
    if d_in < 1 or samples_per_leaf < 1 or noise_sigma < 0:
        raise ValueError("need d_in >= 1, samples_per_leaf >= 1 and noise_sigma >= 0")
    if branching ** depth * samples_per_leaf > MAX_LEAVES:
        raise DataSizeError(f"{branching}^{depth} leaves exceeds the limit of {MAX_LEAVES}")
    rng = np.random.default_rng(seed)
    leaves, labels = _tree_nodes(depth, branching, d_in, rng)
    X = np.repeat(leaves, samples_per_leaf, axis=0)
    y = np.repeat(labels, samples_per_leaf)
    X = X + noise_sigma * rng.standard_normal(X.shape)
    return Dataset(X, y, name=f"tree-d{depth}-b{branching}",
                   provenance=f"gen_tree_dataset(depth={depth}, branching={branching}, "
                              f"noise_sigma={noise_sigma}, d_in={d_in}, seed={seed}, "
                              f"samples_per_leaf={samples_per_leaf})")


def tree_path_distances(depth: int, branching: int) -> np.ndarray:
    """Leaf-to-leaf path lengths in the tree with edge weight ``2^-level``."""
    n = branching ** depth
    idx = np.arange(n)
    D = np.zeros((n, n))
    for i in range(n):
        # depth of the lowest common ancestor from matching base-b digits
        same = np.ones(n, dtype=bool)
        lca = np.zeros(n, dtype=int)
        for ell in range(1, depth + 1):
            div = branching ** (depth - ell)
            same &= (idx // div) == (i // div)
            lca += same
        for ell in range(1, depth + 1):
            D[i] += np.where(lca < ell, 2 * 2.0 ** (-ell), 0.0)
    return D


# -------------------------------------------------------------------- CSV

def load_csv(path, label_column: str = "label") -> Dataset:
    """Numeric features plus one label column (integer or categorical)."""
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise CsvParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise CsvParseError(f"{path}: missing label column '{label_column}'")
    li = header.index(label_column)
    if len(rows) < 2:
        raise CsvParseError(f"{path}: no data rows")
    feats, raw = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CsvParseError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        vals = []
        for j, cell in enumerate(row):
            if j == li:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise CsvParseError(f"{path}: row {r}, column '{header[j]}': non-numeric value {cell!r}") from None
        feats.append(vals)
        raw.append(row[li].strip())
    names: list[str] = []
    index = {}
    for s in raw:
        if s not in index:
            index[s] = len(names)
            names.append(s)
    if all(s.lstrip("-").isdigit() for s in names) and all(int(s) >= 0 for s in names):
        labels = np.array([int(s) for s in raw])
        names = [str(i) for i in range(labels.max() + 1)]
    else:
        labels = np.array([index[s] for s in raw])
    return Dataset(np.array(feats, dtype=np.float64), labels, name=Path(path).stem,
                   provenance=str(path), label_names=names)


def write_csv(ds: Dataset, path, label_column: str = "label") -> None:
    d = ds.features.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j}" for j in range(d)] + [label_column])
    for row, lab in zip(ds.features, ds.labels):
        w.writerow([repr(float(v)) for v in row] + [int(lab)])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ------------------------------------------------------------ hyperbolicity

def delta_hyperbolicity(data, n_quadruples: int = 50_000, seed: int = 0, dist=None) -> float:
    """Sampled Gromov four-point delta divided by the largest sampled distance.

    ``data`` is a :class:`Dataset` or an ``n x d`` array (Euclidean
    distances); pass ``dist`` to use a precomputed distance matrix instead.
    """
    if dist is None:
        X = data.features if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
        n = X.shape[0]
    else:
        dist = np.asarray(dist, dtype=np.float64)
        n = dist.shape[0]
    if n < 4:
        raise DataSizeError("delta needs at least four points")
    rng = np.random.default_rng(seed)
    Q = np.stack([rng.choice(n, size=4, replace=False) for _ in range(n_quadruples)]) if n < 8 else \
        _distinct_quads(rng, n, n_quadruples)

    if dist is None:
        def d(a, b):
            return np.linalg.norm(X[a] - X[b], axis=1)
    else:
        def d(a, b):
            return dist[a, b]

    x, y, z, w = Q.T
    dxy, dzw = d(x, y), d(z, w)
    dxz, dyw = d(x, z), d(y, w)
    dxw, dyz = d(x, w), d(y, z)
    S = np.sort(np.stack([dxy + dzw, dxz + dyw, dxw + dyz], axis=1), axis=1)
    delta = float(np.max((S[:, 2] - S[:, 1]) / 2.0))
    dmax = float(np.max(np.stack([dxy, dzw, dxz, dyw, dxw, dyz])))
    return 0.0 if dmax == 0 else delta / dmax


def _distinct_quads(rng, n, m):
    Q = rng.integers(0, n, size=(m, 4))
    bad = np.array([len(set(q)) < 4 for q in Q])
    while bad.any():
        Q[bad] = rng.integers(0, n, size=(int(bad.sum()), 4))
        bad = np.array([len(set(q)) < 4 for q in Q])
    return Q
