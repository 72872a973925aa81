"""Hyperbolic feed-forward network with a hyperbolic MLR head.

Pipeline per input row::

    f = extractor(x)                     # Euclidean tanh MLP (may be identity)
    f = clip(f, r)                       # optional feature clipping
    u = expmap0(f)                       # onto the ball
    h = expmap0(logmap0(u) @ A) (+) expmap0(b)
    logit_k = lambda(p_k) ||a_k|| / sqrt(c) * asinh(...)   with p_k = expmap0(mlr_b[k])

All trainable tensors are Euclidean; ball-valued parameters are obtained by
``expmap0`` on use.  The optimisers see a single flat vector ``w`` and
:class:`ParamLayout` converts between the two views.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import poincare as pc
from . import tensor as tn
from .tensor import Tensor, as_tensor

CKPT_HEADER = "HYPERCURV-CKPT-1"
MIN_MLR_NORM = 1e-8


class CheckpointError(ValueError):
    pass


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("batch inputs must be a non-empty n x d array")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if not np.all(np.isfinite(x)):
            raise ValueError("batch inputs contain non-finite values")
        if y.size and (not np.issubdtype(y.dtype, np.integer)):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValueError("labels must be integers")
        y = y.astype(np.int64)
        k = int(y.max()) + 1 if self.n_classes is None else int(self.n_classes)
        if y.min() < 0 or y.max() >= k:
            raise ValueError(f"labels must lie in [0, {k})")
        self.inputs, self.labels, self.n_classes = x, y, k

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class ParamLayout:
    """Ordered (name, shape) list describing the flat parameter vector."""

    entries: tuple

    @property
    def size(self) -> int:
        return int(sum(int(np.prod(s)) for _, s in self.entries))

    def offsets(self):
        off = 0
        for name, shape in self.entries:
            n = int(np.prod(shape))
            yield name, shape, off, off + n
            off += n

    def unpack(self, w: Tensor) -> dict[str, Tensor]:
        w = as_tensor(w)
        if w.shape != (self.size,):
            raise ValueError(f"flat vector has shape {w.shape}, expected ({self.size},)")
        return {name: w[lo:hi].reshape(shape) for name, shape, lo, hi in self.offsets()}

    def unpack_np(self, w) -> dict[str, np.ndarray]:
        w = np.asarray(w, dtype=np.float64)
        return {name: w[lo:hi].reshape(shape).copy() for name, shape, lo, hi in self.offsets()}

    def pack(self, arrays: dict) -> np.ndarray:
        parts = []
        for name, shape in self.entries:
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != tuple(shape):
                raise ValueError(f"{name}: shape {a.shape} != {tuple(shape)}")
            parts.append(a.reshape(-1))
        return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class HnnParams:
    """Parameter set of the network; ball parameters are stored in tangent coordinates."""

    extractor_weights: list = field(default_factory=list)  # [W1, b1, W2, b2] or []
    a: np.ndarray = None
    b: np.ndarray = None
    mlr_a: np.ndarray = None
    mlr_b: np.ndarray = None

    def as_dict(self) -> dict[str, np.ndarray]:
        d = {f"ext{i}": np.asarray(t, dtype=np.float64) for i, t in enumerate(self.extractor_weights)}
        d.update(a=self.a, b=self.b, mlr_a=self.mlr_a, mlr_b=self.mlr_b)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HnnParams":
        ext = [np.asarray(d[k]) for k in sorted((k for k in d if k.startswith("ext")), key=lambda s: int(s[3:]))]
        return cls(ext, np.asarray(d["a"]), np.asarray(d["b"]), np.asarray(d["mlr_a"]), np.asarray(d["mlr_b"]))

    def layout(self) -> ParamLayout:
        return ParamLayout(tuple((k, tuple(np.shape(v))) for k, v in self.as_dict().items()))

    def flat(self) -> np.ndarray:
        return self.layout().pack(self.as_dict())

    def ball_bias(self, c: float) -> pc.BallPoint:
        return pc.expmap0(self.b, c)

    def mlr_points(self, c: float) -> list[pc.BallPoint]:
        return [pc.expmap0(row, c) for row in self.mlr_b]


class HnnModel:
    """Architecture description: sizes plus the clipping switch.

    ``hidden`` and ``embed`` are the widths of the two tanh layers of the
    extractor; ``hidden=0`` turns the extractor into the identity (then
    ``embed`` must equal ``d_in``).
    """

    def __init__(self, d_in: int, n_classes: int, hidden: int = 16, embed: int = 8,
                 hyp_dim: int = 8, clip_radius: float | None = None):
        if n_classes < 2:
            raise ValueError("need at least two classes")
        if clip_radius is not None and clip_radius <= 0:
            raise ValueError("clip_radius must be positive")
        self.d_in = int(d_in)
        self.n_classes = int(n_classes)
        self.hidden = int(hidden)
        self.embed = int(embed) if hidden else int(d_in)
        self.hyp_dim = int(hyp_dim)
        self.clip_radius = clip_radius

    def get_config(self) -> dict:
        return dict(d_in=self.d_in, n_classes=self.n_classes, hidden=self.hidden,
                    embed=self.embed, hyp_dim=self.hyp_dim, clip_radius=self.clip_radius)

    def init_params(self, seed: int = 0, scale: float = 1.0) -> HnnParams:
        rng = np.random.default_rng(seed)
        ext = []
        if self.hidden:
            ext = [
                rng.normal(0, scale / np.sqrt(self.d_in), (self.d_in, self.hidden)),
                np.zeros(self.hidden),
                rng.normal(0, scale / np.sqrt(self.hidden), (self.hidden, self.embed)),
                np.zeros(self.embed),
            ]
        a = rng.normal(0, scale / np.sqrt(self.embed), (self.embed, self.hyp_dim))
        b = np.zeros(self.hyp_dim)
        mlr_a = rng.normal(0, scale / np.sqrt(self.hyp_dim), (self.n_classes, self.hyp_dim))
        mlr_b = np.zeros((self.n_classes, self.hyp_dim))
        return HnnParams(ext, a, b, mlr_a, mlr_b)

    def layout(self) -> ParamLayout:
        ent = []
        if self.hidden:
            ent += [("ext0", (self.d_in, self.hidden)), ("ext1", (self.hidden,)),
                    ("ext2", (self.hidden, self.embed)), ("ext3", (self.embed,))]
        ent += [("a", (self.embed, self.hyp_dim)), ("b", (self.hyp_dim,)),
                ("mlr_a", (self.n_classes, self.hyp_dim)), ("mlr_b", (self.n_classes, self.hyp_dim))]
        return ParamLayout(tuple(ent))

    # -------------------------------------------------- differentiable core
    def _features(self, p: dict, X: Tensor) -> Tensor:
        if not self.hidden:
            f = X
        else:
            h = tn.tanh(X @ p["ext0"] + p["ext1"])
            f = tn.tanh(h @ p["ext2"] + p["ext3"])
        if self.clip_radius is not None:
            f = pc.clip_features_t(f, self.clip_radius)
        return f

    def embed_t(self, p: dict, X: Tensor, c: float) -> Tensor:
        u = pc.expmap0_t(self._features(p, X), c)
        h = pc.expmap0_t(pc.logmap0_t(u, c) @ p["a"], c)
        bias = pc.expmap0_t(p["b"].reshape(1, self.hyp_dim), c)
        return pc.mobius_add_t(h, bias, c)

    def logits_t(self, p: dict, H: Tensor, c: float) -> Tensor:
        return mlr_logits_t(p["mlr_a"], p["mlr_b"], H, c)

    def loss_t(self, w: Tensor, X, y, c: float, weight_decay: float = 0.0) -> Tensor:
        p = self.layout().unpack(w)
        X = tn.constant(X)
        z = self.logits_t(p, self.embed_t(p, X, c), c)
        onehot = tn.constant(np.eye(self.n_classes)[np.asarray(y)])
        ce = (tn.logsumexp(z, axis=1) - (z * onehot).sum(axis=1)).mean()
        if weight_decay:
            ce = ce + 0.5 * weight_decay * tn.dot(w, w)
        return ce

    def make_loss(self, X, y, weight_decay: float = 0.0) -> Callable[[Tensor, float], Tensor]:
        """Closure ``f(w, c)`` returning the mean cross-entropy on ``(X, y)``."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)

        def lossfn(w, c):
            return self.loss_t(as_tensor(w), X, y, float(c), weight_decay)

        return lossfn

    # -------------------------------------------------- numpy conveniences
    def logits(self, w, X, c: float) -> np.ndarray:
        with tn.no_record():
            p = self.layout().unpack(Tensor(w))
            return self.logits_t(p, self.embed_t(p, tn.constant(X), c), c).numpy()

    def predict(self, w, X, c: float) -> np.ndarray:
        # argmax returns the first maximal index, so ties go to the lowest class
        return np.argmax(self.logits(w, X, c), axis=1)

    def accuracy(self, w, X, y, c: float) -> float:
        return float(np.mean(self.predict(w, X, c) == np.asarray(y)))


def mlr_logits_t(mlr_a: Tensor, mlr_b: Tensor, H: Tensor, c: float) -> Tensor:
    """Hyperbolic MLR logits, one column per class."""
    mlr_a, mlr_b, H = as_tensor(mlr_a), as_tensor(mlr_b), as_tensor(H)
    if H.ndim == 1:
        H = H.reshape(1, H.shape[0])
    K, d = mlr_a.shape
    an = tn.norm(mlr_a, axis=1, keepdims=True)
    if np.min(an.data) < MIN_MLR_NORM:
        raise ValueError(f"MLR normal vector norm {np.min(an.data):.3e} below {MIN_MLR_NORM}")
    sc = np.sqrt(c)
    P = pc.expmap0_t(mlr_b, c)
    lam = pc.lambda_t(P, c)
    cols = []
    for k in range(K):
        z = pc.mobius_add_t(-P[k:k + 1], H, c)
        denom = 1.0 - c * (z * z).sum(axis=1, keepdims=True)
        if np.min(denom.data) < 1e-10:
            raise pc.BoundaryError("MLR point at the ball boundary")
        ak = mlr_a[k:k + 1]
        nk = an[k:k + 1]
        inner = (z * ak).sum(axis=1, keepdims=True)
        arg = 2.0 * sc * inner / (denom * nk)
        cols.append(lam[k:k + 1] * nk / sc * tn.asinh(arg))
    return tn.concat(cols, axis=1)


# ------------------------------------------------------- params-level API

def _model_for(params: HnnParams, clip_radius=None) -> HnnModel:
    ext = params.extractor_weights
    K, hyp = np.shape(params.mlr_a)
    if ext:
        d_in, hidden = np.shape(ext[0])
        embed = np.shape(ext[2])[1]
    else:
        d_in = hidden = 0
        d_in = np.shape(params.a)[0]
        embed = d_in
    return HnnModel(d_in, K, hidden=hidden, embed=embed, hyp_dim=hyp, clip_radius=clip_radius)


def forward_embed(params: HnnParams, inputs, c: float, clip_radius=None) -> np.ndarray:
    """Ball embeddings (rows) of ``inputs``."""
    m = _model_for(params, clip_radius)
    with tn.no_record():
        p = m.layout().unpack(Tensor(params.flat()))
        return m.embed_t(p, tn.constant(np.atleast_2d(inputs)), c).numpy()


def mlr_logits(params: HnnParams, points, c: float) -> np.ndarray:
    with tn.no_record():
        return mlr_logits_t(params.mlr_a, params.mlr_b, np.atleast_2d(points), c).numpy()


def loss(params: HnnParams, batch: Batch, c: float, clip_radius=None) -> float:
    m = _model_for(params, clip_radius)
    if batch.n_classes > m.n_classes:
        raise ValueError("batch has more classes than the MLR head")
    with tn.no_record():
        return m.loss_t(Tensor(params.flat()), batch.inputs, batch.labels, c).item()


def euclidean_reference_loss(params: HnnParams, batch: Batch) -> float:
    """Plain-numpy loss of the same weights with all ball operations removed.

    Hidden/bias compose as ``f @ A + b`` and the MLR logit becomes
    ``4 <h - b_k, a_k>``, which is what the hyperbolic model tends to as c -> 0.
    """
    X = batch.inputs
    ext = params.extractor_weights
    f = X
    if ext:
        f = np.tanh(np.tanh(X @ ext[0] + ext[1]) @ ext[2] + ext[3])
    h = f @ params.a + params.b
    z = 4.0 * np.einsum("nkd,kd->nk", h[:, None, :] - params.mlr_b[None], params.mlr_a)
    m = z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z - m).sum(axis=1)) + m[:, 0]
    return float(np.mean(lse - z[np.arange(len(X)), batch.labels]))


# ------------------------------------------------------------ checkpoints

def save_checkpoint(path, params: HnnParams, c: float, extra: dict | None = None) -> None:
    """Write a textual checkpoint: header line then one JSON document."""
    arrays = {k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).reshape(-1).tolist()}
              for k, v in params.as_dict().items()}
    doc = {"arrays": arrays, "curvature": float(c), "extra": extra or {}}
    Path(path).write_text(CKPT_HEADER + "\n" + json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[HnnParams, float, dict]:
    text = Path(path).read_text(encoding="utf-8")
    head, _, body = text.partition("\n")
    if head.strip() != CKPT_HEADER:
        raise CheckpointError(f"{path}: missing {CKPT_HEADER} header")
    try:
        doc = json.loads(body)
        arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["arrays"].items()}
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint body ({exc})") from exc
    return HnnParams.from_dict(arrays), float(doc["curvature"]), doc.get("extra", {})


def flat_to_params(layout: ParamLayout, w) -> HnnParams:
    return HnnParams.from_dict(layout.unpack_np(w))
