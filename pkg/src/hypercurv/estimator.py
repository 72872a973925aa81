"""scikit-learn compatible wrapper around the hyperbolic classifier."""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted, validate_data

from . import poincare as pc
from . import tensor as tn
from .bilevel import BilevelConfig, run_algorithm1
from .data import Dataset
from .model import HnnModel


class HyperbolicClassifier(ClassifierMixin, BaseEstimator):
    """Hyperbolic network classifier trained with SAM and optional curvature learning.

    With ``learn_curvature=True`` a stratified ``val_split`` fraction of the
    training data drives the curvature updates; otherwise the whole set is
    used for the weights and ``c`` stays at ``c_init``.

    Fitted attributes: ``classes_``, ``curvature_``, ``coef_`` (flat weight
    vector), ``model_``, ``trace_``, ``n_features_in_``.
    """

    def __init__(self, hidden=16, embed=8, hyp_dim=8, c_init=0.1, learn_curvature=True,
                 c_min=1e-6, c_max=1.0, outer_iters=100, T=2, eta=0.05, rho_hat=0.05, J=2, K=1,
                 eta_c=1e-3, val_split=0.2, weight_decay=0.0, clip_radius=1.0, init_scale=1.0,
                 random_state=0):
        self.hidden = hidden
        self.embed = embed
        self.hyp_dim = hyp_dim
        self.c_init = c_init
        self.learn_curvature = learn_curvature
        self.c_min = c_min
        self.c_max = c_max
        self.outer_iters = outer_iters
        self.T = T
        self.eta = eta
        self.rho_hat = rho_hat
        self.J = J
        self.K = K
        self.eta_c = eta_c
        self.val_split = val_split
        self.weight_decay = weight_decay
        self.clip_radius = clip_radius
        self.init_scale = init_scale
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self._le = LabelEncoder().fit(y)
        self.classes_ = self._le.classes_
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        yi = self._le.transform(y)
        seed = 0 if self.random_state is None else int(self.random_state)
        if self.learn_curvature:
            (Xtr, ytr), (Xva, yva) = Dataset(X, yi).split(self.val_split, seed)
        else:
            Xtr, ytr, Xva, yva = X, yi, X, yi
        model = HnnModel(X.shape[1], len(self.classes_), hidden=self.hidden, embed=self.embed,
                         hyp_dim=self.hyp_dim, clip_radius=self.clip_radius)
        cfg = BilevelConfig(T=self.T, outer_iters=self.outer_iters, eta=self.eta, rho_hat=self.rho_hat,
                            J=self.J, K=self.K, eta_c=self.eta_c, c_min=self.c_min, c_max=self.c_max,
                            val_split=self.val_split, learn_curvature=self.learn_curvature)
        w0 = model.init_params(seed, self.init_scale).flat()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            w, state, trace = run_algorithm1(model.make_loss(Xtr, ytr, self.weight_decay),
                                             model.make_loss(Xva, yva), w0, self.c_init, cfg)
        self.model_, self.coef_, self.curvature_, self.trace_ = model, w, state.c, trace
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.model_.logits(self.coef_, X, self.curvature_)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def transform(self, X):
        """Embeddings of ``X`` in the Poincare ball of curvature ``curvature_``."""
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        with tn.no_record():
            p = self.model_.layout().unpack(tn.Tensor(self.coef_))
            return self.model_.embed_t(p, tn.constant(X), self.curvature_).numpy()

    def distances(self, X, Y=None):
        """Pairwise geodesic distances between embeddings."""
        A = self.transform(X)
        B = A if Y is None else self.transform(Y)
        c = self.curvature_
        D = np.empty((len(A), len(B)))
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                D[i, j] = pc.distance(pc.BallPoint(a, c), pc.BallPoint(b, c))
        return D
