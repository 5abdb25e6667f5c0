"""Binary classifiers: Gaussian naive Bayes, random forest, feed-forward network.

All three follow the scikit-learn estimator protocol (``fit`` /
``predict_proba`` / ``predict``, ``get_params`` / ``set_params``) and predict
the vulnerable class (label 1) when its probability is strictly above 0.5.

Training rows are put in a canonical order before fitting, so a fit depends
only on the multiset of rows and the seed, never on input row order.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

THRESHOLD = 0.5
LEARNER_KINDS = ("nb", "rf", "mlp")
TECHNIQUE_NAMES = {"nb": "NB", "rf": "RF", "mlp": "NN"}


def classify(p):
    """Vulnerable (1) iff ``p`` is strictly greater than 0.5."""
    return (np.asarray(p) > THRESHOLD).astype(int) if np.ndim(p) else int(p > THRESHOLD)


def _check_training(X, y):
    X, y = check_X_y(X, y, dtype=np.float64, ensure_all_finite=True)
    labels = set(np.unique(y).tolist())
    if not labels <= {0, 1}:
        raise ValueError(f"labels must be 0/1, got {sorted(labels)}")
    if len(labels) < 2:
        raise ValueError("training data must contain both labels")
    y = y.astype(np.int64)
    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    return X[order], y[order]


class _BinaryClassifier(ClassifierMixin, BaseEstimator):
    def predict(self, X):
        return classify(self.predict_proba(X)[:, 1])

    def _validate_predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X


class GaussianNaiveBayes(_BinaryClassifier):
    """Per-class independent Gaussians with class-frequency priors.

    Each variance gets ``var_floor * (training variance of that feature + 1e-12)``
    added, so constant features do not produce zero variances.
    """

    def __init__(self, var_floor=1e-9):
        self.var_floor = var_floor

    def fit(self, X, y):
        X, y = _check_training(X, y)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        eps = self.var_floor * (X.var(axis=0) + 1e-12)
        self.theta_ = np.array([X[y == c].mean(axis=0) for c in (0, 1)])
        self.var_ = np.array([X[y == c].var(axis=0) for c in (0, 1)]) + eps
        self.class_prior_ = np.array([np.mean(y == c) for c in (0, 1)])
        return self

    def joint_log_likelihood(self, X):
        X = self._validate_predict(X)
        jll = np.empty((X.shape[0], 2))
        for c in (0, 1):
            ll = -0.5 * np.sum(np.log(2 * np.pi * self.var_[c]))
            ll = ll - 0.5 * np.sum((X - self.theta_[c]) ** 2 / self.var_[c], axis=1)
            jll[:, c] = np.log(self.class_prior_[c]) + ll
        return jll

    def predict_proba(self, X):
        jll = self.joint_log_likelihood(X)
        top = jll.max(axis=1, keepdims=True)
        p = np.exp(jll - top)
        return p / p.sum(axis=1, keepdims=True)


@njit(cache=True)
def _gini_split(Xn, yn, feature, min_leaf):
    n = Xn.shape[0]
    order = np.argsort(Xn[:, feature], kind="mergesort")
    vals = Xn[order, feature]
    ys = yn[order]
    total_pos = ys.sum()
    best = np.inf
    thr = 0.0
    pos_left = 0
    for k in range(n - 1):
        pos_left += ys[k]
        if vals[k] == vals[k + 1]:
            continue
        nl = k + 1
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        pl = pos_left / nl
        pr = (total_pos - pos_left) / nr
        cost = nl * 2.0 * pl * (1.0 - pl) + nr * 2.0 * pr * (1.0 - pr)
        if cost < best:
            best = cost
            thr = (vals[k] + vals[k + 1]) / 2.0
            # midpoint can round onto the upper value for adjacent floats
            if thr >= vals[k + 1]:
                thr = vals[k]
    return best, thr


@njit(cache=True)
def _grow_tree(X, y, idx, max_features, min_leaf, max_depth, seed):
    """Grow one Gini tree on rows ``idx``; returns flat node arrays.

    Node k is a leaf when ``feature[k] == -1``; ``value[k]`` is its positive
    fraction. Rows go left when ``x[feature] <= threshold``.
    """
    np.random.seed(seed)
    n_features = X.shape[1]
    cap = 2 * idx.shape[0] + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    stack_rows = [idx]
    stack_node = [0]
    stack_depth = [0]
    n_nodes = 1
    while len(stack_rows) > 0:
        rows = stack_rows.pop()
        node = stack_node.pop()
        depth = stack_depth.pop()
        yn = y[rows]
        pos = yn.sum()
        value[node] = pos / rows.shape[0]
        if pos == 0 or pos == rows.shape[0] or rows.shape[0] < 2 * min_leaf:
            continue
        if max_depth >= 0 and depth >= max_depth:
            continue
        Xn = X[rows]
        perm = np.random.permutation(n_features)
        best = np.inf
        best_f = -1
        best_t = 0.0
        for r in range(n_features):
            # draw past max_features only while no valid split has been found
            if r >= max_features and best_f >= 0:
                break
            cost, t = _gini_split(Xn, yn, perm[r], min_leaf)
            if cost < best:
                best = cost
                best_f = perm[r]
                best_t = t
        if best_f < 0:
            continue
        go_left = Xn[:, best_f] <= best_t
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_rows.append(rows[~go_left])
        stack_node.append(n_nodes + 1)
        stack_depth.append(depth + 1)
        stack_rows.append(rows[go_left])
        stack_node.append(n_nodes)
        stack_depth.append(depth + 1)
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def _tree_apply(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        k = 0
        while feature[k] >= 0:
            k = left[k] if X[r, feature[k]] <= threshold[k] else right[k]
        out[r] = value[k]
    return out


class DecisionTree:
    """A fitted tree as flat node arrays."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value

    @property
    def node_count(self):
        return len(self.feature)

    def predict_value(self, X):
        return _tree_apply(X, self.feature, self.threshold, self.left, self.right, self.value)

    def vote(self, X):
        return classify(self.predict_value(X))


class RandomForest(_BinaryClassifier):
    """Bagged Gini trees; probability is the fraction of trees voting vulnerable.

    ``max_features`` features are tried per split (more only if none of them
    admits a split). ``max_depth=None`` grows until leaves are pure.
    """

    def __init__(self, n_estimators=100, max_features=3, min_samples_leaf=1, max_depth=None, random_state=0):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.min_samples_leaf = min_samples_leaf
        self.max_depth = max_depth
        self.random_state = random_state

    def fit(self, X, y):
        if self.n_estimators < 1 or self.max_features < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_estimators, max_features and min_samples_leaf must be >= 1")
        X, y = _check_training(X, y)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        rng = np.random.default_rng(self.random_state)
        n = X.shape[0]
        depth = -1 if self.max_depth is None else int(self.max_depth)
        max_features = min(int(self.max_features), X.shape[1])
        self.estimators_ = []
        for _ in range(self.n_estimators):
            sample = rng.integers(0, n, size=n)
            tree_seed = int(rng.integers(0, 2**31 - 1))
            arrays = _grow_tree(X, y, sample, max_features, int(self.min_samples_leaf), depth, tree_seed)
            self.estimators_.append(DecisionTree(*arrays))
        return self

    def predict_proba(self, X):
        X = self._validate_predict(X)
        votes = np.zeros(X.shape[0])
        for tree in self.estimators_:
            votes += tree.vote(X)
        p1 = votes / len(self.estimators_)
        return np.column_stack([1 - p1, p1])


def _sigmoid(z):
    return np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))


class FeedForwardNetwork(_BinaryClassifier):
    """One tanh hidden layer, sigmoid output, mean cross-entropy loss.

    Trained by full-batch gradient descent on standardized features; the
    standardization statistics are kept on the fitted model.
    """

    def __init__(self, hidden=8, epochs=500, learning_rate=0.1, init_scale=0.5, random_state=0):
        self.hidden = hidden
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.init_scale = init_scale
        self.random_state = random_state

    def _unpack(self, theta, d):
        h = self.hidden
        w1 = theta[: d * h].reshape(d, h)
        b1 = theta[d * h: d * h + h]
        w2 = theta[d * h + h: d * h + 2 * h]
        b2 = theta[d * h + 2 * h]
        return w1, b1, w2, b2

    def n_params(self, d):
        return d * self.hidden + 2 * self.hidden + 1

    def loss_and_grad(self, theta, X, y):
        """Mean cross-entropy and its gradient w.r.t. the flat parameter vector."""
        n, d = X.shape
        w1, b1, w2, b2 = self._unpack(theta, d)
        a = np.tanh(X @ w1 + b1)
        z = a @ w2 + b2
        # log(1 + e^z) - y z, stable for large |z|
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        dz = (_sigmoid(z) - y) / n
        dw2 = a.T @ dz
        db2 = dz.sum()
        da = np.outer(dz, w2) * (1 - a ** 2)
        dw1 = X.T @ da
        db1 = da.sum(axis=0)
        return loss, np.concatenate([dw1.ravel(), db1, dw2, [db2]])

    def fit(self, X, y):
        X, y = _check_training(X, y)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        Xs = (X - self.mean_) / self.scale_
        rng = np.random.default_rng(self.random_state)
        theta = rng.uniform(-self.init_scale, self.init_scale, self.n_params(X.shape[1]))
        yf = y.astype(float)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            loss, grad = self.loss_and_grad(theta, Xs, yf)
            self.loss_curve_.append(float(loss))
            theta = theta - self.learning_rate * grad
        self.coef_ = theta
        return self

    def predict_proba(self, X):
        X = self._validate_predict(X)
        w1, b1, w2, b2 = self._unpack(self.coef_, self.n_features_in_)
        z = np.tanh(((X - self.mean_) / self.scale_) @ w1 + b1) @ w2 + b2
        p1 = _sigmoid(z)
        return np.column_stack([1 - p1, p1])


def make_learner(kind, seed=0, trees=100, hidden=8, epochs=500, lr=0.1, max_features=3):
    """Learner for ``kind`` in nb/rf/mlp with the documented defaults."""
    if kind == "nb":
        return GaussianNaiveBayes()
    if kind == "rf":
        return RandomForest(n_estimators=trees, max_features=max_features, random_state=seed)
    if kind == "mlp":
        return FeedForwardNetwork(hidden=hidden, epochs=epochs, learning_rate=lr, random_state=seed)
    raise ValueError(f"unknown learner kind {kind!r}; expected one of {', '.join(LEARNER_KINDS)}")


def default_max_features(n_features):
    return math.ceil(math.sqrt(n_features))
