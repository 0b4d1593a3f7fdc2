"""Generalized Gini welfare, its sorted-weight subgradient and balance metrics."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import ContractError


def _as_vector(u, name="u"):
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ContractError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite components")
    return arr


def check_gini_weights(w):
    """Validate a weight vector: positive, strictly decreasing, non-empty."""
    w = _as_vector(w, "w")
    if np.any(w <= 0):
        raise ContractError("Gini weights must be strictly positive")
    if np.any(np.diff(w) >= 0):
        raise ContractError("Gini weights must be strictly decreasing")
    return w


def _check_pair(u, w):
    u = _as_vector(u)
    w = check_gini_weights(w)
    if u.shape != w.shape:
        raise ContractError(f"dimension mismatch: len(u)={u.size}, len(w)={w.size}")
    return u, w


def default_gini_weights(n_objectives):
    """Return ``[1, 1/2, ..., 1/2**(K-1)]``."""
    if int(n_objectives) != n_objectives or n_objectives < 1:
        raise ContractError(f"n_objectives must be a positive integer, got {n_objectives!r}")
    return 0.5 ** np.arange(int(n_objectives), dtype=np.float64)


def ggf(u, w):
    """Generalized Gini welfare: weights applied to the ascending-sorted utilities.

    The largest weight multiplies the smallest utility, so any transfer from a
    better-off objective to a worse-off one cannot lower the score.
    """
    u, w = _check_pair(u, w)
    return float(np.dot(w, np.sort(u, kind="stable")))


def sorted_weight_vector(u, w):
    """Permute ``w`` so that the i-th smallest utility receives the i-th largest weight.

    Among tied utilities the lower objective index gets the larger weight. The
    result is the gradient of :func:`ggf` wherever the components are distinct,
    and a valid supergradient at ties.
    """
    u, w = _check_pair(u, w)
    order = np.argsort(u, kind="stable")
    w_sigma = np.empty_like(w)
    w_sigma[order] = w
    return w_sigma


def coefficient_of_variation(u):
    """Population standard deviation over the absolute mean."""
    u = _as_vector(u)
    mean = u.mean()
    if mean == 0:
        raise ZeroDivisionError("coefficient of variation is undefined for zero mean")
    return float(u.std() / abs(mean))


def min_max_utilities(u):
    u = _as_vector(u)
    return float(u.min()), float(u.max())


class GiniWelfare(TransformerMixin, BaseEstimator):
    """Row-wise welfare scorer for a matrix of utility vectors.

    ``transform`` maps an ``(n, K)`` array of utilities to an ``(n, 1)`` column
    of welfare values; ``fit`` only resolves the weights so the scorer can sit
    inside a pipeline after anything that emits per-objective returns.

    Parameters
    ----------
    weights : array-like of shape (K,), default=None
        Strictly decreasing positive weights. ``None`` uses halving weights.
    """

    def __init__(self, weights=None):
        self.weights = weights

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.weights is None:
            self.weights_ = default_gini_weights(X.shape[1])
        else:
            self.weights_ = check_gini_weights(self.weights)
        if self.weights_.size != X.shape[1]:
            raise ContractError(
                f"dimension mismatch: {X.shape[1]} objectives, {self.weights_.size} weights"
            )
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} objectives, got {X.shape[1]}")
        return (np.sort(X, axis=1, kind="stable") @ self.weights_)[:, None]

    def score(self, X, y=None):
        """Welfare of the column-mean utility vector."""
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        return ggf(X.mean(axis=0), self.weights_)
