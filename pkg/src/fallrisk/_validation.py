"""Input checks shared by the scikit-learn style estimators."""

import numpy as np
from sklearn.utils.multiclass import type_of_target
from sklearn.utils.validation import check_array, check_X_y


def check_fit_data(X, y):
    """Validate a feature matrix and a binary target.

    Returns ``(X, y01, classes)`` with ``y01`` coded 0/1 against the sorted
    ``classes``.
    """
    X, y = check_X_y(X, y, dtype=float, ensure_all_finite=True)
    if type_of_target(y) != "binary":
        raise ValueError("target must be binary")
    classes, y01 = np.unique(y, return_inverse=True)
    return X, y01.astype(float), classes


def check_predict_data(X, n_features):
    X = check_array(X, dtype=float, ensure_all_finite=True)
    if X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_groups(groups, n_samples):
    groups = np.asarray(groups)
    if groups.ndim != 1 or groups.shape[0] != n_samples:
        raise ValueError("groups must be one label per sample")
    return groups
