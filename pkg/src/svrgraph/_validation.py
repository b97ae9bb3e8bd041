"""Input validation shared by the estimators and the command line."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .tensorio import ModelSpec, WeightStore


def check_probability(p, name: str = "p") -> float:
    if not isinstance(p, numbers.Real) or not 0.0 < float(p) < 1.0:
        raise ValueError(f"{name} must lie in the open interval (0, 1), got {p!r}")
    return float(p)


def check_weights(weights) -> list[np.ndarray]:
    """Finite float64 copies of a list of 2-D (fc) or 4-D (conv) weight tensors."""
    if isinstance(weights, np.ndarray):
        weights = [weights]
    out = []
    for k, w in enumerate(weights):
        w = check_array(np.asarray(w), ensure_2d=False, allow_nd=True, dtype=np.float64)
        if w.ndim not in (2, 4):
            raise ValueError(f"weight {k} must be 2-D (fc) or 4-D (conv), got {w.ndim}-D")
        out.append(w)
    if not out:
        raise ValueError("need at least one weight tensor")
    return out


def check_model(model) -> tuple[ModelSpec, WeightStore]:
    """Accept ``(ModelSpec, WeightStore)`` or a plain list of weight tensors."""
    from .spectra import spec_from_weights

    if isinstance(model, tuple) and len(model) == 2 and isinstance(model[0], ModelSpec):
        return model
    weights = check_weights(model)
    spec = spec_from_weights(weights)
    return spec, WeightStore({layer.name: w for layer, w in zip(spec.layers, weights)})


def check_inputs(X, spec: ModelSpec) -> np.ndarray:
    """Batch of model inputs: (n, features) for fc-first models, (n, C, H, W) for conv-first."""
    first = spec.layers[0]
    if first.kind == "conv":
        X = check_array(np.asarray(X), allow_nd=True, dtype=np.float64)
        if X.ndim != 4 or X.shape[1] != first.in_dim:
            raise ValueError(f"expected inputs of shape (n, {first.in_dim}, H, W), got {X.shape}")
        return X
    X = np.asarray(X, dtype=np.float64)
    X = check_array(X.reshape(X.shape[0], -1) if X.ndim > 2 else X, dtype=np.float64)
    if X.shape[1] != first.in_dim:
        raise ValueError(f"expected {first.in_dim} input features, got {X.shape[1]}")
    return X
