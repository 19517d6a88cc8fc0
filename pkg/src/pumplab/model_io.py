"""Versioned JSON model files with a 64-bit content checksum.

Both model kinds share an envelope: format version, model kind, the fixed
feature-name list, a config echo, imputation medians and the checksum of
the canonical body.  Any edit to the payload (including the feature list)
invalidates the checksum and the file refuses to load.
"""

from __future__ import annotations

import hashlib
import json
from typing import Union

import numpy as np

from .errors import ModelError
from .features import FEATURE_NAMES
from .forest import DecisionTree, Forest, RFConfig
from .glm import GlmConfig, GlmModel

FORMAT_VERSION = 1

Model = Union[Forest, GlmModel]


def _checksum(body: dict) -> str:
    canonical = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _floats(arr) -> list[float]:
    return [float(v) for v in np.asarray(arr).ravel()]


def _ints(arr) -> list[int]:
    return [int(v) for v in np.asarray(arr).ravel()]


def serialize_model(model: Model) -> str:
    if isinstance(model, Forest):
        body = {
            "format_version": FORMAT_VERSION,
            "kind": "forest",
            "feature_names": list(model.feature_names),
            "config": {
                "n_true_per_tree": model.config.n_true_per_tree,
                "n_false_per_tree": model.config.n_false_per_tree,
                "n_trees": model.config.n_trees,
                "mtry": model.config.mtry,
                "min_leaf": model.config.min_leaf,
                "max_depth": model.config.max_depth,
                "seed": model.config.seed,
            },
            "imputation_values": _floats(model.imputation_values),
            "impurity_decrease_sums": _floats(model.impurity_decrease_sums),
            "trees": [{
                "feature": _ints(t.feature),
                "threshold": _floats(t.threshold),
                "left": _ints(t.left),
                "right": _ints(t.right),
                "count_true": _floats(t.count_true),
                "count_false": _floats(t.count_false),
            } for t in model.trees],
        }
    elif isinstance(model, GlmModel):
        body = {
            "format_version": FORMAT_VERSION,
            "kind": "lasso_logit",
            "feature_names": list(model.feature_names),
            "config": {
                "lambda": model.config.lam,
                "tolerance": model.config.tolerance,
                "max_iterations": model.config.max_iterations,
                "seed": model.config.seed,
            },
            "imputation_values": _floats(model.imputation_values),
            "intercept": float(model.intercept),
            "coefficients": _floats(model.coefficients),
            "std_intercept": float(model.std_intercept),
            "std_coefficients": _floats(model.std_coefficients),
            "feature_means": _floats(model.feature_means),
            "feature_stds": _floats(model.feature_stds),
            "iterations": model.iterations,
        }
    else:
        raise ModelError(f"cannot serialize {type(model).__name__}")
    envelope = dict(body)
    envelope["checksum"] = _checksum(body)
    return json.dumps(envelope, allow_nan=False) + "\n"


def deserialize_model(text: Union[str, bytes]) -> Model:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        envelope = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file is not valid JSON: {exc}") from None

    stored = envelope.pop("checksum", None)
    if stored is None or stored != _checksum(envelope):
        raise ModelError("model checksum mismatch: file corrupted or edited")
    if envelope.get("format_version") != FORMAT_VERSION:
        raise ModelError(f"unsupported model format version {envelope.get('format_version')!r}")
    if tuple(envelope.get("feature_names", ())) != FEATURE_NAMES:
        raise ModelError("model feature list does not match this package's feature order")

    kind = envelope.get("kind")
    if kind == "forest":
        cfg = RFConfig(**envelope["config"])
        trees = [DecisionTree(
            feature=np.array(t["feature"], dtype=np.int64),
            threshold=np.array(t["threshold"], dtype=np.float64),
            left=np.array(t["left"], dtype=np.int64),
            right=np.array(t["right"], dtype=np.int64),
            count_true=np.array(t["count_true"], dtype=np.float64),
            count_false=np.array(t["count_false"], dtype=np.float64),
        ) for t in envelope["trees"]]
        return Forest(
            trees=trees,
            config=cfg,
            feature_names=FEATURE_NAMES,
            impurity_decrease_sums=np.array(envelope["impurity_decrease_sums"]),
            imputation_values=np.array(envelope["imputation_values"]),
        )
    if kind == "lasso_logit":
        c = envelope["config"]
        cfg = GlmConfig(lam=c["lambda"], tolerance=c["tolerance"],
                        max_iterations=c["max_iterations"], seed=c["seed"])
        return GlmModel(
            intercept=envelope["intercept"],
            coefficients=np.array(envelope["coefficients"]),
            std_intercept=envelope["std_intercept"],
            std_coefficients=np.array(envelope["std_coefficients"]),
            feature_means=np.array(envelope["feature_means"]),
            feature_stds=np.array(envelope["feature_stds"]),
            imputation_values=np.array(envelope["imputation_values"]),
            config=cfg,
            iterations=envelope.get("iterations", 0),
        )
    raise ModelError(f"unknown model kind {kind!r}")
