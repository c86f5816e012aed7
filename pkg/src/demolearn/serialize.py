"""Deterministic, versioned JSON serialization for models and datasets.

Writers emit floats as 17-significant-digit decimals, which round-trip
bit-exactly through float64, so a reloaded model is byte-for-byte
reproducible when re-saved.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import DataError, UsageError
from .mlp import LayerParams, NetworkParams

FORMAT_VERSION = 1


def format_float(x: float) -> str:
    if not np.isfinite(x):
        raise DataError(f"refusing to serialize non-finite value {x}")
    return format(float(x), ".17g")


def dumps(obj: Any) -> str:
    """JSON text with %.17g floats and stable key order (insertion order)."""
    out: list[str] = []
    _write(obj, out)
    return "".join(out)


def _write(obj: Any, out: list[str]) -> None:
    if isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            if not isinstance(k, str):
                raise UsageError("JSON object keys must be strings")
            out.append(json.dumps(k))
            out.append(":")
            _write(v, out)
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            _write(v, out)
        out.append("]")
    elif isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, np.ndarray):
        _write(obj.tolist(), out)
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise UsageError(f"cannot serialize {type(obj).__name__}")


def dump_path(obj: Any, path: str | Path) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def load_path(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def network_to_dict(params: NetworkParams) -> dict:
    """Versioned document: dims, activations, head, row-major weights."""
    dims = [params.input_dim] + [l.weights.shape[0] for l in params.layers]
    return {
        "format_version": FORMAT_VERSION,
        "layer_dims": dims,
        "activations": [l.activation for l in params.layers],
        "head": params.output_head,
        "weights": [l.weights.ravel().tolist() for l in params.layers],
        "biases": [l.biases.tolist() for l in params.layers],
    }


def network_from_dict(doc: dict) -> NetworkParams:
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported network format_version {doc.get('format_version')!r}")
    dims = doc["layer_dims"]
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims, dims[1:])):
        w = np.asarray(doc["weights"][i], dtype=np.float64).reshape(n_out, n_in)
        b = np.asarray(doc["biases"][i], dtype=np.float64)
        layers.append(LayerParams(w, b, doc["activations"][i]))
    return NetworkParams(layers, doc["head"])


def embeddings_to_dict(table: dict[str, np.ndarray]) -> dict:
    return {key: np.asarray(vec, dtype=np.float64).tolist() for key, vec in sorted(table.items())}


def embeddings_from_dict(doc: dict) -> dict[str, np.ndarray]:
    return {key: np.asarray(vec, dtype=np.float64) for key, vec in doc.items()}


def save_model(path: str | Path, doc: dict) -> None:
    """Write a model document (must already carry kind/format_version)."""
    if "kind" not in doc:
        raise UsageError("model document needs a 'kind' tag")
    doc = {"format_version": FORMAT_VERSION, **doc}
    dump_path(doc, path)


def load_model(path: str | Path) -> dict:
    doc = load_path(path)
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format_version {doc.get('format_version')!r}")
    return doc
