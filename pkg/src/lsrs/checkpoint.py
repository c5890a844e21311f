"""Plain-text model checkpoints.

A checkpoint is one JSON document (sorted keys, fixed separators). Arrays are
stored as base64 of their little-endian float64 bytes, so weights round-trip
bit-exactly and save -> load -> save reproduces the same file.
"""

import base64
import json

import numpy as np

from lsrs.layers import LAYER_KINDS, ConvexResidual, VanillaResidual
from lsrs.network import SplitNetwork

FORMAT = "lsrs-checkpoint"
VERSION = 1


def _encode(a):
    a = np.asarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def layer_state(layer):
    state = {
        "kind": layer.kind,
        "config": layer.config(),
        "params": {k: _encode(v) for k, v in layer.params.items()},
    }
    if layer.children():
        state["main"] = [layer_state(child) for child in layer.children()]
    return state


def layer_from_state(state):
    kind = state["kind"]
    if kind not in LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    params = {k: _decode(v) for k, v in state["params"].items()}
    cls = LAYER_KINDS[kind]
    if cls in (ConvexResidual, VanillaResidual):
        main = [layer_from_state(s) for s in state["main"]]
        layer = cls(main)
    else:
        layer = cls(**state["config"])
    for name, value in params.items():
        if name not in layer.params:
            raise ValueError(f"{kind}: unexpected parameter {name!r}")
        if layer.params[name].shape != value.shape:
            raise ValueError(f"{kind}.{name}: shape {value.shape} != {layer.params[name].shape}")
        layer.params[name] = value
    return layer


def dumps(net: SplitNetwork) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "split_index": net.split_index,
        "n_classes": net.n_classes,
        "input_shape": list(net.input_shape),
        "for_fraction": list(net.for_fraction),
        "layers": [layer_state(layer) for layer in net.layers],
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def loads(text: str) -> SplitNetwork:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise ValueError("not an lsrs checkpoint")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    layers = [layer_from_state(s) for s in doc["layers"]]
    return SplitNetwork(layers, doc["split_index"], doc["n_classes"], doc["input_shape"],
                        doc["for_fraction"])


def save(net, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(dumps(net))


def load(path):
    with open(path, encoding="ascii") as fh:
        return loads(fh.read())
