"""JSON persistence for models.

One structured-text document per model, with explicit shape fields and
row-major flattened arrays.  Format tags:

* ``rnade-ncwfa/1``  -- RnadeNcwfa (either head, either feature map)
* ``gaussian-hmm/1`` -- GaussianHmm (used as ground truth / EM baseline)
"""

import json

import numpy as np

from .ghmm import GaussianHmm
from .model import (
    ConstantFeatureMap,
    MixtureDensityHead,
    RnadeNcwfa,
    StateWeightedGaussianHead,
    TanhFeatureMap,
)
from .prob_core import DiagGaussian, FullGaussian

NCWFA_FORMAT = "rnade-ncwfa/1"
HMM_FORMAT = "gaussian-hmm/1"


def _pack(arr):
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _unpack(doc):
    return np.array(doc["data"], dtype=float).reshape(doc["shape"])


def _pack_gaussian(g):
    if isinstance(g, DiagGaussian):
        return {"kind": "diag", "mean": _pack(g.mean), "var": _pack(g.var)}
    return {"kind": "full", "mean": _pack(g.mean), "cov": _pack(g.cov)}


def _unpack_gaussian(doc):
    if doc["kind"] == "diag":
        return DiagGaussian(_unpack(doc["mean"]), _unpack(doc["var"]))
    return FullGaussian(_unpack(doc["mean"]), _unpack(doc["cov"]))


def model_to_dict(model: RnadeNcwfa) -> dict:
    if isinstance(model.feature_map, TanhFeatureMap):
        fmap = {"kind": "tanh", "W": _pack(model.feature_map.W)}
    else:
        fmap = {
            "kind": "constant",
            "value": _pack(model.feature_map.value),
            "in_dim": model.feature_map.in_dim,
        }
    head = model.head
    if isinstance(head, MixtureDensityHead):
        head_doc = {
            "kind": "mixture_density",
            "V_beta": _pack(head.V_beta),
            "b_beta": _pack(head.b_beta),
            "V_mu": _pack(head.V_mu),
            "B_mu": _pack(head.B_mu),
            "V_sigma": _pack(head.V_sigma),
            "B_sigma": _pack(head.B_sigma),
        }
    else:
        head_doc = {
            "kind": "state_weighted",
            "components": [_pack_gaussian(g) for g in head.components],
        }
    doc = {
        "format": NCWFA_FORMAT,
        "states": model.n_states,
        "alpha": _pack(model.alpha),
        "A": _pack(model.A),
        "feature_map": fmap,
        "head": head_doc,
    }
    if model.out_map is not None:
        doc["out_map"] = _pack(model.out_map)
    return doc


def model_from_dict(doc: dict) -> RnadeNcwfa:
    if doc.get("format") != NCWFA_FORMAT:
        raise ValueError(f"not a {NCWFA_FORMAT} document")
    fdoc = doc["feature_map"]
    if fdoc["kind"] == "tanh":
        fmap = TanhFeatureMap(_unpack(fdoc["W"]))
    elif fdoc["kind"] == "constant":
        fmap = ConstantFeatureMap(_unpack(fdoc["value"]), in_dim=fdoc.get("in_dim"))
    else:
        raise ValueError(f"unknown feature map kind {fdoc['kind']!r}")
    hdoc = doc["head"]
    if hdoc["kind"] == "mixture_density":
        head = MixtureDensityHead(
            V_beta=_unpack(hdoc["V_beta"]),
            b_beta=_unpack(hdoc["b_beta"]),
            V_mu=_unpack(hdoc["V_mu"]),
            B_mu=_unpack(hdoc["B_mu"]),
            V_sigma=_unpack(hdoc["V_sigma"]),
            B_sigma=_unpack(hdoc["B_sigma"]),
        )
    elif hdoc["kind"] == "state_weighted":
        head = StateWeightedGaussianHead(
            tuple(_unpack_gaussian(g) for g in hdoc["components"])
        )
    else:
        raise ValueError(f"unknown head kind {hdoc['kind']!r}")
    out_map = _unpack(doc["out_map"]) if "out_map" in doc else None
    return RnadeNcwfa(
        alpha=_unpack(doc["alpha"]),
        A=_unpack(doc["A"]),
        feature_map=fmap,
        head=head,
        out_map=out_map,
    )


def hmm_to_dict(hmm: GaussianHmm) -> dict:
    return {
        "format": HMM_FORMAT,
        "states": hmm.n_states,
        "init": _pack(hmm.init),
        "trans": _pack(hmm.trans),
        "emissions": [_pack_gaussian(g) for g in hmm.emissions],
    }


def hmm_from_dict(doc: dict) -> GaussianHmm:
    if doc.get("format") != HMM_FORMAT:
        raise ValueError(f"not a {HMM_FORMAT} document")
    return GaussianHmm(
        _unpack(doc["init"]),
        _unpack(doc["trans"]),
        tuple(_unpack_gaussian(g) for g in doc["emissions"]),
    )


def save_model(model, path):
    """Write an RnadeNcwfa or GaussianHmm to a JSON file."""
    if isinstance(model, RnadeNcwfa):
        doc = model_to_dict(model)
    elif isinstance(model, GaussianHmm):
        doc = hmm_to_dict(model)
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path):
    """Read a model file; dispatches on its format tag."""
    with open(path) as fh:
        doc = json.load(fh)
    fmt = doc.get("format")
    if fmt == NCWFA_FORMAT:
        return model_from_dict(doc)
    if fmt == HMM_FORMAT:
        return hmm_from_dict(doc)
    raise ValueError(f"unknown model format {fmt!r}")
