"""Versioned JSON persistence for fitted models.

Floats travel through json's default repr (shortest decimal that round-trips,
never more than 17 significant digits), so save -> load -> evaluate is
bit-exact.
"""

from __future__ import annotations

import json

import numpy as np

from .kernel import KernelSpec, QuadratureRule
from .meanfit import FittedFunction
from .autocov import EigenSystem
from .crosscov import FittedSurface, SingularSystem
from .regression import CoefficientSurface, ModelBundle

FORMAT_NAME = "sparsefun-model"
FORMAT_VERSION = 1


def _spec_to_json(spec: KernelSpec) -> dict:
    return {"order": spec.order, "domain": [spec.domain[0], spec.domain[1]]}


def _spec_from_json(obj) -> KernelSpec:
    return KernelSpec(order=int(obj["order"]), domain=(float(obj["domain"][0]),
                                                       float(obj["domain"][1])))


def _vec(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _mat(a) -> list:
    return [_vec(row) for row in np.asarray(a, dtype=float)]


def _function_to_json(f: FittedFunction) -> dict:
    return {"anchors": _vec(f.anchors), "coeffs": _vec(f.coeffs)}


def _function_from_json(obj, spec: KernelSpec) -> FittedFunction:
    return FittedFunction(anchors=np.array(obj["anchors"], dtype=float),
                          coeffs=np.array(obj["coeffs"], dtype=float), spec=spec)


def _eigen_to_json(e: EigenSystem) -> dict:
    return {"eigenvalues": _vec(e.eigenvalues),
            "functions": [_function_to_json(f) for f in e.eigenfunctions]}


def _eigen_from_json(obj, spec: KernelSpec) -> EigenSystem:
    return EigenSystem(eigenvalues=np.array(obj["eigenvalues"], dtype=float),
                       eigenfunctions=[_function_from_json(f, spec) for f in obj["functions"]])


def model_to_json(model: ModelBundle, provenance: dict | None = None) -> str:
    """Serialize a fitted model. provenance (flags, seed, tool version) is
    stored verbatim under "provenance"."""
    beta_terms = []
    # beta terms reference eigenfunctions by family index; weights carried as is
    for w, x_fun, y_fun in model.beta.terms:
        l_index = next((i for i, f in enumerate(model.eigen_x.eigenfunctions) if f is x_fun), None)
        k_index = next((i for i, f in enumerate(model.eigen_y.eigenfunctions) if f is y_fun), None)
        if l_index is None or k_index is None:
            raise ValueError("beta terms must reference the bundle's own eigenfunctions")
        beta_terms.append({"weight": float(w), "l": l_index, "k": k_index})
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "spec_x": _spec_to_json(model.spec_x),
        "spec_y": _spec_to_json(model.spec_y),
        "quadrature": {"nodes": _vec(model.rule.nodes), "weights": _vec(model.rule.weights)},
        "lambdas": {k: float(v) for k, v in model.lambdas.items()},
        "mu_x": _function_to_json(model.mu_x),
        "mu_y": _function_to_json(model.mu_y),
        "eigen_x": _eigen_to_json(model.eigen_x),
        "eigen_y": _eigen_to_json(model.eigen_y),
        "crosscov": {
            "s_anchors": _vec(model.crosscov.s_anchors),
            "t_anchors": _vec(model.crosscov.t_anchors),
            "a": _mat(model.crosscov.a),
            "s_blocks": [list(b) for b in model.crosscov.s_blocks],
            "t_blocks": [list(b) for b in model.crosscov.t_blocks],
        },
        "singular": {
            "sigma2": _vec(model.singular.sigma2),
            "psi": [_function_to_json(f) for f in model.singular.psi],
            "phi": [_function_to_json(f) for f in model.singular.phi],
        },
        "beta": {"j1": model.beta.j1, "j2": model.beta.j2, "terms": beta_terms},
        "provenance": provenance or {},
    }
    return json.dumps(doc, indent=1)


def model_from_json(text: str) -> ModelBundle:
    """Inverse of model_to_json. Rejects unknown formats or versions."""
    doc = json.loads(text)
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} file (format={doc.get('format')!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {doc.get('version')!r}")
    spec_x = _spec_from_json(doc["spec_x"])
    spec_y = _spec_from_json(doc["spec_y"])
    rule = QuadratureRule(nodes=np.array(doc["quadrature"]["nodes"], dtype=float),
                          weights=np.array(doc["quadrature"]["weights"], dtype=float))
    eigen_x = _eigen_from_json(doc["eigen_x"], spec_x)
    eigen_y = _eigen_from_json(doc["eigen_y"], spec_y)
    cc = doc["crosscov"]
    crosscov = FittedSurface(
        s_anchors=np.array(cc["s_anchors"], dtype=float),
        t_anchors=np.array(cc["t_anchors"], dtype=float),
        a=np.array(cc["a"], dtype=float),
        spec_x=spec_x, spec_y=spec_y,
        s_blocks=tuple(tuple(b) for b in cc["s_blocks"]),
        t_blocks=tuple(tuple(b) for b in cc["t_blocks"]))
    sg = doc["singular"]
    singular = SingularSystem(
        sigma2=np.array(sg["sigma2"], dtype=float),
        psi=[_function_from_json(f, spec_x) for f in sg["psi"]],
        phi=[_function_from_json(f, spec_y) for f in sg["phi"]])
    bt = doc["beta"]
    terms = tuple((float(term["weight"]),
                   eigen_x.eigenfunctions[term["l"]],
                   eigen_y.eigenfunctions[term["k"]]) for term in bt["terms"])
    beta = CoefficientSurface(terms=terms, j1=int(bt["j1"]), j2=int(bt["j2"]))
    return ModelBundle(mu_x=_function_from_json(doc["mu_x"], spec_x),
                       mu_y=_function_from_json(doc["mu_y"], spec_y),
                       eigen_x=eigen_x, eigen_y=eigen_y,
                       crosscov=crosscov, singular=singular, beta=beta,
                       lambdas={k: float(v) for k, v in doc["lambdas"].items()},
                       spec_x=spec_x, spec_y=spec_y, rule=rule)


def load_provenance(text: str) -> dict:
    return json.loads(text).get("provenance", {})
