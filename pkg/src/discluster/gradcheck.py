"""Finite-difference verification of every loss term, for both classifier depths."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import centroids as cb
from . import objectives as obj
from .autodiff import Tensor
from .centroids import CentroidBank
from .model import AdaptationModel, Affine

TOLERANCE = 1e-4

LOSSES = ("entropy_t", "fisher_t", "ordering_t", "cls_s", "fisher_s", "ordering_s",
          "alignment", "overall")


@dataclass
class Scenario:
    model: AdaptationModel
    xs: np.ndarray
    ys: np.ndarray
    xt: np.ndarray
    banks: obj.Banks
    lam: float = 0.7


def make_scenario(two_layer: bool, seed: int = 0, n: int = 6, d: int = 3, K: int = 3) -> Scenario:
    rng = np.random.default_rng(seed)
    model = AdaptationModel.build(d, K, (5,), 4 if two_layer else None, seed=seed)
    xs = rng.normal(size=(n, d))
    ys = np.arange(n) % K
    xt = rng.normal(size=(n + 1, d))
    banks = {}
    dims = {"F": model.feature_dim, "F_up": model.lifted_dim}
    for domain in ("source", "target"):
        for space in model.spaces:
            banks[(domain, space)] = CentroidBank(rng.uniform(0, 1, size=(K, dims[space])),
                                                  np.ones(K, dtype=bool), 0.7)
    return Scenario(model, xs, ys, xt, banks)


def swap_parameter(model: AdaptationModel, name: str, leaf: Tensor) -> AdaptationModel:
    """Shallow copy of ``model`` with one parameter tensor replaced."""
    def layers(ls):
        out = []
        for layer in ls:
            w = leaf if layer.weight.name == name else layer.weight
            b = leaf if layer.bias.name == name else layer.bias
            out.append(Affine(w, b))
        return out
    return replace(model, extractor=layers(model.extractor), classifier=layers(model.classifier))


def loss_term(sc: Scenario, model: AdaptationModel, which: str) -> Tensor:
    """Build one named loss term as a graph over ``model``'s parameters."""
    if which == "overall":
        return obj.total_loss((sc.xs, sc.ys), sc.xt, model, sc.banks, sc.lam).loss
    two = model.two_layer
    domain = "target" if which.endswith("_t") else "source"
    out_s = model.forward(sc.xs)
    out_t = model.forward(sc.xt)
    if which == "entropy_t":
        return obj.afem_loss(out_t.logits, 1.0)
    if which == "cls_s":
        return obj.source_cls_loss(out_s.logits, sc.ys, 1.0)

    def centroids_for(dom, out, labels):
        spaces = {"F": out.features, **({"F_up": out.lifted} if two else {})}
        return {s: cb.update(sc.banks[(dom, s)], f, labels)[1] for s, f in spaces.items()}

    pseudo = cb.assign_pseudo_labels(out_t.logits.value)
    src = centroids_for("source", out_s, sc.ys)
    tgt = centroids_for("target", out_t, pseudo)
    lifted_s = out_s.lifted if two else None
    lifted_t = out_t.lifted if two else None
    if which == "fisher_t":
        return obj.target_fisher_loss(out_t.features, lifted_t, tgt)
    if which == "fisher_s":
        return obj.source_fisher_loss(out_s.features, lifted_s, sc.ys, src)
    if which == "ordering_t":
        return obj.ordering_loss(tgt, model)
    if which == "ordering_s":
        return obj.ordering_loss(src, model)
    if which == "alignment":
        return obj.alignment_term(src, tgt)
    raise KeyError(which)


def check_loss(sc: Scenario, which: str, eps: float = 1e-6, fault: bool = False) -> float:
    """Worst relative error over every parameter tensor of the model."""
    worst = 0.0
    for name, tensor, _ in sc.model.named_parameters():
        def f(leaf, name=name):
            value = loss_term(sc, swap_parameter(sc.model, name, leaf), which)
            if fault:
                # zero-valued term with a non-zero gradient
                total = ad.sum_all(leaf)
                value = ad.add(value, ad.add(total, ad.constant(-total.value)))
            return value
        worst = max(worst, ad.grad_check(f, tensor.value, eps))
    return worst


def run_suite(eps: float = 1e-6, seed: int = 0, fault: bool = False,
              progress: Callable[[str, float], None] | None = None) -> dict[str, float]:
    report = {}
    for two in (False, True):
        sc = make_scenario(two, seed)
        for which in LOSSES:
            key = f"{which}[{'2-layer' if two else '1-layer'}]"
            report[key] = check_loss(sc, which, eps, fault)
            if progress:
                progress(key, report[key])
    return report
