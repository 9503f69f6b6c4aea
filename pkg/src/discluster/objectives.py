"""Clustering, distilling and combined training objectives."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import centroids as cb
from .autodiff import Tensor
from .centroids import CentroidBank
from .errors import ConfigError, ContractError, ParameterError
from .model import AdaptationModel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Temperatures:
    entropy: float = 1.0
    within: float = 1.0
    between: float = 2.0
    ordering: float = 2.0
    cls: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ParameterError(f"temperature {f.name} must be positive")

    def flattened(self) -> "Temperatures":
        return Temperatures(1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class Variant:
    """Switches selecting which loss terms make up the objective."""

    clustering: bool = True
    distilling: bool = True
    entropy: bool = True
    afem: bool = True
    fisher: bool = True
    ordering: bool = True
    source_fisher: bool = True
    source_ordering: bool = True
    temperature: bool = True
    explicit_alignment: bool = False

    def validate(self) -> "Variant":
        if not self.clustering and not self.distilling:
            raise ConfigError("variant removes both the clustering and the distilling objective")
        if self.explicit_alignment and not (self.clustering and self.distilling):
            raise ConfigError("explicit alignment needs both source and target centroids")
        return self

    @property
    def uses_source_banks(self) -> bool:
        return self.distilling and (
            (self.fisher and self.source_fisher) or (self.ordering and self.source_ordering)
            or self.explicit_alignment)

    @property
    def uses_target_banks(self) -> bool:
        return self.clustering and (self.fisher or self.ordering or self.explicit_alignment)


VARIANTS: dict[str, Variant] = {
    "source_only": Variant(clustering=False, fisher=False, ordering=False),
    "em": Variant(afem=False),
    "no_fisher_ordering": Variant(fisher=False, ordering=False),
    "no_fisher": Variant(fisher=False),
    "no_distilling": Variant(distilling=False),
    "no_source_ordering": Variant(source_ordering=False),
    "no_source_fisher": Variant(source_fisher=False),
    "no_temperature": Variant(temperature=False),
    "explicit_alignment": Variant(explicit_alignment=True),
    "full": Variant(),
}


@dataclass
class LossBreakdown:
    entropy_t: float = 0.0
    fisher_t: float = 0.0
    ordering_t: float = 0.0
    cls_s: float = 0.0
    fisher_s: float = 0.0
    ordering_s: float = 0.0
    alignment: float = 0.0
    clustering_total: float = 0.0
    distilling_total: float = 0.0
    overall: float = 0.0
    lambda_used: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


# ------------------------------------------------------------ numeric pieces

def entropy(p) -> float:
    """Shannon entropy (nats) of one probability vector, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ContractError("entropy: input is not a probability vector")
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def log_softmax(z: Tensor, T: float = 1.0) -> Tensor:
    if not T > 0:
        raise ParameterError(f"temperature must be positive, got {T}")
    s = ad.scale(z, 1.0 / T)
    shifted = ad.sub_col(s, ad.constant(s.value.max(axis=1, keepdims=True)))
    lse = ad.log(ad.sum_rows(ad.exp(shifted)))
    return ad.sub_col(shifted, lse)


def row_entropy(z: Tensor, T: float = 1.0) -> Tensor:
    """Entropy of softmax_T of each row, as an Nx1 column."""
    logp = log_softmax(z, T)
    return ad.neg(ad.sum_rows(ad.mul(ad.exp(logp), logp)))


def filtered_entropy(z: Tensor, T: float = 1.0, adaptive: bool = True) -> Tensor:
    """Mean over rows of exp(-H)*H (adaptive) or plain H."""
    H = row_entropy(z, T)
    per_row = ad.mul(ad.exp(ad.neg(H)), H) if adaptive else H
    return ad.mean_rows(per_row)


def cross_entropy(z: Tensor, labels, T: float = 1.0) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ContractError(f"label out of range for {z.shape[1]} classes")
    return ad.mean_rows(ad.neg(ad.pick(log_softmax(z, T), labels)))


def _centroid_tensor(c) -> Tensor:
    if isinstance(c, CentroidBank):
        c.require_ready()
        return cb.stored_centroids(c)
    return c


def _spaces(features: Tensor, lifted: Tensor | None, centroids: Mapping) -> list[tuple[Tensor, Tensor]]:
    pairs = [(features, _centroid_tensor(centroids["F"]))]
    if lifted is not None and "F_up" in centroids:
        pairs.append((lifted, _centroid_tensor(centroids["F_up"])))
    return pairs


def _sum(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out


# ------------------------------------------------------------ loss terms

def afem_loss(logits_t: Tensor, T: float = 1.0, adaptive: bool = True) -> Tensor:
    if logits_t.shape[0] < 1:
        raise ContractError("afem_loss needs at least one row")
    return filtered_entropy(logits_t, T, adaptive)


def target_fisher_loss(features: Tensor, lifted: Tensor | None, centroids: Mapping,
                       T_within: float = 1.0, T_between: float = 2.0) -> Tensor:
    """Within/between distance entropies, filtered, summed over feature spaces.

    ``centroids`` maps space name ("F", optionally "F_up") to a KxM tensor
    or a ready :class:`CentroidBank`.
    """
    terms = []
    for f, M in _spaces(features, lifted, centroids):
        terms.append(filtered_entropy(cb.within_vector(f, M), T_within))
        terms.append(filtered_entropy(cb.between_vectors(M), T_between))
    return _sum(terms)


def source_fisher_loss(features: Tensor, lifted: Tensor | None, labels, centroids: Mapping,
                       T_within: float = 1.0, T_between: float = 2.0) -> Tensor:
    terms = []
    for f, M in _spaces(features, lifted, centroids):
        K = M.shape[0]
        terms.append(cross_entropy(cb.within_vector(f, M), labels, T_within))
        terms.append(cross_entropy(cb.between_vectors(M), np.arange(K), T_between))
    return _sum(terms)


def ordering_loss(centroids: Mapping, model: AdaptationModel, T: float = 2.0) -> Tensor:
    """Cross-entropy pinning centroid k to class k.

    Feature-space centroids go through the whole classifier; lifted-space
    centroids only through its last affine layer.
    """
    M = _centroid_tensor(centroids["F"])
    K = M.shape[0]
    terms = [cross_entropy(model.classify(M), np.arange(K), T)]
    if model.two_layer and "F_up" in centroids:
        M_up = _centroid_tensor(centroids["F_up"])
        terms.append(cross_entropy(model.head(M_up), np.arange(K), T))
    return _sum(terms)


def source_cls_loss(logits_s: Tensor, labels, T: float = 1.0) -> Tensor:
    return cross_entropy(logits_s, labels, T)


def alignment_term(source: Mapping, target: Mapping) -> Tensor:
    """Mean squared distance between matching source and target centroids, per space, summed."""
    terms = []
    for space in source:
        if space not in target:
            continue
        diff = ad.add(_centroid_tensor(source[space]), ad.neg(_centroid_tensor(target[space])))
        terms.append(ad.mean_rows(ad.sum_rows(ad.square(diff))))
    return _sum(terms)


# ------------------------------------------------------------ assembly

Banks = dict[tuple[str, str], CentroidBank]


def init_banks(model: AdaptationModel, alpha: float = 0.7) -> Banks:
    dims = {"F": model.feature_dim, "F_up": model.lifted_dim}
    return {(domain, space): CentroidBank.empty(model.num_classes, dims[space], alpha)
            for domain in ("source", "target") for space in model.spaces}


@dataclass
class StepResult:
    loss: Tensor
    breakdown: LossBreakdown
    banks: Banks
    pseudo_labels: np.ndarray | None = None


def _update_domain(banks: Banks, new_banks: Banks, domain: str, spaces: dict[str, Tensor], labels):
    """Update every bank of one domain; returns in-graph centroids if all are ready."""
    in_graph = {}
    for space, feats in spaces.items():
        new_bank, m_hat = cb.update(banks[(domain, space)], feats, labels)
        new_banks[(domain, space)] = new_bank
        in_graph[space] = m_hat
    if not all(new_banks[(domain, s)].ready for s in spaces):
        log.debug("%s centroids incomplete; skipping centroid terms this step", domain)
        return None
    return in_graph


def total_loss(batch_s, batch_t, model: AdaptationModel, banks: Banks, lam: float,
               variant: Variant = Variant(), temps: Temperatures = Temperatures()) -> StepResult:
    """Build the combined objective for one source batch and one target batch.

    ``batch_s`` is an (x, y) pair, ``batch_t`` the unlabeled target rows.
    Banks are not mutated; the updated banks come back in the result.
    """
    variant.validate()
    if not 0.0 <= lam <= 1.0:
        raise ParameterError(f"lambda must lie in [0, 1], got {lam}")
    if not variant.temperature:
        temps = temps.flattened()
    bd = LossBreakdown(lambda_used=float(lam))
    new_banks = dict(banks)
    pseudo = None
    two = model.two_layer

    distill_terms, cluster_terms = [], []
    src_centroids = tgt_centroids = None

    if variant.distilling:
        xs, ys = batch_s
        ys = np.asarray(ys, dtype=np.int64)
        out_s = model.forward(xs)
        cls = source_cls_loss(out_s.logits, ys, temps.cls)
        bd.cls_s = cls.item()
        distill_terms.append(cls)
        if variant.uses_source_banks:
            spaces = {"F": out_s.features, **({"F_up": out_s.lifted} if two else {})}
            src_centroids = _update_domain(banks, new_banks, "source", spaces, ys)
        if src_centroids is not None:
            lifted = out_s.lifted if two else None
            if variant.fisher and variant.source_fisher:
                term = source_fisher_loss(out_s.features, lifted, ys, src_centroids,
                                          temps.within, temps.between)
                bd.fisher_s = term.item()
                distill_terms.append(term)
            if variant.ordering and variant.source_ordering:
                term = ordering_loss(src_centroids, model, temps.ordering)
                bd.ordering_s = term.item()
                distill_terms.append(term)

    if variant.clustering:
        out_t = model.forward(batch_t)
        pseudo = cb.assign_pseudo_labels(out_t.logits.value)
        if variant.entropy:
            ent = afem_loss(out_t.logits, temps.entropy, adaptive=variant.afem)
            bd.entropy_t = ent.item()
            cluster_terms.append(ent)
        if variant.uses_target_banks:
            spaces = {"F": out_t.features, **({"F_up": out_t.lifted} if two else {})}
            tgt_centroids = _update_domain(banks, new_banks, "target", spaces, pseudo)
        if tgt_centroids is not None:
            lifted = out_t.lifted if two else None
            if variant.fisher:
                term = target_fisher_loss(out_t.features, lifted, tgt_centroids,
                                          temps.within, temps.between)
                bd.fisher_t = term.item()
                cluster_terms.append(term)
            if variant.ordering:
                term = ordering_loss(tgt_centroids, model, temps.ordering)
                bd.ordering_t = term.item()
                cluster_terms.append(term)

    bd.distilling_total = bd.cls_s + bd.fisher_s + bd.ordering_s
    bd.clustering_total = bd.entropy_t + bd.fisher_t + bd.ordering_t

    if variant.explicit_alignment and src_centroids is not None and tgt_centroids is not None:
        term = alignment_term(src_centroids, tgt_centroids)
        bd.alignment = term.item()
        cluster_terms.append(term)

    parts = []
    if distill_terms:
        parts.append(_sum(distill_terms))
    if cluster_terms:
        parts.append(ad.scale(_sum(cluster_terms), lam))
    loss = _sum(parts)
    bd.overall = bd.distilling_total + lam * (bd.clustering_total + bd.alignment)
    return StepResult(loss, bd, new_banks, pseudo)


def check_finite(bd: LossBreakdown) -> bool:
    return all(math.isfinite(v) for v in bd.as_dict().values())

