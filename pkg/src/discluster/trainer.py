"""Training loop, evaluation, ablation variants and clustering baselines."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .config import ExperimentConfig
from .data import (Batcher, Dataset, UnlabeledView, gen_gaussian_blobs_shift,
                   feature_stats, gen_two_moons_shift, load_csv, merge_sources,
                   standardize)
from .errors import ConfigError, NonFiniteError
from .model import AdaptationModel, predict
from .objectives import (VARIANTS, Banks, LossBreakdown, Temperatures, Variant,
                         check_finite, init_banks, total_loss)
from .schedules import SGD, ScheduleConfig, group_lrs, lambda_at

log = logging.getLogger(__name__)

LOSS_FIELDS = list(LossBreakdown().as_dict())


@dataclass
class Domains:
    source: Dataset
    target: Dataset
    test: Dataset | None = None
    # per-column (mean, std) applied to raw inputs, if any
    scaler: tuple[np.ndarray, np.ndarray] | None = None


@dataclass
class TrainState:
    model: AdaptationModel
    banks: Banks
    optimizer: SGD
    variant: Variant
    seed: int
    epochs: int
    epoch: int = 0
    history: list[dict] = field(default_factory=list)


def seeds_for(seed: int) -> dict[str, int]:
    """Independent sub-seeds for data, weight init and batch order."""
    ss = np.random.SeedSequence(seed).spawn(3)
    return {name: int(s.generate_state(1)[0]) for name, s in zip(("data", "init", "batches"), ss)}


def build_domains(cfg: ExperimentConfig) -> Domains:
    d = cfg.data
    seed = seeds_for(cfg.run.seed)["data"]
    test = None
    if d.task == "two_moons":
        source, target = gen_two_moons_shift(d.n, d.noise_sd, d.rotation_deg, d.translation, seed)
    elif d.task == "blobs":
        source, target = gen_gaussian_blobs_shift(d.num_classes, d.n_per_class, d.dim,
                                                  d.mean_shift, d.cov_scale, seed, d.separation)
    else:
        sources = [load_csv(p, num_classes=d.num_classes) for p in d.source_paths]
        source = merge_sources(*sources)
        target = load_csv(d.target_path, "target", source.num_classes)
        if d.test_path:
            test = load_csv(d.test_path, "test", source.num_classes)
    scaler = None
    if d.standardize:
        scaler = feature_stats(source)
        if test is not None:
            source, target, test = standardize(source, target, test)
        else:
            source, target = standardize(source, target)
    return Domains(source, target, test, scaler)


def build_model(cfg: ExperimentConfig, dim: int, num_classes: int) -> AdaptationModel:
    return AdaptationModel.build(dim, num_classes, cfg.model.extractor_dims,
                                 cfg.model.classifier_hidden or None, seeds_for(cfg.run.seed)["init"])


def evaluate(model: AdaptationModel, dataset: Dataset) -> float:
    """Fraction of rows whose predicted class equals the held label."""
    if dataset.labels is None:
        raise ConfigError(f"dataset {dataset.domain_tag!r} has no labels to evaluate against")
    if len(dataset) == 0:
        return 0.0
    return float(np.mean(predict(model, dataset.features) == dataset.labels))


def fit(model: AdaptationModel, source: Dataset, target: UnlabeledView | None,
        schedule: ScheduleConfig, variant: Variant, temps: Temperatures, alpha: float,
        seed: int, evaluator: Callable[[AdaptationModel], dict] | None = None,
        lambda_override: float | None = None,
        on_epoch: Callable[[dict], None] | None = None) -> TrainState:
    """Run the per-step loop: forward, pseudo-label, update centroids, loss, backward, SGD.

    The target arrives as an :class:`UnlabeledView`; the only way labels enter
    is through ``evaluator``, which sees the model and nothing else.
    """
    variant.validate()
    if variant.clustering and target is None:
        raise ConfigError("variant needs target data")
    opt = SGD(model.named_parameters(), schedule.momentum, schedule.weight_decay)
    state = TrainState(model, init_banks(model, alpha), opt, variant, seed, schedule.epochs)
    batcher = Batcher(source, target if variant.clustering else None, schedule.batch_size, seed)
    params = model.parameters()
    step = 0
    for epoch in range(schedule.epochs):
        p = epoch / schedule.epochs
        lam = lambda_at(p, schedule.gamma) if lambda_override is None else lambda_override
        lrs = group_lrs(p, schedule)
        sums = dict.fromkeys(LOSS_FIELDS, 0.0)
        n_steps = 0
        for xs, ys, xt in batcher.epoch():
            res = total_loss((xs, ys), xt, model, state.banks, lam, variant, temps)
            if not check_finite(res.breakdown) or not math.isfinite(res.loss.item()):
                raise NonFiniteError(f"non-finite loss at epoch {epoch} step {step}: {res.breakdown.as_dict()}")
            for t in params:
                t.grad = np.zeros_like(t.value)
            ad.backward(res.loss)
            opt.step(lrs)
            state.banks = res.banks
            for k, v in res.breakdown.as_dict().items():
                sums[k] += v
            n_steps += 1
            step += 1
        record = {"epoch": epoch + 1, **{k: v / n_steps for k, v in sums.items()},
                  "lambda": lam, "lr": lrs["classifier"], "lr_extractor": lrs["extractor"]}
        if evaluator is not None:
            record.update(evaluator(model))
        state.history.append(record)
        state.epoch = epoch + 1
        if on_epoch is not None:
            on_epoch(record)
    return state


def _evaluator(domains: Domains):
    def run(model):
        out = {}
        for key, ds in (("target_acc", domains.target), ("source_acc", domains.source),
                        ("test_acc", domains.test)):
            if ds is not None and ds.labeled:
                out[key] = evaluate(model, ds)
        return out
    return run


def train(cfg: ExperimentConfig, variant: Variant | None = None, domains: Domains | None = None,
          model: AdaptationModel | None = None, on_epoch=None) -> TrainState:
    domains = domains or build_domains(cfg)
    variant = variant or cfg.loss.resolved_variant()
    model = model or build_model(cfg, domains.source.dim, domains.source.num_classes)
    return fit(model, domains.source, domains.target.train_view(), cfg.schedule, variant,
               cfg.loss.temps(), cfg.loss.alpha, seeds_for(cfg.run.seed)["batches"],
               _evaluator(domains), cfg.loss.lambda_override, on_epoch)


def final_metrics(history: list[dict]) -> dict:
    return dict(history[-1]) if history else {}


def run_variant(cfg: ExperimentConfig, variant_id: str, domains: Domains | None = None,
                on_epoch=None) -> dict:
    """Train one named ablation variant and return its final metrics and history."""
    if variant_id not in VARIANTS:
        raise ConfigError(f"unknown variant {variant_id!r}; known: {sorted(VARIANTS)}")
    domains = domains or build_domains(cfg)
    variant = replace(VARIANTS[variant_id], **cfg.loss.flags) if variant_id == cfg.loss.variant \
        else VARIANTS[variant_id]
    pretrain = []
    model = None
    if not variant.distilling:
        # fine-tune a converged Source Only network with the clustering terms alone
        warm = train(cfg, VARIANTS["source_only"], domains)
        pretrain = warm.history
        model = warm.model
    state = train(cfg, variant, domains, model, on_epoch)
    return {"variant": variant_id, "final": final_metrics(state.history),
            "history": state.history, "pretrain_history": pretrain, "state": state}


def em_baseline(cfg: ExperimentConfig, domains: Domains | None = None) -> dict:
    """Plain entropy minimisation on target plus source cross-entropy."""
    variant = Variant(afem=False, fisher=False, ordering=False)
    state = train(cfg, variant, domains)
    return {"final": final_metrics(state.history), "history": state.history, "state": state}


# ------------------------------------------------------------------ k-means baseline

def kmeans(x: np.ndarray, init_centers: np.ndarray, iters: int = 50):
    """Lloyd iterations from given centres; an empty cluster is re-seeded at the farthest point."""
    centers = np.array(init_centers, dtype=np.float64)
    labels = None
    for _ in range(iters):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        for k in range(centers.shape[0]):
            if not np.any(new == k):
                far = int(np.argmax(d2[np.arange(len(x)), new]))
                log.info("k-means cluster %d empty; re-seeding from point %d", k, far)
                centers[k] = x[far]
                new[far] = k
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(centers.shape[0]):
            centers[k] = x[labels == k].mean(axis=0)
    return labels, centers


def kmeans_pseudo_baseline(cfg: ExperimentConfig, domains: Domains | None = None,
                           rounds: int | None = None, round_epochs: int | None = None) -> dict:
    """Source Only training followed by rounds of k-means pseudo-labelling and retraining."""
    domains = domains or build_domains(cfg)
    rounds = cfg.run.kmeans_rounds if rounds is None else rounds
    round_epochs = (cfg.run.kmeans_round_epochs if round_epochs is None else round_epochs)
    if round_epochs is None:
        round_epochs = cfg.schedule.epochs
    warm = train(cfg, VARIANTS["source_only"], domains)
    model = warm.model
    source, target = domains.source, domains.target
    source_only_acc = evaluate(model, target)
    K = source.num_classes
    accs, pseudo_accs = [], []
    sched = replace(cfg.schedule, epochs=round_epochs)
    for r in range(rounds):
        feats_s = model.extract(ad.constant(source.features)).value
        feats_t = model.extract(ad.constant(target.features)).value
        init = np.stack([feats_s[source.labels == k].mean(axis=0) if np.any(source.labels == k)
                         else feats_s.mean(axis=0) for k in range(K)])
        pseudo, _ = kmeans(feats_t, init)
        if target.labeled:
            pseudo_accs.append(float(np.mean(pseudo == target.labels)))
        pseudo_target = Dataset(target.features, pseudo, "target-pseudo", K)
        merged = merge_sources(source, pseudo_target)
        fit(model, merged, None, sched, VARIANTS["source_only"], cfg.loss.temps(),
            cfg.loss.alpha, seeds_for(cfg.run.seed + r + 1)["batches"])
        accs.append(evaluate(model, target))
    return {"source_only_acc": source_only_acc,
            "round_acc": accs, "pseudo_acc": pseudo_accs, "pretrain_history": warm.history, "model": model}
