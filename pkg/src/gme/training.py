"""Context preparation, the training loop, evaluation, and reference baselines.

Contexts are built once per (market, config) pair and reused across epochs
and across model variants; nothing in them depends on parameters.  The
chronological list of target sets is split by position, so the test span
always happens after the training span.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from . import data as gd
from .competition import build_competitiveness_graph
from .evolution import build_propagation_tree, init_states
from .model import GMEModel, TargetSetContext, TrainConfig

log = logging.getLogger(__name__)

TRAIN_FRACTION = 5 / 6


@dataclass(frozen=True)
class ContextBundle:
    train: tuple
    test: tuple
    encoder: gd.EncoderConfig


def build_context(market: gd.Market, target_set: gd.TargetSet,
                  config: TrainConfig, encoder: gd.EncoderConfig,
                  feature_cache: dict | None = None) -> TargetSetContext:
    """Assemble every model input for one target set."""
    cache = feature_cache if feature_cache is not None else {}

    def feat(pid):
        if pid not in cache:
            cache[pid] = encoder.encode(market.by_id[pid])
        return cache[pid]

    t_ref = target_set.observation_time
    targets = [market.by_id[pid] for pid in target_set.project_ids]
    truths = np.asarray([gd.fundraising_target(p, market.log(p.id), config.tau)
                         for p in targets])

    target_ids = set(target_set.project_ids)
    rivals = [p for p in gd.running_set(market.projects, t_ref) if p.id not in target_ids]
    if rivals:
        rival_series = np.stack([gd.hourly_series(market.log(p.id), t_ref) for p in rivals])
        rival_trends = np.stack([
            gd.prior_trend(p, market.log(p.id), t_ref, config.trend_bins)[1] for p in rivals])
        rival_features = np.stack([feat(p.id) for p in rivals])
    else:
        rival_series = np.zeros((0, 24))
        rival_trends = np.zeros((0, config.trend_bins))
        rival_features = np.zeros((0, encoder.feature_dim))
    graph = build_competitiveness_graph(targets, rivals, config.pruning)

    observables = gd.observable_set(market.projects, t_ref, config.t_h, config.tau)
    tree = build_propagation_tree(targets, observables, config.t_h, config.tau)
    features = {pid: feat(pid) for pid in tree.node_ids}
    amounts = {p.id: gd.early_stage_amount(p, market.log(p.id), config.tau)
               for p in observables}
    tree_init = init_states(tree, features, amounts)
    aux_truths = np.asarray([
        float(np.log2(1.0 + market.log(pid).total_between(t_ref, t_ref + config.tau * gd.HOUR)))
        for pid in tree.node_ids[tree.n_roots:]])

    return TargetSetContext(
        day=target_set.day,
        segment=target_set.segment,
        observation_time=t_ref,
        target_ids=target_set.project_ids,
        target_features=np.stack([feat(pid) for pid in target_set.project_ids]),
        truths=truths,
        rival_ids=tuple(p.id for p in rivals),
        rival_features=rival_features,
        rival_series=rival_series,
        rival_trends=rival_trends,
        graph=graph,
        tree=tree,
        tree_init=tree_init,
        aux_truths=aux_truths,
    )


def build_contexts(market: gd.Market, config: TrainConfig,
                   text_mode: str = "hashed",
                   encoder_overrides: dict | None = None,
                   encoder: gd.EncoderConfig | None = None) -> ContextBundle:
    """Split target sets chronologically and precompute both spans.

    Pass ``encoder`` to reuse a stored feature layout (evaluation of a
    checkpoint); otherwise one is fitted on the training-split projects.
    """
    sets = gd.segment_target_sets(market.projects, config.tz_offset)
    if len(sets) < 2:
        raise gd.DataError(f"need at least 2 target sets to split, found {len(sets)}")
    n_train = int(len(sets) * TRAIN_FRACTION)
    n_train = min(max(n_train, 1), len(sets) - 1)
    train_sets, test_sets = sets[:n_train], sets[n_train:]

    if encoder is None:
        train_projects = [market.by_id[pid]
                          for ts in train_sets for pid in ts.project_ids]
        encoder = gd.EncoderConfig.fit(train_projects, text_mode=text_mode,
                                       **(encoder_overrides or {}))

    cache: dict = {}
    train = tuple(build_context(market, ts, config, encoder, cache) for ts in train_sets)
    test = tuple(build_context(market, ts, config, encoder, cache) for ts in test_sets)
    return ContextBundle(train=train, test=test, encoder=encoder)


class EpochStats(NamedTuple):
    epoch: int
    loss_p: float
    loss_l: float
    seconds: float


def warm_start_heads(model: GMEModel,
                     train_contexts: Sequence[TargetSetContext]) -> None:
    """Zero the output weights and set each output bias to its truth mean.

    The rectified heads start as constant mean predictors, so the first
    gradient steps grow the weights from zero at the data's own scale.
    Skipping this lets the initial random head overshoot through zero,
    where the rectifier's dead zone can freeze every prediction at 0.
    """
    truths = np.concatenate([ctx.truths for ctx in train_contexts])
    model.out_w.data[:] = 0.0
    model.out_b.data[:] = float(np.mean(truths))
    aux = [ctx.aux_truths for ctx in train_contexts if ctx.aux_truths.size]
    model.aux_w.data[:] = 0.0
    model.aux_b.data[:] = float(np.mean(np.concatenate(aux))) if aux else 0.0


def train_model(model: GMEModel, train_contexts: Sequence[TargetSetContext]) -> list:
    """Run the per-set gradient loop; one rate-decay boundary per epoch."""
    if not train_contexts:
        raise ValueError("no training contexts")
    cfg = model.config
    params = model.parameters()
    schedule = ad.SgdSchedule(cfg.learning_rate, cfg.lr_decay, len(train_contexts))
    dropout_rng = ad.derive_rng(cfg.seed, "dropout")
    history = []
    step = 0
    if cfg.epochs > 0:
        warm_start_heads(model, train_contexts)
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        p_sum = l_sum = 0.0
        for ctx in train_contexts:
            with ad.Tape() as tape:
                result = model.forward(ctx, training=True, dropout_rng=dropout_rng)
                losses = model.loss(result, ctx)
                if not np.isfinite(losses.total.data):
                    raise ad.GradientError(
                        f"non-finite loss at step {step} (set {ctx.label})")
                ad.backward(tape, losses.total)
            ad.sgd_step(params, schedule, step)
            step += 1
            p_sum += losses.loss_p
            l_sum += losses.loss_l
        n = len(train_contexts)
        history.append(EpochStats(epoch, p_sum / n, l_sum / n,
                                  time.perf_counter() - started))
    return history


def _metrics(truths: np.ndarray, preds: np.ndarray) -> tuple:
    mae = float(np.mean(np.abs(truths - preds)))
    rmse = float(np.sqrt(np.mean((truths - preds) ** 2)))
    return mae, rmse


def evaluation_report(contexts: Sequence[TargetSetContext], predict_fn,
                      config_echo: dict) -> dict:
    """Score a prediction function set by set; JSON-ready plain types only."""
    if not contexts:
        raise ValueError("no contexts to evaluate")
    per_set = []
    rows = []
    for ctx in contexts:
        preds = np.asarray(predict_fn(ctx), dtype=np.float64)
        if preds.shape != ctx.truths.shape:
            raise ValueError(
                f"predictor returned {preds.shape} for {len(ctx.truths)} targets")
        mae, rmse = _metrics(ctx.truths, preds)
        per_set.append({"label": ctx.label, "n_targets": len(ctx.target_ids),
                        "mae": mae, "rmse": rmse})
        for pid, t, p in zip(ctx.target_ids, ctx.truths, preds):
            rows.append({"id": pid, "truth": float(t), "pred": float(p)})
    truths = np.asarray([r["truth"] for r in rows])
    preds = np.asarray([r["pred"] for r in rows])
    mae, rmse = _metrics(truths, preds)
    return {
        "config": config_echo,
        "n_sets": len(per_set),
        "n_targets": len(rows),
        "mae": mae,
        "rmse": rmse,
        "per_set": per_set,
        "predictions": rows,
    }


def evaluate_model(model: GMEModel, contexts: Sequence[TargetSetContext]) -> dict:
    echo = model.config.to_json()
    return evaluation_report(contexts, model.predict, echo)


BASELINES = ("mean", "linear", "mlp")


class _MlpBaseline:
    """Static-feature regressor trained with the same per-set protocol."""

    def __init__(self, feature_dim: int, seed: int, widths=(150, 50)):
        rng = ad.derive_rng(seed, "baseline-mlp")
        dims = [feature_dim, *widths, 1]
        self.layers = []
        for i, (a, b) in enumerate(zip(dims, dims[1:]), start=1):
            w = ad.Parameter(ad.glorot_uniform(rng, (a, b), a, b), name=f"mlp.layer{i}.w")
            bias = ad.Parameter(np.zeros(b), name=f"mlp.layer{i}.b")
            self.layers.append((w, bias))

    def parameters(self):
        return [p for pair in self.layers for p in pair]

    def forward(self, features: np.ndarray) -> ad.Tensor:
        h = ad.Tensor(np.asarray(features, dtype=np.float64))
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, w), b)
            if i != last:
                h = ad.relu(h)
        return h

    def predict(self, ctx: TargetSetContext) -> np.ndarray:
        return self.forward(ctx.target_features).data[:, 0].copy()


def fit_baseline(kind: str, train_contexts: Sequence[TargetSetContext],
                 config: TrainConfig):
    """Return predict_fn for one reference model fitted on the train span."""
    if kind not in BASELINES:
        raise ValueError(f"baseline must be one of {BASELINES}, got {kind!r}")
    all_truths = np.concatenate([ctx.truths for ctx in train_contexts])

    if kind == "mean":
        const = float(np.mean(all_truths))
        return lambda ctx: np.full(len(ctx.target_ids), const)

    if kind == "linear":
        x = np.concatenate([ctx.target_features for ctx in train_contexts])
        x1 = np.concatenate([x, np.ones((len(x), 1))], axis=1)
        coef, _, rank, _ = np.linalg.lstsq(x1, all_truths, rcond=None)
        if not np.all(np.isfinite(coef)):
            log.warning("least squares produced non-finite weights; ridge fallback")
            gram = x1.T @ x1 + 1e-6 * np.eye(x1.shape[1])
            coef = np.linalg.solve(gram, x1.T @ all_truths)
        return lambda ctx: np.concatenate(
            [ctx.target_features, np.ones((len(ctx.target_ids), 1))], axis=1) @ coef

    mlp = _MlpBaseline(train_contexts[0].target_features.shape[1], config.seed)
    params = mlp.parameters()
    schedule = ad.SgdSchedule(config.learning_rate, config.lr_decay, len(train_contexts))
    step = 0
    for _ in range(config.epochs):
        for ctx in train_contexts:
            with ad.Tape() as tape:
                out = mlp.forward(ctx.target_features)
                err = ad.mean(ad.absolute(ad.sub(
                    ad.matmul(out, ad.Tensor(np.ones(1))), ad.Tensor(ctx.truths))))
                ad.backward(tape, err)
            ad.sgd_step(params, schedule, step)
            step += 1
    return mlp.predict
