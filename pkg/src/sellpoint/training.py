"""Negative sampling, train/test splitting, and the three training procedures:
plain supervised training, alternate multi-task training, and pre-training
with shared-parameter transfer."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import AdInstance, SfInstance
from .network import (AUGMENTED, AUX, BASIC, MAIN, NetworkParams,
                      batch_loss_and_grads, init_network_params, pack_batch)
from .numeric import AdaGradState, adagrad_step, derive_seed, substream
from .world import AdSession, SfImpression

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 256
    learning_rate: float = 0.03
    k: int = 4                      # aux : main task-selection proportion
    max_epochs_aux: int = 6
    max_epochs_main: int = 15
    sf_neg_ratio: int = 2
    ad_neg_ratio: int = 6
    split_ratio: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.k, self.sf_neg_ratio, self.ad_neg_ratio) < 1:
            raise ValueError("batch_size, k and negative ratios must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_epochs_aux < 0 or self.max_epochs_main < 0:
            raise ValueError("epoch caps must be non-negative")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")

    def aux_probability(self) -> float:
        return self.k / (self.k + 1.0)


@dataclass(frozen=True)
class EpochLoss:
    epoch: int
    task: str
    mean_loss: float


@dataclass
class TrainResult:
    params: NetworkParams
    history: list[EpochLoss] = field(default_factory=list)

    def epochs(self, task: str) -> int:
        return sum(1 for h in self.history if h.task == task)


def save_history_csv(history: Sequence[EpochLoss], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "task", "mean_loss"])
        for h in history:
            writer.writerow([h.epoch, h.task, f"{h.mean_loss:.12g}"])


# ---------------------------------------------------------------------------
# Dataset construction

def sample_negatives_sf(impressions: Sequence[SfImpression], ratio: int,
                        rng: np.random.Generator) -> list[SfInstance]:
    """Labeled SF instances: every click is a positive; per impression, up to
    `ratio` negatives per positive are drawn uniformly without replacement
    from the same impression's un-clicked SFs."""
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    out: list[SfInstance] = []
    short_pools = 0
    for imp in impressions:
        positives = [ph for ph, c in zip(imp.shown, imp.clicked) if c]
        if not positives:
            continue
        pos_set = set(positives)
        pool = [ph for ph, c in zip(imp.shown, imp.clicked)
                if not c and ph not in pos_set]
        want = ratio * len(positives)
        take = min(want, len(pool))
        if take < want:
            short_pools += 1
        for ph in positives:
            out.append(SfInstance(user=imp.user, query=imp.query, sf=ph, label=1))
        if take:
            for i in sorted(rng.choice(len(pool), size=take, replace=False)):
                out.append(SfInstance(user=imp.user, query=imp.query,
                                      sf=pool[int(i)], label=0))
    if short_pools:
        logger.warning("sample_negatives_sf: %d impressions had fewer un-clicked "
                       "SFs than requested", short_pools)
    return out


def sample_negatives_ad(sessions: Sequence[AdSession], ratio: int,
                        rng: np.random.Generator) -> list[AdInstance]:
    """Labeled ad instances: clicked ads are positives; negatives come only
    from un-clicked ads positioned before the session's last click."""
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    out: list[AdInstance] = []
    short_pools = 0
    for sess in sessions:
        click_positions = [i for i, (_, c) in enumerate(sess.items) if c]
        if not click_positions:
            continue
        last = click_positions[-1]
        positives = [ad for ad, c in sess.items if c]
        pool = [ad for i, (ad, c) in enumerate(sess.items) if not c and i < last]
        want = ratio * len(positives)
        take = min(want, len(pool))
        if take < want:
            short_pools += 1
        for ad in positives:
            out.append(AdInstance(user=sess.user, query=sess.query, ad=ad, label=1))
        if take:
            for i in sorted(rng.choice(len(pool), size=take, replace=False)):
                out.append(AdInstance(user=sess.user, query=sess.query,
                                      ad=pool[int(i)], label=0))
    if short_pools:
        logger.warning("sample_negatives_ad: %d sessions had fewer eligible "
                       "un-clicked ads than requested", short_pools)
    return out


def split_train_test(instances: Sequence, ratio: float,
                     rng: np.random.Generator) -> tuple[list, list]:
    """Disjoint, exhaustive random split; |train| = round(ratio * n)."""
    if not instances:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must be in (0, 1)")
    perm = rng.permutation(len(instances))
    cut = int(round(ratio * len(instances)))
    train = [instances[int(i)] for i in perm[:cut]]
    test = [instances[int(i)] for i in perm[cut:]]
    return train, test


def count_user_clicks(instances: Sequence[SfInstance] | Sequence[AdInstance]
                      ) -> dict[int, int]:
    """Positive-label count per user id (every seen user appears, even at 0)."""
    counts: dict[int, int] = {}
    for inst in instances:
        uid = inst.user.user_id
        counts[uid] = counts.get(uid, 0) + (1 if inst.label == 1 else 0)
    return counts


# ---------------------------------------------------------------------------
# Mini-batch streams

class _Stream:
    """Shuffled mini-batch stream; reshuffles each time an epoch is exhausted."""

    def __init__(self, instances: Sequence, batch_size: int, rng: np.random.Generator):
        if not instances:
            raise ValueError("empty training set")
        self.instances = list(instances)
        self.batch_size = batch_size
        self.rng = rng
        self.epochs_completed = 0
        self._order = rng.permutation(len(self.instances))
        self._pos = 0

    def next_batch(self) -> tuple[list, bool]:
        end = min(self._pos + self.batch_size, len(self.instances))
        batch = [self.instances[int(i)] for i in self._order[self._pos:end]]
        self._pos = end
        epoch_done = self._pos >= len(self.instances)
        if epoch_done:
            self.epochs_completed += 1
            self._order = self.rng.permutation(len(self.instances))
            self._pos = 0
        return batch, epoch_done


def _optimizer_states(params: NetworkParams, names: Sequence[str],
                      config: TrainingConfig) -> dict[str, AdaGradState]:
    return {name: AdaGradState.like(params.get(name), learning_rate=config.learning_rate)
            for name in names}


def _update(params: NetworkParams, task: str, batch_instances: Sequence,
            states: dict[str, AdaGradState]) -> float:
    batch = pack_batch(batch_instances, task, params.variant)
    batch_loss, grads = batch_loss_and_grads(params, batch)
    if not np.isfinite(batch_loss):
        raise FloatingPointError(f"non-finite {task} loss")
    for name, grad in grads.items():
        adagrad_step(params.get(name), grad, states[name])
    return batch_loss


# ---------------------------------------------------------------------------
# Training procedures

def train_basic(params: NetworkParams, sf_train: Sequence[SfInstance],
                config: TrainingConfig) -> TrainResult:
    """Standard supervised training of the main task with cross-entropy."""
    if params.variant.kind not in (BASIC, AUGMENTED):
        raise ValueError("basic training applies to the basic or augmented variant")
    if not sf_train:
        raise ValueError("empty SF training set")
    rng = substream(config.seed, "train/basic")
    stream = _Stream(sf_train, config.batch_size, rng)
    states = _optimizer_states(params, params.theta(MAIN), config)
    history: list[EpochLoss] = []
    losses: list[float] = []
    while stream.epochs_completed < config.max_epochs_main:
        batch, epoch_done = stream.next_batch()
        losses.append(_update(params, MAIN, batch, states))
        if epoch_done:
            history.append(EpochLoss(stream.epochs_completed, MAIN,
                                     float(np.mean(losses))))
            losses.clear()
    return TrainResult(params=params, history=history)


def train_alternate(params: NetworkParams, sf_train: Sequence[SfInstance],
                    ad_train: Sequence[AdInstance], config: TrainingConfig,
                    step_callback: Callable[[int, str, NetworkParams], None] | None = None
                    ) -> TrainResult:
    """Alternate training: each iteration picks the auxiliary task with
    probability k/(k+1), draws that task's next mini-batch, and updates only
    that task's parameter set; stops when either per-task epoch cap is hit."""
    if not params.variant.has_aux:
        raise ValueError("alternate training needs a variant with an auxiliary head")
    if not sf_train:
        raise ValueError("empty SF training set")
    if not ad_train:
        raise ValueError("empty AD training set")
    history: list[EpochLoss] = []
    if config.max_epochs_aux == 0 or config.max_epochs_main == 0:
        return TrainResult(params=params, history=history)

    choice_rng = substream(config.seed, "train/alternate/task")
    sf_stream = _Stream(sf_train, config.batch_size, substream(config.seed, "train/alternate/sf"))
    ad_stream = _Stream(ad_train, config.batch_size, substream(config.seed, "train/alternate/ad"))
    states = _optimizer_states(
        params, sorted(set(params.theta(MAIN)) | set(params.theta(AUX))), config)
    p_aux = config.aux_probability()
    losses = {MAIN: [], AUX: []}
    iteration = 0
    while True:
        iteration += 1
        if choice_rng.random() < p_aux:
            task, stream, cap = AUX, ad_stream, config.max_epochs_aux
        else:
            task, stream, cap = MAIN, sf_stream, config.max_epochs_main
        batch, epoch_done = stream.next_batch()
        losses[task].append(_update(params, task, batch, states))
        if step_callback is not None:
            step_callback(iteration, task, params)
        if epoch_done:
            history.append(EpochLoss(stream.epochs_completed, task,
                                     float(np.mean(losses[task]))))
            losses[task].clear()
            if stream.epochs_completed >= cap:
                break
    return TrainResult(params=params, history=history)


def train_pretrain(params: NetworkParams, sf_train: Sequence[SfInstance],
                   ad_train: Sequence[AdInstance], config: TrainingConfig
                   ) -> TrainResult:
    """Pre-training transfer: train the auxiliary task first, then copy the
    shared tensors into a fresh model, re-initialize the main head randomly,
    drop the attention module, and train the main task."""
    if not params.variant.has_aux:
        raise ValueError("pre-training needs a variant with an auxiliary head")
    if not sf_train:
        raise ValueError("empty SF training set")
    if not ad_train:
        raise ValueError("empty AD training set")
    history: list[EpochLoss] = []

    # phase 1: auxiliary task only
    rng_aux = substream(config.seed, "train/pretrain/ad")
    stream = _Stream(ad_train, config.batch_size, rng_aux)
    states = _optimizer_states(params, params.theta(AUX), config)
    losses: list[float] = []
    while stream.epochs_completed < config.max_epochs_aux:
        batch, epoch_done = stream.next_batch()
        losses.append(_update(params, AUX, batch, states))
        if epoch_done:
            history.append(EpochLoss(stream.epochs_completed, AUX, float(np.mean(losses))))
            losses.clear()

    # phase 2: transfer shared tensors; fresh output layers and attention
    transferred = init_network_params(params.variant, params.vocab_size, params.dims,
                                      seed=derive_seed(config.seed, "pretrain-phase2"))
    transferred.keyword_emb = params.keyword_emb.copy()
    for name in params.feature_emb:
        transferred.feature_emb[name] = params.feature_emb[name].copy()
    transferred.fc1_w = params.fc1_w.copy()
    transferred.fc1_b = params.fc1_b.copy()
    transferred.fc2_w = params.fc2_w.copy()
    transferred.fc2_b = params.fc2_b.copy()

    rng_main = substream(config.seed, "train/pretrain/sf")
    stream = _Stream(sf_train, config.batch_size, rng_main)
    states = _optimizer_states(transferred, transferred.theta(MAIN), config)
    losses = []
    while stream.epochs_completed < config.max_epochs_main:
        batch, epoch_done = stream.next_batch()
        losses.append(_update(transferred, MAIN, batch, states))
        if epoch_done:
            history.append(EpochLoss(stream.epochs_completed, MAIN, float(np.mean(losses))))
            losses.clear()
    return TrainResult(params=transferred, history=history)
