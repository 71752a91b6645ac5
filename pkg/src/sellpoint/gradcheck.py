"""Gradient verification: analytic backward passes vs central finite
differences on tiny randomized configurations of every variant and task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (BAG, CATEGORICAL, Ad, AdInstance, FeatureField, FeatureGroup,
                   FeatureGroups, FeatureSchema, Query, SfInstance, UserRepr)
from .network import (AUGMENTED, AUX, BASIC, MAIN, MULTITASK, ModelVariant,
                      NetworkDims, backward_batch, forward_batch,
                      init_network_params, loss, pack_batch)
from .numeric import finite_difference_gradient, substream

TOY_VOCAB = 8
TOY_DIMS = NetworkDims(keyword_dim=3, feature_dim=2, fc1=4, fc2=3)


def toy_schema() -> FeatureSchema:
    return FeatureSchema((
        FeatureGroup("ug", "user", (
            FeatureField("uf_cat", 3, CATEGORICAL),
            FeatureField("uf_bag", 4, BAG),
        )),
        FeatureGroup("qg", "query", (
            FeatureField("qf_bag", 3, BAG),
        )),
    ))


def _random_subset(rng: np.random.Generator, n: int, lo: int, hi: int) -> list[int]:
    size = int(rng.integers(lo, hi + 1))
    size = min(size, n)
    return sorted(int(i) for i in rng.choice(n, size=size, replace=False))


def random_toy_instances(rng: np.random.Generator, task: str, augmented: bool,
                         batch: int) -> list:
    instances = []
    for _ in range(batch):
        groups = FeatureGroups({
            "ug": frozenset(_random_subset(rng, 7, 0, 3)),
            "qg": frozenset(),
        }) if augmented else FeatureGroups({})
        user = UserRepr(user_id=0,
                        long_term=tuple(_random_subset(rng, TOY_VOCAB, 1, 3)),
                        short_term=tuple(_random_subset(rng, TOY_VOCAB, 0, 2)),
                        feature_groups=groups)
        query = Query(keywords=frozenset(_random_subset(rng, TOY_VOCAB, 1, 2)),
                      category_ids=frozenset(_random_subset(rng, 3, 0, 2)) if augmented
                      else frozenset())
        label = int(rng.integers(2))
        if task == MAIN:
            instances.append(SfInstance(
                user=user, query=query,
                sf=frozenset(_random_subset(rng, TOY_VOCAB, 1, 2)), label=label))
        else:
            title = [int(i) for i in rng.integers(0, TOY_VOCAB, size=int(rng.integers(2, 5)))]
            ad = Ad(ad_id=0, title_keywords=tuple(title),
                    sp_candidates=(frozenset(_random_subset(rng, TOY_VOCAB, 1, 2)),))
            instances.append(AdInstance(user=user, query=query, ad=ad, label=label))
    return instances


def _randomize_params(params, rng: np.random.Generator, scale: float = 0.5) -> None:
    # healthy gradient magnitudes for the finite-difference comparison
    for _, arr in params.tensors():
        arr[...] = rng.normal(scale=scale, size=arr.shape)


@dataclass(frozen=True)
class GradCheckResult:
    variant: str
    task: str
    n_configs: int
    max_rel_error: float

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


def check_variant_task(kind: str, task: str, n_configs: int = 20, seed: int = 0,
                       eps: float = 1e-4) -> GradCheckResult:
    """Max relative error between analytic and central-difference gradients
    over every tensor of theta(task), across randomized toy configurations."""
    schema = toy_schema() if kind == AUGMENTED else None
    variant = ModelVariant(kind, schema)
    worst = 0.0
    for cfg_idx in range(n_configs):
        rng = substream(seed, f"gradcheck/{kind}/{task}/{cfg_idx}")
        params = init_network_params(variant, TOY_VOCAB, TOY_DIMS, seed=seed)
        _randomize_params(params, rng)
        batch_size = int(rng.integers(1, 4))
        instances = random_toy_instances(rng, task, kind == AUGMENTED, batch_size)
        batch = pack_batch(instances, task, variant)
        trace = forward_batch(params, batch)
        grads = backward_batch(params, batch, trace)

        def batch_loss() -> float:
            return loss(forward_batch(params, batch).probabilities, batch.labels)

        for name in params.theta(task):
            arr = params.get(name)

            def loss_at(values: np.ndarray) -> float:
                saved = arr.copy()
                arr[...] = values
                val = batch_loss()
                arr[...] = saved
                return val

            fd = finite_difference_gradient(loss_at, arr, eps=eps)
            analytic = grads[name]
            denom = np.maximum(np.abs(analytic) + np.abs(fd), 1e-8)
            rel = float((np.abs(analytic - fd) / denom).max())
            worst = max(worst, rel)
    return GradCheckResult(variant=kind, task=task, n_configs=n_configs,
                           max_rel_error=worst)


def run_all_checks(n_configs: int = 20, seed: int = 0,
                   eps: float = 1e-4) -> list[GradCheckResult]:
    combos = [(BASIC, MAIN), (MULTITASK, MAIN), (MULTITASK, AUX),
              (AUGMENTED, MAIN), (AUGMENTED, AUX)]
    return [check_variant_task(kind, task, n_configs=n_configs, seed=seed, eps=eps)
            for kind, task in combos]
