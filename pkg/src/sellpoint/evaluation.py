"""Offline metrics (AUC, click-count group analysis, feature ablation) and
online-style statistics (CTR comparison over a simulated A/B split with
Fisher's exact test)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp
from scipy.stats import rankdata

from .data import Ad, Query, SfInstance, UserRepr
from .network import (AUGMENTED, ModelVariant, NetworkDims, NetworkParams,
                      init_network_params, predict_sp_scores, score_sf_instances)
from .training import TrainingConfig, train_alternate
from .world import (World, oracle_attraction_many, position_factor, query_latent,
                    sample_query)

logger = logging.getLogger(__name__)

# Tables at least this large switch from exact integer enumeration to
# log-space evaluation of the hypergeometric mass.
_EXACT_ENUMERATION_LIMIT = 2000


# ---------------------------------------------------------------------------
# AUC

def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability that a random positive outranks a random negative, ties 0.5.

    Computed from midranks; equal by identity to the pairwise definition.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    pos = int((y == 1).sum())
    neg = int((y == 0).sum())
    if pos == 0 or neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


# ---------------------------------------------------------------------------
# Fisher's exact test

@dataclass(frozen=True)
class ContingencyTable2x2:
    clicks_a: int
    misses_a: int
    clicks_b: int
    misses_b: int

    def __post_init__(self):
        if min(self.clicks_a, self.misses_a, self.clicks_b, self.misses_b) < 0:
            raise ValueError("counts must be non-negative")


def _as_table(table) -> ContingencyTable2x2:
    if isinstance(table, ContingencyTable2x2):
        return table
    (a, b), (c, d) = table
    return ContingencyTable2x2(int(a), int(b), int(c), int(d))


def fisher_exact_p(table) -> float:
    """Two-sided Fisher exact p: total probability of all tables with the same
    margins whose point probability does not exceed the observed one.

    Small tables are enumerated in exact integer arithmetic (point-probability
    comparisons are exact, so no tolerance is involved); large tables use
    log-space hypergeometric mass with a 1e-12 relative slack on the
    comparison. A zero margin yields p = 1.0 by convention.
    """
    t = _as_table(table)
    a, b, c, d = t.clicks_a, t.misses_a, t.clicks_b, t.misses_b
    r1, r2 = a + b, c + d
    c1, c2 = a + c, b + d
    if min(r1, r2, c1, c2) == 0:
        logger.warning("fisher_exact_p: zero margin in %s; p = 1.0 by convention", t)
        return 1.0
    n = r1 + r2
    lo, hi = max(0, c1 - r2), min(r1, c1)
    if n <= _EXACT_ENUMERATION_LIMIT:
        w_obs = math.comb(r1, a) * math.comb(r2, c1 - a)
        total = math.comb(n, c1)
        num = 0
        for k in range(lo, hi + 1):
            w = math.comb(r1, k) * math.comb(r2, c1 - k)
            if w <= w_obs:
                num += w
        return num / total
    ks = np.arange(lo, hi + 1)
    logw = (_log_comb(r1, ks) + _log_comb(r2, c1 - ks))
    log_obs = float(_log_comb(r1, a) + _log_comb(r2, c1 - a))
    mask = logw <= log_obs + 1e-12
    log_p = logsumexp(logw[mask]) - float(_log_comb(n, c1))
    return float(min(1.0, math.exp(log_p)))


def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


# ---------------------------------------------------------------------------
# Group analysis (click-count quadrants)

@dataclass(frozen=True)
class GroupRow:
    main_label: str
    aux_label: str
    n_instances: int
    aucs: Mapping[str, float | None]
    gains_pct: Mapping[str, float | None]   # relative gain vs the first model


@dataclass
class GroupAnalysisResult:
    main_median: float
    aux_median: float
    model_names: tuple[str, ...]
    rows: list[GroupRow]

    def render_text(self) -> str:
        base = self.model_names[0]
        header = (f"click-count groups (medians: main={self.main_median:g}, "
                  f"aux={self.aux_median:g})")
        cols = ["main task", "aux task", "n"]
        for m in self.model_names:
            cols.append(f"AUC {m}")
            if m != base:
                cols.append("gain")
        lines = [header]
        table = [cols]
        for row in self.rows:
            cells = [row.main_label, row.aux_label, str(row.n_instances)]
            for m in self.model_names:
                a = row.aucs[m]
                cells.append("n/a" if a is None else f"{a:.4f}")
                if m != base:
                    g = row.gains_pct[m]
                    cells.append("n/a" if g is None else f"{g:+.2f}%")
            table.append(cells)
        widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
        for r in table:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)))
        return "\n".join(lines)

    def to_csv_rows(self) -> list[list]:
        base = self.model_names[0]
        header = ["main_group", "aux_group", "n_instances"]
        for m in self.model_names:
            header.append(f"auc_{m}")
            if m != base:
                header.append(f"gain_pct_{m}")
        out = [header]
        for row in self.rows:
            cells: list = [row.main_label, row.aux_label, row.n_instances]
            for m in self.model_names:
                a = row.aucs[m]
                cells.append("n/a" if a is None else f"{a:.6f}")
                if m != base:
                    g = row.gains_pct[m]
                    cells.append("n/a" if g is None else f"{g:.4f}")
            out.append(cells)
        return out


def _safe_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    try:
        return auc(scores, labels)
    except ValueError:
        return None


def group_analysis(test_sf: Sequence[SfInstance],
                   scores_by_model: Mapping[str, Sequence[float]],
                   main_clicks: Mapping[int, int],
                   aux_clicks: Mapping[int, int]) -> GroupAnalysisResult:
    """Per-group AUC after splitting test users into four quadrants by their
    train-time click counts (medians over the click-count maps)."""
    users = {inst.user.user_id for inst in test_sf}
    for uid in users:
        if uid not in main_clicks or uid not in aux_clicks:
            raise ValueError(f"click-count maps must cover test user {uid}")
    model_names = tuple(scores_by_model)
    if not model_names:
        raise ValueError("need scores for at least one model")
    labels = np.array([inst.label for inst in test_sf])
    scores = {m: np.asarray(s, dtype=float) for m, s in scores_by_model.items()}
    for m, s in scores.items():
        if s.shape != labels.shape:
            raise ValueError(f"scores for {m!r} do not match the test set")

    main_median = float(np.median(list(main_clicks.values())))
    aux_median = float(np.median(list(aux_clicks.values())))
    inst_main = np.array([main_clicks[inst.user.user_id] for inst in test_sf])
    inst_aux = np.array([aux_clicks[inst.user.user_id] for inst in test_sf])

    base = model_names[0]
    rows: list[GroupRow] = []
    quadrants = [(True, False), (True, True), (False, False), (False, True)]
    for main_low, aux_low in quadrants:
        mask = ((inst_main <= main_median) == main_low) & ((inst_aux <= aux_median) == aux_low)
        aucs: dict[str, float | None] = {}
        gains: dict[str, float | None] = {}
        for m in model_names:
            aucs[m] = _safe_auc(scores[m][mask], labels[mask]) if mask.any() else None
        for m in model_names:
            a, b = aucs[m], aucs[base]
            gains[m] = None if (m == base or a is None or not b) else (a / b - 1.0) * 100.0
        rows.append(GroupRow(
            main_label=f"clicks<={main_median:g}" if main_low else f"clicks>{main_median:g}",
            aux_label=f"clicks<={aux_median:g}" if aux_low else f"clicks>{aux_median:g}",
            n_instances=int(mask.sum()), aucs=aucs, gains_pct=gains))
    return GroupAnalysisResult(main_median=main_median, aux_median=aux_median,
                               model_names=model_names, rows=rows)


# ---------------------------------------------------------------------------
# Feature ablation

@dataclass(frozen=True)
class AblationRow:
    label: str
    groups: tuple[str, ...]
    auc: float
    gain_pct: float   # vs the no-additional-features baseline


@dataclass
class AblationResult:
    rows: list[AblationRow]

    def render_text(self) -> str:
        lines = ["feature ablation (gain vs no additional features)"]
        width = max(len(r.label) for r in self.rows)
        for r in self.rows:
            lines.append(f"{r.label.ljust(width)}  {r.auc:.4f}  {r.gain_pct:+.2f}%")
        return "\n".join(lines)

    def to_csv_rows(self) -> list[list]:
        out = [["groups", "auc", "gain_pct"]]
        for r in self.rows:
            out.append([r.label, f"{r.auc:.6f}", f"{r.gain_pct:.4f}"])
        return out


@dataclass
class ExperimentData:
    sf_train: Sequence[SfInstance]
    sf_test: Sequence[SfInstance]
    ad_train: Sequence
    vocab_size: int


def ablation_run(base_variant: ModelVariant,
                 feature_group_subsets: Sequence[Sequence[str]],
                 data: ExperimentData, config: TrainingConfig,
                 dims: NetworkDims = NetworkDims()) -> AblationResult:
    """Train one augmented model per feature-group subset under identical
    seeds and data; report held-out AUC gain vs the empty-subset baseline."""
    if base_variant.kind != AUGMENTED or base_variant.schema is None:
        raise ValueError("ablation needs the augmented variant with a full schema")
    subsets = [tuple(s) for s in feature_group_subsets]
    if () not in subsets:
        subsets.insert(0, ())
    test_labels = [inst.label for inst in data.sf_test]
    rows: list[AblationRow] = []
    baseline_auc: float | None = None
    for subset in subsets:
        schema = base_variant.schema.restrict(subset)
        variant = ModelVariant(AUGMENTED, schema)
        params = init_network_params(variant, data.vocab_size, dims, seed=config.seed)
        train_alternate(params, data.sf_train, data.ad_train, config)
        scores = score_sf_instances(params, data.sf_test)
        value = auc(scores, test_labels)
        if subset == ():
            baseline_auc = value
        label = "+".join(subset) if subset else "baseline"
        rows.append(AblationRow(label=label, groups=subset, auc=value,
                                gain_pct=(value / baseline_auc - 1.0) * 100.0))
    return AblationResult(rows=rows)


# ---------------------------------------------------------------------------
# A/B simulation

Policy = Callable[[UserRepr, Query, Ad], Sequence[frozenset[int]]]


@dataclass
class AbTestResult:
    ctr_control: float
    ctr_treatment: float
    relative_change: float
    p_value: float
    table: ContingencyTable2x2
    n_impressions: int

    def render_text(self) -> str:
        t = self.table
        return ("A/B result: ctr_control={:.6f} ctr_treatment={:.6f} "
                "relative_change={:+.4%} p={:.6g}\n"
                "2x2 table: control {}/{} treatment {}/{} (clicks/misses)").format(
            self.ctr_control, self.ctr_treatment, self.relative_change, self.p_value,
            t.clicks_a, t.misses_a, t.clicks_b, t.misses_b)


def _displayed_click_prob(world: World, uid: int, query: Query,
                          displayed: Sequence[frozenset[int]], pos: int) -> float:
    damp = position_factor(world, pos)
    if not displayed:
        base = 1.0 / (1.0 + math.exp(-world.config.click_bias))
        return base * damp
    probs = oracle_attraction_many(world, uid, query, displayed)
    return float(probs.max()) * damp


def ab_simulate(policy_control: Policy, policy_treatment: Policy, world: World,
                n_impressions: int, rng: np.random.Generator) -> AbTestResult:
    """Alternate-assign impressions 50/50, simulate clicks from the oracle of
    the best displayed SP (position-damped), and test the pooled 2x2 table."""
    if n_impressions < 1:
        raise ValueError("need at least one impression")
    if n_impressions < 1000:
        logger.warning("ab_simulate: %d impressions is underpowered", n_impressions)
    cfg = world.config
    p_user = world.user_act_ad / world.user_act_ad.sum()
    uids = rng.choice(cfg.n_users, size=n_impressions, p=p_user)
    positions = rng.integers(0, cfg.session_length, size=n_impressions)
    clicks = [0, 0]
    shows = [0, 0]
    for i in range(n_impressions):
        uid = int(uids[i])
        query = sample_query(world, uid, rng)
        cat = next(iter(query.category_ids))
        local = world.ads_by_category[cat]
        if local.size and rng.random() < 0.7:
            ad = world.ads[int(rng.choice(local))]
        else:
            ad = world.ads[int(rng.integers(cfg.n_ads))]
        arm = i % 2
        policy = policy_control if arm == 0 else policy_treatment
        displayed = list(policy(world.user_reprs[uid], query, ad))
        p = _displayed_click_prob(world, uid, query, displayed, int(positions[i]))
        shows[arm] += 1
        if rng.random() < p:
            clicks[arm] += 1
    table = ContingencyTable2x2(clicks[0], shows[0] - clicks[0],
                                clicks[1], shows[1] - clicks[1])
    ctr_c = clicks[0] / shows[0] if shows[0] else 0.0
    ctr_t = clicks[1] / shows[1] if shows[1] else 0.0
    rel = (ctr_t - ctr_c) / ctr_c if ctr_c else 0.0
    return AbTestResult(ctr_control=ctr_c, ctr_treatment=ctr_t, relative_change=rel,
                        p_value=fisher_exact_p(table), table=table,
                        n_impressions=n_impressions)


# ---------------------------------------------------------------------------
# Display policies for the simulator

def random_policy(k: int, seed: int = 0) -> Policy:
    """Display k candidate SPs chosen uniformly at random."""
    from .numeric import substream
    rng = substream(seed, "policy/random")

    def policy(user: UserRepr, query: Query, ad: Ad):
        m = len(ad.sp_candidates)
        idx = rng.choice(m, size=min(k, m), replace=False)
        return [ad.sp_candidates[int(i)] for i in idx]
    return policy


def oracle_policy(world: World, k: int) -> Policy:
    """Display the k candidates the attraction oracle ranks highest."""
    def policy(user: UserRepr, query: Query, ad: Ad):
        probs = oracle_attraction_many(world, user, query, ad.sp_candidates)
        order = np.argsort(-probs, kind="stable")[:k]
        return [ad.sp_candidates[int(i)] for i in order]
    return policy


def popular_policy(world: World, k: int) -> Policy:
    """Non-personalized: rank candidates by global (mean-user) attraction."""
    mean_user = world.user_latents.mean(axis=0)

    def policy(user: UserRepr, query: Query, ad: Ad):
        direction = mean_user + query_latent(world, query)
        mat = np.stack([world.keyword_latents[sorted(sp)].mean(axis=0)
                        for sp in ad.sp_candidates])
        order = np.argsort(-(mat @ direction), kind="stable")[:k]
        return [ad.sp_candidates[int(i)] for i in order]
    return policy


def model_policy(params: NetworkParams, k: int) -> Policy:
    """Display the k candidates the trained model scores highest."""
    def policy(user: UserRepr, query: Query, ad: Ad):
        scores = predict_sp_scores(params, user, query, ad.sp_candidates)
        order = np.argsort(-scores, kind="stable")[:k]
        return [ad.sp_candidates[int(i)] for i in order]
    return policy
