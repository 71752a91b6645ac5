"""A planted-preference generative model standing in for production logs.

Users, keywords and categories carry latent vectors; the attraction oracle is
a logistic function of latent alignment and is the ground truth for all
learning tests. Keyword latents cluster by category, user features correlate
with user latents, and ad clicks share the same preference structure as SF
clicks so the auxiliary task genuinely informs the main one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import (Ad, BAG, CATEGORICAL, FeatureField, FeatureGroup, FeatureGroups,
                   FeatureSchema, Query, UserRepr, Vocabulary, build_user_repr,
                   build_vocabulary, encode_feature_groups)
from .numeric import substream

HISTORY_NOW_DAYS = 30.0


@dataclass(frozen=True)
class WorldConfig:
    n_users: int = 2000
    n_keywords: int = 5000
    n_categories: int = 50
    n_ads: int = 2000
    n_brands: int = 200
    latent_dim: int = 8
    sf_per_impression: int = 10
    session_length: int = 20
    click_temperature: float = 4.0
    click_bias: float = -3.5
    user_weight: float = 1.0
    query_weight: float = 1.0
    keyword_noise: float = 0.35
    user_noise: float = 0.25
    feature_noise: float = 0.1
    position_decay: float = 0.05
    n_sp_phrases: int = 1500
    sf_inventory_fraction: float = 0.4
    phrase_max_len: int = 3
    sps_per_ad: int = 5
    title_len: int = 10
    user_pref_categories: int = 3
    history_clicks: int = 40
    query_affinity: float = 0.7
    user_activity_sigma: float = 1.0
    private_keywords_per_user: int = 6
    private_keyword_noise: float = 0.3
    private_click_rate: float = 0.5
    seed: int = 0

    @property
    def total_keywords(self) -> int:
        """Public inventory plus each user's private-style keywords."""
        return self.n_keywords + self.n_users * self.private_keywords_per_user

    def __post_init__(self):
        counts = (self.n_users, self.n_keywords, self.n_categories, self.n_ads,
                  self.n_brands, self.sf_per_impression, self.session_length,
                  self.n_sp_phrases, self.phrase_max_len, self.sps_per_ad,
                  self.title_len, self.user_pref_categories, self.history_clicks)
        if any(c <= 0 for c in counts):
            raise ValueError("all world counts must be positive")
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be at least 2")
        if not 0.0 < self.sf_inventory_fraction <= 1.0:
            raise ValueError("sf_inventory_fraction must be in (0, 1]")
        if self.user_pref_categories > self.n_categories:
            raise ValueError("more preferred categories than categories")
        if self.n_keywords < self.n_categories:
            raise ValueError("need at least one keyword per category")
        if self.sps_per_ad > self.n_sp_phrases:
            raise ValueError("sps_per_ad cannot exceed the SP phrase inventory")
        if self.private_keywords_per_user < 0:
            raise ValueError("private_keywords_per_user must be non-negative")


@dataclass(frozen=True)
class SfImpression:
    """One page of shown SF phrases for a (user, query) with click outcomes."""

    user: UserRepr
    query: Query
    shown: tuple[frozenset[int], ...]
    clicked: tuple[bool, ...]


@dataclass(frozen=True)
class AdSession:
    """One ordered search session of ad impressions with click flags."""

    user: UserRepr
    query: Query
    items: tuple[tuple[Ad, bool], ...]


@dataclass
class World:
    config: WorldConfig
    vocabulary: Vocabulary
    schema: FeatureSchema
    category_latents: np.ndarray          # (C, L) unit rows
    keyword_latents: np.ndarray           # (K, L) unit rows
    user_latents: np.ndarray              # (U, L) unit rows
    keyword_category: np.ndarray          # (K,)
    brand_category: np.ndarray            # (n_brands,)
    user_pref_cats: np.ndarray            # (U, P)
    user_pref_weights: np.ndarray         # (U, P)
    user_act_sf: np.ndarray               # (U,) sampling propensity, main task
    user_act_ad: np.ndarray               # (U,) sampling propensity, aux task
    sp_phrases: tuple[tuple[int, ...], ...]
    sp_phrase_category: np.ndarray
    sf_phrase_ids: tuple[int, ...]        # strict subset of SP inventory
    ads: tuple[Ad, ...]
    ad_category: np.ndarray
    user_reprs: tuple[UserRepr, ...]
    keywords_by_category: list[np.ndarray] = field(repr=False, default_factory=list)
    phrases_by_category: list[np.ndarray] = field(repr=False, default_factory=list)
    sf_by_category: list[np.ndarray] = field(repr=False, default_factory=list)
    ads_by_category: list[np.ndarray] = field(repr=False, default_factory=list)
    ad_candidate_latents: list[np.ndarray] = field(repr=False, default_factory=list)

    def user_repr(self, user_id: int) -> UserRepr:
        return self.user_reprs[user_id]


def default_feature_schema(n_categories: int, n_brands: int) -> FeatureSchema:
    """Additional features: three user groups plus the query category group."""
    return FeatureSchema((
        FeatureGroup("profile", "user", (
            FeatureField("gender", 2, CATEGORICAL),
            FeatureField("age", 10, CATEGORICAL),
            FeatureField("occupation", 140, CATEGORICAL),
            FeatureField("city", 100, CATEGORICAL),
            FeatureField("province", 34, CATEGORICAL),
        )),
        FeatureGroup("preference", "user", (
            FeatureField("pref_categories", n_categories, BAG),
            FeatureField("pref_brands", n_brands, BAG),
            FeatureField("discount", 2, CATEGORICAL),
        )),
        FeatureGroup("consumption", "user", (
            FeatureField("purchase_level", 7, CATEGORICAL),
            FeatureField("vip_level", 7, CATEGORICAL),
            FeatureField("high_consumption", 2, CATEGORICAL),
            FeatureField("top_class", 2, CATEGORICAL),
        )),
        FeatureGroup("query_category", "query", (
            FeatureField("category", n_categories, BAG),
        )),
    ))


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.maximum(norms, 1e-12)


def _unit(vec: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(vec)
    return vec / n if n > 1e-12 else vec


def _latent_bin(value: float, n_bins: int) -> int:
    return int(np.clip((value + 1.0) / 2.0 * n_bins, 0, n_bins - 1))


def _corrupt(value: int, n: int, rng: np.random.Generator, noise: float) -> int:
    if rng.random() < noise:
        return int(rng.integers(n))
    return value


def generate_world(config: WorldConfig) -> World:
    """Deterministic world construction from (config, seed)."""
    seed = config.seed
    L = config.latent_dim
    C, K, U = config.n_categories, config.n_keywords, config.n_users

    rng = substream(seed, "world/latents")
    category_latents = _unit_rows(rng.normal(size=(C, L)))
    public_category = rng.integers(0, C, size=K)
    public_latents = _unit_rows(
        category_latents[public_category] + config.keyword_noise * rng.normal(size=(K, L)))
    brand_category = rng.integers(0, C, size=config.n_brands)

    keywords_by_category = [np.flatnonzero(public_category == c) for c in range(C)]
    # every category must own at least one public keyword for phrase sampling
    for c in range(C):
        if keywords_by_category[c].size == 0:
            public_category[c % K] = c
    if any(kc.size == 0 for kc in keywords_by_category):
        keywords_by_category = [np.flatnonzero(public_category == c) for c in range(C)]

    rng_u = substream(seed, "world/users")
    P = config.user_pref_categories
    user_pref_cats = np.stack([rng_u.choice(C, size=P, replace=False) for _ in range(U)])
    user_pref_weights = rng_u.dirichlet(np.ones(P) * 2.0, size=U)
    raw = np.einsum("up,upl->ul", user_pref_weights,
                    category_latents[user_pref_cats])
    user_latents = _unit_rows(raw + config.user_noise * rng_u.normal(size=(U, L)))
    user_act_sf = rng_u.lognormal(0.0, config.user_activity_sigma, size=U)
    user_act_ad = rng_u.lognormal(0.0, config.user_activity_sigma, size=U)

    # private per-user style keywords: aligned with the owner's latent and
    # reachable only through that user's own click history
    PP = config.private_keywords_per_user
    if PP:
        rng_pk = substream(seed, "world/private-keywords")
        private_latents = _unit_rows(
            np.repeat(user_latents, PP, axis=0)
            + config.private_keyword_noise * rng_pk.normal(size=(U * PP, L)))
        private_category = np.repeat(user_pref_cats[:, 0], PP)
        keyword_latents = np.concatenate([public_latents, private_latents])
        keyword_category = np.concatenate([public_category, private_category])
    else:
        keyword_latents, keyword_category = public_latents, public_category

    # public display terms stay short so SP phrases fit exhibition budgets;
    # private terms carry the world seed so vocabularies from different worlds
    # never hash alike
    terms = [f"w{i}" for i in range(K)]
    terms += [f"s{seed}u{u}p{j}" for u in range(U) for j in range(PP)]
    vocab = build_vocabulary([terms])

    # SP phrase inventory; SF inventory is a strict subset of it
    rng_p = substream(seed, "world/phrases")
    sp_phrases: list[tuple[int, ...]] = []
    sp_phrase_category = np.empty(config.n_sp_phrases, dtype=np.int64)
    for i in range(config.n_sp_phrases):
        c = int(rng_p.integers(C))
        pool = keywords_by_category[c]
        size = int(rng_p.integers(1, config.phrase_max_len + 1))
        kws = rng_p.choice(pool, size=min(size, pool.size), replace=False)
        sp_phrases.append(tuple(sorted(int(k) for k in kws)))
        sp_phrase_category[i] = c
    n_sf = max(1, int(round(config.sf_inventory_fraction * config.n_sp_phrases)))
    n_sf = min(n_sf, config.n_sp_phrases - 1)  # keep the subset strict
    sf_phrase_ids = tuple(sorted(int(i) for i in
                                 rng_p.choice(config.n_sp_phrases, size=n_sf, replace=False)))

    phrases_by_category = [np.flatnonzero(sp_phrase_category == c) for c in range(C)]
    sf_set = set(sf_phrase_ids)
    sf_by_category = [np.array([p for p in phrases_by_category[c] if p in sf_set], dtype=np.int64)
                      for c in range(C)]

    # ads: category-anchored titles plus candidate SPs biased to the category
    rng_a = substream(seed, "world/ads")
    ads: list[Ad] = []
    ad_category = np.empty(config.n_ads, dtype=np.int64)
    for i in range(config.n_ads):
        c = int(rng_a.integers(C))
        ad_category[i] = c
        pool = keywords_by_category[c]
        n_local = min(max(config.title_len - 2, 1), pool.size)
        title = list(rng_a.choice(pool, size=n_local, replace=False))
        while len(title) < config.title_len:
            extra = int(rng_a.integers(K))
            if extra not in title:
                title.append(extra)
        title = [int(t) for t in title]
        rng_a.shuffle(title)
        local = phrases_by_category[c]
        n_cat = min(3, local.size, config.sps_per_ad)
        chosen = list(rng_a.choice(local, size=n_cat, replace=False)) if n_cat else []
        while len(chosen) < config.sps_per_ad:
            cand = int(rng_a.integers(config.n_sp_phrases))
            if cand not in chosen:
                chosen.append(cand)
        chosen = [int(j) for j in chosen]
        ads.append(Ad(ad_id=i, title_keywords=tuple(title),
                      sp_candidates=tuple(frozenset(sp_phrases[j]) for j in chosen)))
    ads_by_category = [np.flatnonzero(ad_category == c) for c in range(C)]
    ad_candidate_latents = [
        np.stack([keyword_latents[sorted(sp)].mean(axis=0) for sp in ad.sp_candidates])
        for ad in ads]

    schema = default_feature_schema(C, config.n_brands)
    rng_h = substream(seed, "world/histories")
    rng_f = substream(seed, "world/features")
    user_reprs: list[UserRepr] = []
    brands_by_cat = [np.flatnonzero(brand_category == c) for c in range(C)]
    for u in range(U):
        prefs, weights = user_pref_cats[u], user_pref_weights[u]
        history = []
        for _ in range(config.history_clicks):
            ts = float(rng_h.uniform(0.0, HISTORY_NOW_DAYS))
            if rng_h.random() < 0.85:
                c = int(rng_h.choice(prefs, p=weights))
            else:
                c = int(rng_h.integers(C))
            pool = keywords_by_category[c]
            n_kw = int(rng_h.integers(2, 6))
            kws = [int(k) for k in rng_h.choice(pool, size=min(n_kw, pool.size), replace=False)]
            if PP and rng_h.random() < config.private_click_rate:
                kws.append(K + u * PP + int(rng_h.integers(PP)))
            history.append((ts, kws))
        raw_features = _sample_user_features(
            user_latents[u], prefs, weights, brands_by_cat, config, rng_f)
        flat = {name: v for group in raw_features.values() for name, v in group.items()}
        groups = encode_feature_groups(flat, schema)
        user_reprs.append(build_user_repr(history, now=HISTORY_NOW_DAYS, user_id=u,
                                          feature_groups=groups, feature_values=raw_features))

    return World(
        config=config, vocabulary=vocab, schema=schema,
        category_latents=category_latents, keyword_latents=keyword_latents,
        user_latents=user_latents, keyword_category=keyword_category,
        brand_category=brand_category, user_pref_cats=user_pref_cats,
        user_pref_weights=user_pref_weights, user_act_sf=user_act_sf,
        user_act_ad=user_act_ad, sp_phrases=tuple(sp_phrases),
        sp_phrase_category=sp_phrase_category, sf_phrase_ids=sf_phrase_ids,
        ads=tuple(ads), ad_category=ad_category, user_reprs=tuple(user_reprs),
        keywords_by_category=keywords_by_category,
        phrases_by_category=phrases_by_category, sf_by_category=sf_by_category,
        ads_by_category=ads_by_category, ad_candidate_latents=ad_candidate_latents)


def _sample_user_features(u_lat: np.ndarray, prefs: np.ndarray, weights: np.ndarray,
                          brands_by_cat: list[np.ndarray], config: WorldConfig,
                          rng: np.random.Generator) -> dict[str, dict[str, object]]:
    noise = config.feature_noise
    L = u_lat.shape[0]

    def dim(i: int) -> float:
        return float(u_lat[i % L])

    pref_cats = [int(_corrupt(int(c), config.n_categories, rng, noise)) for c in prefs]
    pref_brands = []
    for c in pref_cats:
        pool = brands_by_cat[c]
        b = int(rng.choice(pool)) if pool.size else int(rng.integers(config.n_brands))
        pref_brands.append(_corrupt(b, config.n_brands, rng, noise))
    purchase = _corrupt(_latent_bin(dim(4), 7), 7, rng, noise)
    vip = _corrupt(_latent_bin((dim(4) + dim(5)) / 2.0, 7), 7, rng, noise)
    return {
        "profile": {
            "gender": _corrupt(int(dim(0) > 0), 2, rng, noise),
            "age": _corrupt(_latent_bin(dim(1), 10), 10, rng, noise),
            "occupation": _corrupt((int(prefs[0]) * 2 + int(dim(2) > 0)) % 140, 140, rng, noise),
            "city": int(rng.integers(100)),
            "province": int(rng.integers(34)),
        },
        "preference": {
            "pref_categories": sorted(set(pref_cats)),
            "pref_brands": sorted(set(pref_brands)),
            "discount": _corrupt(int(dim(3) > 0), 2, rng, noise),
        },
        "consumption": {
            "purchase_level": purchase,
            "vip_level": vip,
            "high_consumption": _corrupt(int(purchase >= 5), 2, rng, noise),
            "top_class": _corrupt(int(vip >= 5), 2, rng, noise),
        },
    }


# ---------------------------------------------------------------------------
# Attraction oracle

def _resolve_user_id(world: World, user: UserRepr | int) -> int:
    uid = user.user_id if isinstance(user, UserRepr) else int(user)
    if not 0 <= uid < world.config.n_users:
        raise ValueError(f"user {uid} is not from this world")
    return uid


def query_latent(world: World, query: Query) -> np.ndarray:
    ids = sorted(query.keywords)
    if ids[0] < 0 or ids[-1] >= world.keyword_latents.shape[0]:
        raise ValueError("query keyword is not from this world")
    return _unit(world.keyword_latents[ids].mean(axis=0))


def _phrase_latent(world: World, sp_phrase) -> np.ndarray:
    ids = sorted(sp_phrase)
    if not ids:
        raise ValueError("empty SP phrase")
    if ids[0] < 0 or ids[-1] >= world.keyword_latents.shape[0]:
        raise ValueError("SP keyword is not from this world")
    return world.keyword_latents[ids].mean(axis=0)


def oracle_attraction(world: World, user: UserRepr | int, query: Query,
                      sp_phrase) -> float:
    """Ground-truth attraction probability: logistic in latent alignment.

    p = sigmoid(tau * <u_lat + q_lat, mean sp keyword latent> + bias);
    deterministic and independent of any ad.
    """
    uid = _resolve_user_id(world, user)
    direction = (world.config.user_weight * world.user_latents[uid]
                 + world.config.query_weight * query_latent(world, query))
    logit = (world.config.click_temperature * float(direction @ _phrase_latent(world, sp_phrase))
             + world.config.click_bias)
    return float(1.0 / (1.0 + np.exp(-logit)))


def oracle_attraction_many(world: World, user: UserRepr | int, query: Query,
                           sp_phrases: Sequence) -> np.ndarray:
    uid = _resolve_user_id(world, user)
    direction = (world.config.user_weight * world.user_latents[uid]
                 + world.config.query_weight * query_latent(world, query))
    mat = np.stack([_phrase_latent(world, sp) for sp in sp_phrases])
    logits = world.config.click_temperature * (mat @ direction) + world.config.click_bias
    return 1.0 / (1.0 + np.exp(-logits))


def position_factor(world: World, position: int) -> float:
    return 1.0 / (1.0 + world.config.position_decay * position)


# ---------------------------------------------------------------------------
# Dataset generators

def sample_query(world: World, user_id: int, rng: np.random.Generator) -> Query:
    cfg = world.config
    if rng.random() < cfg.query_affinity:
        cat = int(rng.choice(world.user_pref_cats[user_id], p=world.user_pref_weights[user_id]))
    else:
        cat = int(rng.integers(cfg.n_categories))
    pool = world.keywords_by_category[cat]
    s = int(rng.integers(1, 4))
    kws = rng.choice(pool, size=min(s, pool.size), replace=False)
    return Query(keywords=frozenset(int(k) for k in kws), category_ids=frozenset({cat}))


def _pick_distinct(primary: np.ndarray, total_pool: int, want: int,
                   rng: np.random.Generator) -> list[int]:
    """Up to half from the primary pool, the rest uniform, all distinct."""
    chosen: list[int] = []
    n_local = min(want // 2, primary.size)
    if n_local:
        chosen.extend(int(i) for i in rng.choice(primary, size=n_local, replace=False))
    seen = set(chosen)
    while len(chosen) < want:
        cand = int(rng.integers(total_pool))
        if cand not in seen:
            seen.add(cand)
            chosen.append(cand)
    return chosen


def _pick_sf_phrases(world: World, cat: int, want: int,
                     rng: np.random.Generator) -> list[int]:
    """Global SF-phrase ids: up to a third from the query's category, rest uniform."""
    local = world.sf_by_category[cat]
    chosen: list[int] = []
    n_local = min(want // 3, local.size)
    if n_local:
        chosen.extend(int(i) for i in rng.choice(local, size=n_local, replace=False))
    seen = set(chosen)
    sf_ids = world.sf_phrase_ids
    while len(chosen) < want and len(seen) < len(sf_ids):
        cand = sf_ids[int(rng.integers(len(sf_ids)))]
        if cand not in seen:
            seen.add(cand)
            chosen.append(cand)
    return chosen


def generate_sf_dataset(world: World, n_impressions: int, rng: np.random.Generator,
                        uniform_users: bool = False) -> list[SfImpression]:
    """SF impressions with Bernoulli clicks drawn from the oracle.

    Users are sampled by their activity propensity; `uniform_users` switches to
    uniform sampling (useful for evaluation sets with balanced user coverage).
    """
    if n_impressions < 1:
        raise ValueError("need at least one impression")
    cfg = world.config
    if uniform_users:
        uids = rng.integers(0, cfg.n_users, size=n_impressions)
    else:
        p_user = world.user_act_sf / world.user_act_sf.sum()
        uids = rng.choice(cfg.n_users, size=n_impressions, p=p_user)
    out: list[SfImpression] = []
    for uid in uids:
        uid = int(uid)
        query = sample_query(world, uid, rng)
        cat = next(iter(query.category_ids))
        picks = _pick_sf_phrases(world, cat, cfg.sf_per_impression, rng)
        shown = tuple(frozenset(world.sp_phrases[p]) for p in picks)
        probs = oracle_attraction_many(world, uid, query, shown)
        clicked = tuple(bool(c) for c in (rng.random(len(shown)) < probs))
        out.append(SfImpression(user=world.user_reprs[uid], query=query,
                                shown=shown, clicked=clicked))
    return out


def generate_ad_dataset(world: World, n_sessions: int,
                        rng: np.random.Generator) -> list[AdSession]:
    """Ordered ad sessions; click probability is the oracle attraction of the
    ad's best SP damped by a position factor."""
    if n_sessions < 1:
        raise ValueError("need at least one session")
    cfg = world.config
    p_user = world.user_act_ad / world.user_act_ad.sum()
    uids = rng.choice(cfg.n_users, size=n_sessions, p=p_user)
    out: list[AdSession] = []
    for uid in uids:
        uid = int(uid)
        query = sample_query(world, uid, rng)
        cat = next(iter(query.category_ids))
        ad_ids = _pick_distinct(world.ads_by_category[cat], cfg.n_ads,
                                min(cfg.session_length, cfg.n_ads), rng)
        rng.shuffle(ad_ids)
        direction = (world.config.user_weight * world.user_latents[uid]
                     + world.config.query_weight * query_latent(world, query))
        items = []
        for pos, ad_id in enumerate(ad_ids):
            logits = (cfg.click_temperature * (world.ad_candidate_latents[ad_id] @ direction)
                      + cfg.click_bias)
            p_best = 1.0 / (1.0 + np.exp(-float(logits.max())))
            p = p_best * position_factor(world, pos)
            items.append((world.ads[ad_id], bool(rng.random() < p)))
        out.append(AdSession(user=world.user_reprs[uid], query=query, items=tuple(items)))
    return out


# ---------------------------------------------------------------------------
# Persistence (audit file; training never reads it)

def _array_sha(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def save_world(world: World, path) -> None:
    doc = {
        "config": asdict(world.config),
        "hashes": {
            "category_latents": _array_sha(world.category_latents),
            "keyword_latents": _array_sha(world.keyword_latents),
            "user_latents": _array_sha(world.user_latents),
        },
        "category_latents": world.category_latents.tolist(),
        "keyword_latents": world.keyword_latents.tolist(),
        "user_latents": world.user_latents.tolist(),
        "keyword_category": world.keyword_category.tolist(),
        "sp_phrases": [list(p) for p in world.sp_phrases],
        "sf_phrase_ids": list(world.sf_phrase_ids),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_world(path) -> World:
    """Rebuild the world from its config and verify latents were unchanged."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    world = generate_world(WorldConfig(**doc["config"]))
    expect = doc.get("hashes", {})
    actual = {
        "category_latents": _array_sha(world.category_latents),
        "keyword_latents": _array_sha(world.keyword_latents),
        "user_latents": _array_sha(world.user_latents),
    }
    if expect and expect != actual:
        raise ValueError(f"{path}: stored latents do not match regenerated world")
    return world
