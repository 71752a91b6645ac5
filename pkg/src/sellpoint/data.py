"""Vocabulary, multi-hot encodings, user interest representation, multi-group
feature encoding, and the JSON-Lines dataset formats."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

LONG_TERM_WINDOW_DAYS = 30.0
SHORT_TERM_WINDOW_DAYS = 7.0
MAX_INTEREST_KEYWORDS = 10


# ---------------------------------------------------------------------------
# Vocabulary

@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional keyword <-> dense integer id map."""

    terms: tuple[str, ...]
    index: dict[str, int] = field(repr=False)

    def __post_init__(self):
        if len(self.index) != len(self.terms):
            raise ValueError("duplicate terms in vocabulary")

    def __len__(self) -> int:
        return len(self.terms)

    def lookup(self, term: str) -> int:
        return self.index[term]

    def term_of(self, keyword_id: int) -> str:
        return self.terms[keyword_id]

    def sha256(self) -> str:
        """Content hash, independent of on-disk formatting."""
        blob = "\n".join(self.terms).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _vocabulary_from_terms(terms: Sequence[str]) -> Vocabulary:
    return Vocabulary(terms=tuple(terms), index={t: i for i, t in enumerate(terms)})


def build_vocabulary(keyword_lists: Iterable[Sequence[str]]) -> Vocabulary:
    """Assign dense ids in first-appearance order over a stream of keyword lists."""
    terms: list[str] = []
    seen: set[str] = set()
    for kw_list in keyword_lists:
        for kw in kw_list:
            if kw not in seen:
                seen.add(kw)
                terms.append(kw)
    if not terms:
        raise ValueError("empty corpus")
    return _vocabulary_from_terms(terms)


def encode_multi_hot(keywords: Sequence[str], vocab: Vocabulary) -> frozenset[int]:
    """Map keyword strings to the set of in-vocabulary ids.

    Duplicates collapse; out-of-vocabulary terms are dropped silently.
    """
    ids = frozenset(vocab.index[kw] for kw in keywords if kw in vocab.index)
    if not ids:
        raise ValueError("no encodable keywords")
    return ids


def save_vocabulary(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, term in enumerate(vocab.terms):
            fh.write(json.dumps({"id": i, "term": term}, ensure_ascii=False) + "\n")


def load_vocabulary(path) -> Vocabulary:
    terms: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["id"] != len(terms):
                raise ValueError(f"{path}: non-dense id at line {line_no + 1}")
            terms.append(rec["term"])
    if not terms:
        raise ValueError(f"{path}: empty vocabulary")
    return _vocabulary_from_terms(terms)


# ---------------------------------------------------------------------------
# Feature schema and multi-group multi-hot values

CATEGORICAL = "categorical"
BAG = "bag"


@dataclass(frozen=True)
class FeatureField:
    name: str
    cardinality: int
    kind: str  # CATEGORICAL or BAG

    def __post_init__(self):
        if self.cardinality <= 0:
            raise ValueError(f"field {self.name!r}: cardinality must be positive")
        if self.kind not in (CATEGORICAL, BAG):
            raise ValueError(f"field {self.name!r}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    entity: str  # "user" or "query"
    fields: tuple[FeatureField, ...]

    def __post_init__(self):
        if self.entity not in ("user", "query"):
            raise ValueError(f"group {self.name!r}: entity must be user or query")

    @property
    def cardinality(self) -> int:
        return sum(f.cardinality for f in self.fields)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered groups of semantically related fields.

    Group order is fixed and determines the concatenation order of the pooled
    group embeddings downstream (user groups first, then query groups).
    """

    groups: tuple[FeatureGroup, ...] = ()

    def __post_init__(self):
        names = [f.name for g in self.groups for f in g.fields]
        if len(names) != len(set(names)):
            raise ValueError("field names must be unique across the schema")
        group_names = [g.name for g in self.groups]
        if len(group_names) != len(set(group_names)):
            raise ValueError("group names must be unique")

    def entity_groups(self, entity: str) -> tuple[FeatureGroup, ...]:
        return tuple(g for g in self.groups if g.entity == entity)

    def group(self, name: str) -> FeatureGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def restrict(self, group_names: Sequence[str]) -> "FeatureSchema":
        """Keep only the named groups, preserving schema order."""
        known = {g.name for g in self.groups}
        for name in group_names:
            if name not in known:
                raise ValueError(f"unknown feature group {name!r}")
        keep = set(group_names)
        return FeatureSchema(tuple(g for g in self.groups if g.name in keep))

    def to_dict(self) -> dict:
        return {"groups": [
            {"name": g.name, "entity": g.entity,
             "fields": [{"name": f.name, "cardinality": f.cardinality, "kind": f.kind}
                        for f in g.fields]}
            for g in self.groups]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSchema":
        groups = tuple(
            FeatureGroup(
                name=g["name"], entity=g["entity"],
                fields=tuple(FeatureField(f["name"], f["cardinality"], f["kind"])
                             for f in g["fields"]))
            for g in d["groups"])
        return cls(groups)


def save_schema(schema: FeatureSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


def load_schema(path) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_dict(json.load(fh))


@dataclass(frozen=True)
class FeatureGroups:
    """Per-group sets of active ids, local to each group's concatenated index space."""

    active: Mapping[str, frozenset[int]] = field(default_factory=dict)

    def get(self, group_name: str) -> frozenset[int]:
        return self.active.get(group_name, frozenset())

    def is_empty(self) -> bool:
        return all(not ids for ids in self.active.values())


EMPTY_FEATURES = FeatureGroups({})


def encode_feature_groups(entity_features: Mapping[str, object],
                          schema: FeatureSchema) -> FeatureGroups:
    """Encode named field values into per-group active-id sets.

    Offsets accumulate across a group's fields in schema order; categorical
    fields take a single int value, bag fields an iterable of ints. Missing
    fields contribute nothing.
    """
    field_index: dict[str, tuple[str, int, FeatureField]] = {}
    for g in schema.groups:
        offset = 0
        for f in g.fields:
            field_index[f.name] = (g.name, offset, f)
            offset += f.cardinality
    for name in entity_features:
        if name not in field_index:
            raise ValueError(f"unknown feature name {name!r}")

    active: dict[str, set[int]] = {g.name: set() for g in schema.groups}
    for name, value in entity_features.items():
        group_name, offset, fdef = field_index[name]
        if fdef.kind == CATEGORICAL:
            values = [value]
        else:
            values = list(value)  # type: ignore[arg-type]
        for v in values:
            v = int(v)  # type: ignore[call-overload]
            if not 0 <= v < fdef.cardinality:
                raise ValueError(
                    f"feature {name!r}: value {v} out of range [0, {fdef.cardinality})")
            active[group_name].add(offset + v)
    return FeatureGroups({name: frozenset(ids) for name, ids in active.items()})


# ---------------------------------------------------------------------------
# Entities and instances

@dataclass(frozen=True)
class Query:
    keywords: frozenset[int]
    category_ids: frozenset[int] = frozenset()

    def __post_init__(self):
        if not self.keywords:
            raise ValueError("query needs at least one keyword")


@dataclass(frozen=True)
class Ad:
    ad_id: int
    title_keywords: tuple[int, ...]
    sp_candidates: tuple[frozenset[int], ...]

    def __post_init__(self):
        if not self.title_keywords:
            raise ValueError(f"ad {self.ad_id}: title must be non-empty")
        if not self.sp_candidates or any(not sp for sp in self.sp_candidates):
            raise ValueError(f"ad {self.ad_id}: needs non-empty SP candidates")


@dataclass(frozen=True)
class UserRepr:
    """Keyword-based user representation: top frequent clicked-title keywords
    in a 1-month (long-term) and 1-week (short-term) window, plus optional
    multi-group features for the augmented model."""

    user_id: int
    long_term: tuple[int, ...] = ()
    short_term: tuple[int, ...] = ()
    feature_groups: FeatureGroups = EMPTY_FEATURES
    feature_values: Mapping[str, object] | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.long_term) > MAX_INTEREST_KEYWORDS or len(self.short_term) > MAX_INTEREST_KEYWORDS:
            raise ValueError("interest keyword lists are capped at 10 entries")

    def interest_keywords(self) -> frozenset[int]:
        return frozenset(self.long_term) | frozenset(self.short_term)


@dataclass(frozen=True)
class SfInstance:
    user: UserRepr
    query: Query
    sf: frozenset[int]
    label: int

    def __post_init__(self):
        if not self.sf:
            raise ValueError("SF keyword set must be non-empty")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass(frozen=True)
class AdInstance:
    user: UserRepr
    query: Query
    ad: Ad
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def build_user_repr(click_history: Iterable[tuple[float, Sequence[int]]],
                    now: float, user_id: int = 0,
                    feature_groups: FeatureGroups = EMPTY_FEATURES,
                    feature_values: Mapping[str, object] | None = None) -> UserRepr:
    """Top-10 most frequent clicked-title keywords per window.

    `click_history` is (timestamp_days, title keyword ids) pairs. Frequency
    ties break by earliest first occurrence, then keyword id.
    """
    clicks = sorted(click_history, key=lambda c: c[0])
    long_term = _top_keywords(clicks, now, LONG_TERM_WINDOW_DAYS)
    short_term = _top_keywords(clicks, now, SHORT_TERM_WINDOW_DAYS)
    return UserRepr(user_id=user_id, long_term=long_term, short_term=short_term,
                    feature_groups=feature_groups, feature_values=feature_values)


def _top_keywords(clicks: Sequence[tuple[float, Sequence[int]]],
                  now: float, window_days: float) -> tuple[int, ...]:
    counts: dict[int, int] = {}
    first_seen: dict[int, int] = {}
    seq = 0
    for ts, kws in clicks:
        if ts > now or ts < now - window_days:
            continue
        for k in kws:
            counts[k] = counts.get(k, 0) + 1
            if k not in first_seen:
                first_seen[k] = seq
            seq += 1
    ranked = sorted(counts, key=lambda k: (-counts[k], first_seen[k], k))
    return tuple(ranked[:MAX_INTEREST_KEYWORDS])


# ---------------------------------------------------------------------------
# JSON-Lines instance formats

def _user_to_dict(user: UserRepr) -> dict:
    rec: dict = {"id": user.user_id, "long": list(user.long_term),
                 "short": list(user.short_term)}
    if user.feature_values:
        rec["features"] = {
            group: {fname: (list(v) if isinstance(v, (list, tuple, set, frozenset)) else v)
                    for fname, v in fields.items()}
            for group, fields in user.feature_values.items()}
    return rec


def _user_from_dict(rec: Mapping, schema: FeatureSchema | None) -> UserRepr:
    raw = rec.get("features") or {}
    groups = EMPTY_FEATURES
    if schema is not None and raw:
        flat = {fname: v for fields in raw.values() for fname, v in fields.items()}
        groups = encode_feature_groups(flat, schema)
    return UserRepr(user_id=rec["id"], long_term=tuple(rec["long"]),
                    short_term=tuple(rec["short"]), feature_groups=groups,
                    feature_values=raw or None)


def _query_to_dict(query: Query) -> dict:
    return {"keywords": sorted(query.keywords),
            "categories": sorted(query.category_ids)}


def _query_from_dict(rec: Mapping) -> Query:
    return Query(keywords=frozenset(rec["keywords"]),
                 category_ids=frozenset(rec.get("categories", ())))


def save_sf_instances(instances: Iterable[SfInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {"user": _user_to_dict(inst.user),
                   "query": _query_to_dict(inst.query),
                   "sf": sorted(inst.sf), "label": inst.label}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_sf_instances(path, schema: FeatureSchema | None = None) -> list[SfInstance]:
    out: list[SfInstance] = []
    user_cache: dict[int, UserRepr] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            uid = rec["user"]["id"]
            if uid not in user_cache:
                user_cache[uid] = _user_from_dict(rec["user"], schema)
            out.append(SfInstance(user=user_cache[uid],
                                  query=_query_from_dict(rec["query"]),
                                  sf=frozenset(rec["sf"]), label=rec["label"]))
    return out


def save_ad_instances(instances: Iterable[AdInstance], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            rec = {"user": _user_to_dict(inst.user),
                   "query": _query_to_dict(inst.query),
                   "ad": {"ad_id": inst.ad.ad_id,
                          "title": list(inst.ad.title_keywords),
                          "sps": [sorted(sp) for sp in inst.ad.sp_candidates]},
                   "label": inst.label}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_ad_instances(path, schema: FeatureSchema | None = None) -> list[AdInstance]:
    out: list[AdInstance] = []
    user_cache: dict[int, UserRepr] = {}
    ad_cache: dict[int, Ad] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            uid = rec["user"]["id"]
            if uid not in user_cache:
                user_cache[uid] = _user_from_dict(rec["user"], schema)
            ad_rec = rec["ad"]
            aid = ad_rec["ad_id"]
            if aid not in ad_cache:
                ad_cache[aid] = Ad(ad_id=aid,
                                   title_keywords=tuple(ad_rec["title"]),
                                   sp_candidates=tuple(frozenset(sp) for sp in ad_rec["sps"]))
            out.append(AdInstance(user=user_cache[uid],
                                  query=_query_from_dict(rec["query"]),
                                  ad=ad_cache[aid], label=rec["label"]))
    return out
