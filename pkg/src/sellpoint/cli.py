"""Command-line entry point tying the modules into reproducible experiments.

Commands: generate, train, eval, group-analysis, ablation, abtest, refine,
serve-bench, gradcheck. Every command reads/writes only its declared paths,
derives all randomness from the config seed, and drops a run.json manifest
next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from importlib.metadata import PackageNotFoundError, version as pkg_version
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as cfgmod
from . import data as datamod
from . import evaluation as evalmod
from . import serving as servemod
from . import training as trainmod
from . import world as worldmod
from .gradcheck import run_all_checks
from .network import (AUGMENTED, BASIC, MAIN, MULTITASK, ModelVariant,
                      init_network_params, score_sf_instances)
from .numeric import substream

logger = logging.getLogger(__name__)

COMMANDS = ("generate", "train", "eval", "group-analysis", "ablation", "abtest",
            "refine", "serve-bench", "gradcheck")


class CliError(Exception):
    """Usage or input error surfaced as a message plus nonzero exit status."""
STRATEGIES = ("basic", "alternate", "pretrain")
VARIANTS = (BASIC, MULTITASK, AUGMENTED)
POLICIES = ("random", "oracle", "popular", "model")


def _package_version() -> str:
    try:
        return pkg_version("sellpoint")
    except PackageNotFoundError:
        return "unknown"


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, cfg: cfgmod.RunConfig,
                    inputs: dict[str, str]) -> None:
    manifest = {
        "command": command,
        "config": cfgmod.config_to_dict(cfg),
        "config_sha256": cfgmod.config_sha256(cfg),
        "inputs": {name: _file_sha256(path) for name, path in inputs.items()},
        "package_version": _package_version(),
        "seed": cfg.seed,
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _write_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _out_dir(cfg: cfgmod.RunConfig, args) -> Path:
    out = Path(args.out or cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data_dir(cfg: cfgmod.RunConfig, args) -> Path:
    data = args.data if getattr(args, "data", None) else cfg.paths.data
    if not data:
        raise CliError("no data directory (use --data or paths.data)")
    d = Path(data)
    if not d.is_dir():
        raise CliError(f"data directory {d} does not exist")
    return d


def _load_config(args) -> cfgmod.RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "k", None) is not None:
        overrides.append(f"exhibition.k={args.k}")
    if getattr(args, "budget", None) is not None:
        overrides.append(f"exhibition.budget={args.budget}")
    if getattr(args, "emphasis", None) is not None:
        overrides.append(f"exhibition.emphasis={'true' if args.emphasis == 'on' else 'false'}")
    if getattr(args, "variant", None) is not None:
        overrides.append(f"model.variant={args.variant}")
    return cfgmod.load_config(args.config, overrides)


def _load_datasets(data_dir: Path, need_ad: bool):
    vocab = datamod.load_vocabulary(data_dir / "vocab.jsonl")
    schema = datamod.load_schema(data_dir / "schema.json")
    sf = datamod.load_sf_instances(data_dir / "sf.jsonl", schema)
    ad = datamod.load_ad_instances(data_dir / "ad.jsonl", schema) if need_ad else []
    return vocab, schema, sf, ad


def _split_sf(sf, training: trainmod.TrainingConfig):
    rng = substream(training.seed, "split/sf")
    return trainmod.split_train_test(sf, training.split_ratio, rng)


def _build_variant(kind: str, schema, features: str | None) -> ModelVariant:
    if kind == AUGMENTED:
        if features:
            schema = schema.restrict([f.strip() for f in features.split(",") if f.strip()])
        return ModelVariant(AUGMENTED, schema)
    return ModelVariant(kind)


# ---------------------------------------------------------------------------
# Commands

def cmd_generate(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    world = worldmod.generate_world(cfg.world)
    sf_impressions = worldmod.generate_sf_dataset(
        world, cfg.data.sf_impressions, substream(cfg.seed, "generate/sf"))
    ad_sessions = worldmod.generate_ad_dataset(
        world, cfg.data.ad_sessions, substream(cfg.seed, "generate/ad"))
    sf = trainmod.sample_negatives_sf(sf_impressions, cfg.training.sf_neg_ratio,
                                      substream(cfg.seed, "negatives/sf"))
    ad = trainmod.sample_negatives_ad(ad_sessions, cfg.training.ad_neg_ratio,
                                      substream(cfg.seed, "negatives/ad"))
    datamod.save_vocabulary(world.vocabulary, out / "vocab.jsonl")
    datamod.save_schema(world.schema, out / "schema.json")
    datamod.save_sf_instances(sf, out / "sf.jsonl")
    datamod.save_ad_instances(ad, out / "ad.jsonl")
    worldmod.save_world(world, out / "world.json")
    _write_manifest(out, "generate", cfg, {})
    sf_pos = sum(i.label for i in sf)
    ad_pos = sum(i.label for i in ad)
    print(f"generated world seed={cfg.world.seed}: "
          f"{len(world.vocabulary)} keywords, {cfg.world.n_users} users, "
          f"{cfg.world.n_ads} ads")
    print(f"sf.jsonl: {len(sf)} instances ({sf_pos} positive)")
    print(f"ad.jsonl: {len(ad)} instances ({ad_pos} positive)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    data_dir = _data_dir(cfg, args)
    strategy = args.strategy
    kind = cfg.model.variant
    if strategy == "basic" and kind == MULTITASK:
        raise CliError("the basic strategy trains the main task only; "
                         "use variant basic or augmented")
    if strategy in ("alternate", "pretrain") and kind == BASIC:
        raise CliError(f"the {strategy} strategy needs an auxiliary head; "
                         "use variant multitask or augmented")
    need_ad = strategy in ("alternate", "pretrain")
    vocab, schema, sf, ad = _load_datasets(data_dir, need_ad)
    variant = _build_variant(kind, schema, args.features)
    sf_train, sf_test = _split_sf(sf, cfg.training)
    params = init_network_params(variant, len(vocab), cfg.model.dims,
                                 seed=cfg.training.seed)
    if strategy == "basic":
        result = trainmod.train_basic(params, sf_train, cfg.training)
    elif strategy == "alternate":
        result = trainmod.train_alternate(params, sf_train, ad, cfg.training)
    else:
        result = trainmod.train_pretrain(params, sf_train, ad, cfg.training)
    ckpt.save_checkpoint(result.params, out / "checkpoint.bin",
                         vocab_sha256=vocab.sha256(), seed=cfg.training.seed,
                         training_config={
                             "seed": cfg.training.seed,
                             "split_ratio": cfg.training.split_ratio,
                             "strategy": strategy,
                         })
    trainmod.save_history_csv(result.history, out / "loss_history.csv")
    inputs = {"sf.jsonl": data_dir / "sf.jsonl", "vocab.jsonl": data_dir / "vocab.jsonl"}
    if need_ad:
        inputs["ad.jsonl"] = data_dir / "ad.jsonl"
    _write_manifest(out, "train", cfg, inputs)
    for task in (MAIN, "aux"):
        entries = [h for h in result.history if h.task == task]
        if entries:
            print(f"{task}: {len(entries)} epochs, final mean loss {entries[-1].mean_loss:.6f}")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return 0


def _load_checkpoint_for(data_dir: Path, path) -> tuple:
    vocab = datamod.load_vocabulary(data_dir / "vocab.jsonl")
    params, meta = ckpt.load_checkpoint(path)
    ckpt.check_vocabulary(meta, vocab.sha256())
    return vocab, params, meta


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    data_dir = _data_dir(cfg, args)
    ckpt_path = args.checkpoint or cfg.paths.checkpoint
    if not ckpt_path:
        raise CliError("eval needs --checkpoint")
    vocab, params, meta = _load_checkpoint_for(data_dir, ckpt_path)
    schema = datamod.load_schema(data_dir / "schema.json")
    sf = datamod.load_sf_instances(data_dir / "sf.jsonl", schema)
    snap = dict(meta.training_config or {})
    split_cfg = trainmod.TrainingConfig(
        seed=snap.get("seed", cfg.training.seed),
        split_ratio=snap.get("split_ratio", cfg.training.split_ratio))
    sf_train, sf_test = _split_sf(sf, split_cfg)
    scores = score_sf_instances(params, sf_test)
    labels = [i.label for i in sf_test]
    test_auc = evalmod.auc(scores, labels)
    _write_csv(out / "eval.csv", [["dataset", "n", "auc"],
                                  ["sf_test", len(sf_test), f"{test_auc:.12f}"]])
    _write_manifest(out, "eval", cfg, {"sf.jsonl": data_dir / "sf.jsonl",
                                       "checkpoint": ckpt_path})
    print(f"sf_test AUC: {test_auc:.6f} (n={len(sf_test)})")
    return 0


def _parse_checkpoint_list(items) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or []:
        for piece in item.split(","):
            if not piece:
                continue
            if "=" not in piece:
                raise CliError(f"--checkpoints entries look like name=path, got {piece!r}")
            name, path = piece.split("=", 1)
            out[name] = path
    return out


def cmd_group_analysis(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    data_dir = _data_dir(cfg, args)
    named = _parse_checkpoint_list(args.checkpoints) or dict(cfg.paths.checkpoints)
    if len(named) < 2:
        raise CliError("group-analysis compares at least two checkpoints "
                         "(--checkpoints basic=...,multitask=...)")
    vocab = datamod.load_vocabulary(data_dir / "vocab.jsonl")
    schema = datamod.load_schema(data_dir / "schema.json")
    sf = datamod.load_sf_instances(data_dir / "sf.jsonl", schema)
    ad = datamod.load_ad_instances(data_dir / "ad.jsonl", schema)
    loaded: dict[str, tuple] = {}
    snap = None
    for name, path in named.items():
        params, meta = ckpt.load_checkpoint(path)
        ckpt.check_vocabulary(meta, vocab.sha256())
        if snap is None:
            snap = dict(meta.training_config or {})
        elif dict(meta.training_config or {}).get("seed") != snap.get("seed"):
            logger.warning("checkpoints were trained with different seeds; "
                           "the SF split follows %r", next(iter(named)))
        loaded[name] = params
    split_cfg = trainmod.TrainingConfig(seed=(snap or {}).get("seed", cfg.training.seed),
                                        split_ratio=(snap or {}).get("split_ratio",
                                                                     cfg.training.split_ratio))
    sf_train, sf_test = _split_sf(sf, split_cfg)
    main_clicks = trainmod.count_user_clicks(sf_train)
    aux_clicks = trainmod.count_user_clicks(ad)
    zero_main = {i.user.user_id: 0 for i in sf_test}
    main_clicks = {**zero_main, **main_clicks}
    aux_clicks = {**{i.user.user_id: 0 for i in sf_test}, **aux_clicks}
    scores = {name: score_sf_instances(params, sf_test) for name, params in loaded.items()}
    result = evalmod.group_analysis(sf_test, scores, main_clicks, aux_clicks)
    _write_csv(out / "group_analysis.csv", result.to_csv_rows())
    (out / "group_analysis.txt").write_text(result.render_text() + "\n", encoding="utf-8")
    _write_manifest(out, "group-analysis", cfg,
                    {"sf.jsonl": data_dir / "sf.jsonl", "ad.jsonl": data_dir / "ad.jsonl",
                     **{f"checkpoint_{n}": p for n, p in named.items()}})
    print(result.render_text())
    return 0


def cmd_ablation(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    data_dir = _data_dir(cfg, args)
    vocab, schema, sf, ad = _load_datasets(data_dir, need_ad=True)
    sf_train, sf_test = _split_sf(sf, cfg.training)
    base = ModelVariant(AUGMENTED, schema)
    if args.features:
        groups = [g.strip() for g in args.features.split(",") if g.strip()]
    else:
        groups = [g.name for g in schema.groups]
    subsets: list[tuple[str, ...]] = [()]
    subsets += [(g,) for g in groups]
    if len(groups) > 1:
        subsets.append(tuple(groups))
    result = evalmod.ablation_run(
        base, subsets,
        evalmod.ExperimentData(sf_train=sf_train, sf_test=sf_test, ad_train=ad,
                               vocab_size=len(vocab)),
        cfg.training, dims=cfg.model.dims)
    _write_csv(out / "ablation.csv", result.to_csv_rows())
    (out / "ablation.txt").write_text(result.render_text() + "\n", encoding="utf-8")
    _write_manifest(out, "ablation", cfg, {"sf.jsonl": data_dir / "sf.jsonl",
                                           "ad.jsonl": data_dir / "ad.jsonl"})
    print(result.render_text())
    return 0


def _make_policy(name: str, world, k: int, params=None):
    if name == "random":
        return evalmod.random_policy(k, seed=world.config.seed)
    if name == "oracle":
        return evalmod.oracle_policy(world, k)
    if name == "popular":
        return evalmod.popular_policy(world, k)
    if name == "model":
        if params is None:
            raise CliError("the model policy needs --checkpoint")
        return evalmod.model_policy(params, k)
    raise CliError(f"unknown policy {name!r} (choose from {POLICIES})")


def cmd_abtest(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    data_dir = _data_dir(cfg, args)
    world = worldmod.load_world(data_dir / "world.json")
    params = None
    if "model" in (args.control, args.treatment):
        ckpt_path = args.checkpoint or cfg.paths.checkpoint
        if not ckpt_path:
            raise CliError("the model policy needs --checkpoint")
        vocab = datamod.load_vocabulary(data_dir / "vocab.jsonl")
        params, meta = ckpt.load_checkpoint(ckpt_path)
        ckpt.check_vocabulary(meta, vocab.sha256())
    k = cfg.exhibition.k
    control = _make_policy(args.control, world, k, params)
    treatment = _make_policy(args.treatment, world, k, params)
    result = evalmod.ab_simulate(control, treatment, world, args.n,
                                 substream(cfg.seed, "abtest"))
    t = result.table
    _write_csv(out / "abtest.csv", [
        ["control", "treatment", "n", "ctr_control", "ctr_treatment",
         "relative_change", "p_value", "clicks_control", "misses_control",
         "clicks_treatment", "misses_treatment"],
        [args.control, args.treatment, result.n_impressions,
         f"{result.ctr_control:.8f}", f"{result.ctr_treatment:.8f}",
         f"{result.relative_change:.8f}", f"{result.p_value:.6g}",
         t.clicks_a, t.misses_a, t.clicks_b, t.misses_b]])
    _write_manifest(out, "abtest", cfg, {"world.json": data_dir / "world.json"})
    print(result.render_text())
    return 0


def cmd_refine(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    data_dir = _data_dir(cfg, args)
    ckpt_path = args.checkpoint or cfg.paths.checkpoint
    pages_path = args.pages or cfg.paths.pages
    if not ckpt_path or not pages_path:
        raise CliError("refine needs --checkpoint and --pages")
    vocab, params, _ = _load_checkpoint_for(data_dir, ckpt_path)
    schema = datamod.load_schema(data_dir / "schema.json")
    results_path = out / "refined.jsonl"
    n_pages = 0
    with open(pages_path, encoding="utf-8") as fin, \
            open(results_path, "w", encoding="utf-8") as fout:
        for line in fin:
            if not line.strip():
                continue
            page = json.loads(line)
            user = datamod._user_from_dict(page["user"], schema)
            query = datamod._query_from_dict(page["query"])
            ads = [datamod.Ad(ad_id=a["ad_id"], title_keywords=tuple(a["title"]),
                              sp_candidates=tuple(frozenset(sp) for sp in a["sps"]))
                   for a in page["ads"]]
            results, elapsed = servemod.score_page(params, vocab, user, query, ads,
                                                   cfg.exhibition)
            for r in results:
                fout.write(json.dumps({
                    "ad_id": r.ad_id, "sps": list(r.chosen_sps),
                    "display": r.display_string, "scores": list(r.scores),
                }, ensure_ascii=False) + "\n")
            n_pages += 1
    _write_manifest(out, "refine", cfg, {"pages": pages_path, "checkpoint": ckpt_path})
    print(f"refined {n_pages} pages -> {results_path}")
    return 0


def build_benchmark_pages(world, n_pages: int, ads_per_page: int, seed: int):
    rng = substream(seed, "serve-bench/pages")
    pages = []
    for _ in range(n_pages):
        uid = int(rng.integers(world.config.n_users))
        query = worldmod.sample_query(world, uid, rng)
        ad_ids = rng.choice(world.config.n_ads, size=min(ads_per_page, world.config.n_ads),
                            replace=False)
        pages.append((world.user_reprs[uid], query, [world.ads[int(a)] for a in ad_ids]))
    return pages


def cmd_serve_bench(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg, args)
    data_dir = _data_dir(cfg, args)
    world = worldmod.load_world(data_dir / "world.json")
    vocab = world.vocabulary
    ckpt_path = args.checkpoint or cfg.paths.checkpoint
    if ckpt_path:
        params, meta = ckpt.load_checkpoint(ckpt_path)
        ckpt.check_vocabulary(meta, vocab.sha256())
    else:
        logger.warning("serve-bench: no checkpoint given, timing freshly "
                       "initialized parameters")
        params = init_network_params(ModelVariant(BASIC), len(vocab), cfg.model.dims,
                                     seed=cfg.seed)
    pages = build_benchmark_pages(world, args.pages_count, args.ads, cfg.seed)
    result = servemod.benchmark_pages(params, vocab, pages, cfg.exhibition)
    _write_csv(out / "serve_bench.csv", result.to_csv_rows())
    _write_manifest(out, "serve-bench", cfg, {"world.json": data_dir / "world.json"})
    print(f"pages={len(pages)} ads/page={args.ads} "
          f"p50={result.p50_ms:.2f}ms p95={result.p95_ms:.2f}ms "
          f"p99={result.p99_ms:.2f}ms throughput={result.pages_per_second:.1f}/s")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all_checks(n_configs=args.configs, seed=args.seed or 0)
    ok = True
    for r in results:
        status = "PASS" if r.passed(args.tol) else "FAIL"
        ok &= r.passed(args.tol)
        print(f"{r.variant:<10} {r.task:<5} configs={r.n_configs} "
              f"max_rel_error={r.max_rel_error:.3e}  {status}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# Argument parsing

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE",
                   help="config override, repeatable")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sellpoint",
        description="Personalized selling-point prediction experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="emit a synthetic dataset directory")
    _add_common(p)

    p = sub.add_parser("train", help="train a model variant")
    _add_common(p)
    p.add_argument("--data", help="dataset directory from `generate`")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--strategy", choices=STRATEGIES, default="basic")
    p.add_argument("--features", help="comma-separated feature groups "
                                      "(augmented variant only)")
    p.add_argument("--k", type=int, help=argparse.SUPPRESS)
    p.add_argument("--budget", type=int, help=argparse.SUPPRESS)
    p.add_argument("--emphasis", choices=("on", "off"), help=argparse.SUPPRESS)

    p = sub.add_parser("eval", help="held-out AUC of a checkpoint")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")

    p = sub.add_parser("group-analysis", help="per-click-count-group AUC comparison")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoints", action="append", metavar="NAME=PATH[,NAME=PATH...]")

    p = sub.add_parser("ablation", help="feature-group ablation study")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--features", help="comma-separated groups to ablate over")

    p = sub.add_parser("abtest", help="simulated A/B test between two policies")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--control", default="random", help=f"one of {POLICIES}")
    p.add_argument("--treatment", default="oracle", help=f"one of {POLICIES}")
    p.add_argument("--n", type=int, default=200_000, help="total impressions")
    p.add_argument("--checkpoint", help="needed by the model policy")
    p.add_argument("--k", type=int, help="SPs displayed per impression")

    p = sub.add_parser("refine", help="refine titles for pages of ads")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--pages", help="JSON-Lines file of (user, query, ads) pages")
    p.add_argument("--k", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--emphasis", choices=("on", "off"))

    p = sub.add_parser("serve-bench", help="page-scoring latency benchmark")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--pages-count", type=int, default=30)
    p.add_argument("--ads", type=int, default=200, help="ads per page")

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)

    return parser


_HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "group-analysis": cmd_group_analysis,
    "ablation": cmd_ablation,
    "abtest": cmd_abtest,
    "refine": cmd_refine,
    "serve-bench": cmd_serve_bench,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (CliError, ValueError, FileNotFoundError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
