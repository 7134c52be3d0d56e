"""Command-line entry point.

``mafin <command> [options]`` with commands ``ingest``, ``cache``,
``gen-queries``, ``train``, ``evaluate`` and ``retrieve``.

Settings resolve as: command-line flags, then the JSON object given with
``--config``, then the :class:`RunConfig` defaults. Keys of the config file
are the :class:`RunConfig` field names, e.g.::

    {"data": "toy", "out": "runs/a", "provider": "stub", "stub_dim": 256,
     "scorer": "mafin", "negatives": 32, "lr": 1e-4, "cutoffs": [1, 3, 5]}

Exit codes: 0 success, 1 usage error, 2 data error, 3 provider error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from mafin.augmodel import AugmentingModel, CheckpointError
from mafin.core import derive_seed
from mafin.evalx import comparison_table, default_specs, evaluate
from mafin.genqueries import TOKEN_ENV as LLM_TOKEN_ENV
from mafin.genqueries import OfflineGenerator, RemoteGenerator, SyntheticPairSet, generate_pairs
from mafin.ingest import BeirDataset, DataError, QuerySet, Splits, SplitSpec, load_beir, split
from mafin.providers import (
    TOKEN_ENV as EMBED_TOKEN_ENV,
    CachedProvider,
    EmbeddingCache,
    FileStoreProvider,
    HTTPProvider,
    ProviderError,
    StubProvider,
    cache_fill,
)
from mafin.ranking import LOSS_KINDS, LossConfig
from mafin.scoring import KINDS, TRAINABLE, LinearTransform, Scorer, retrieve_many, write_ranked_tsv
from mafin.trainer import SMOOTHING_GRID, TrainConfig, TrainingError, checkpoint_load, checkpoint_save, grid_search_smoothing, train

log = logging.getLogger("mafin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROVIDER = 0, 1, 2, 3
PROVIDERS = ("stub", "store", "http")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a command needs; written verbatim into every output artifact."""

    data: str | None = None
    out: str = "mafin-out"
    seed: int = 0
    use_title: bool = True
    # black-box provider
    provider: str = "stub"
    cache: str | None = None
    stub_seed: int = 0
    stub_dim: int = 256
    embed_url: str | None = None
    embed_model: str | None = None
    embed_dim: int | None = None
    embed_token_env: str = EMBED_TOKEN_ENV
    # synthetic queries
    generator: str = "offline"
    pairs: str | None = None
    llm_url: str | None = None
    llm_model: str | None = None
    llm_token_env: str = LLM_TOKEN_ENV
    llm_temperature: float = 0.7
    # splits
    split_mode: str = "fraction"
    train_fraction: float = 0.8
    split_manifest: str | None = None
    # scorer, loss, trainer
    scorer: str = "mafin"
    scorers: list[str] = field(default_factory=lambda: ["bb_only", "mafin"])
    d_aug: int = 64
    feature_dim: int = 1 << 18
    rank: int | None = None
    supervised: bool = True
    loss: str = "infonce"
    temperature: float = 1.0
    smoothing: float = 0.0
    smoothing_grid: bool = False
    negatives: int = 32
    train_score: str = "combined_mafin"
    optimizer: str = "adam"
    lr: float = 1e-3
    max_epochs: int = 100
    patience: int = 4
    monitor: str = "NDCG@10"
    # evaluation / retrieval
    cutoffs: list[int] = field(default_factory=lambda: [1, 3, 5])
    eval_split: str = "test"
    checkpoint: str | None = None
    k: int = 10

    def to_json(self) -> dict:
        return asdict(self)

    def seeds(self) -> dict[str, int]:
        labels = ("augmodel", "hasher", "transform", "trainer", "split", "generator")
        return {"seed": self.seed, **{name: derive_seed(self.seed, name) for name in labels}}


_FIELDS = {f.name for f in fields(RunConfig)}


def load_config_file(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(obj) - _FIELDS)
    if unknown:
        raise UsageError(f"unknown config keys {unknown}; valid keys: {sorted(_FIELDS)}")
    return obj


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flags override the config file, which overrides defaults."""
    values = asdict(RunConfig())
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    values.update({k: v for k, v in vars(args).items() if k in _FIELDS})
    cfg = RunConfig(**values)
    if cfg.provider not in PROVIDERS:
        raise UsageError(f"unknown provider {cfg.provider!r}; valid: {', '.join(PROVIDERS)}")
    for kind in [cfg.scorer, *cfg.scorers]:
        if kind not in KINDS:
            raise UsageError(f"unknown scorer {kind!r}; valid kinds: {', '.join(KINDS)}")
    return cfg


# ---------------------------------------------------------------- helpers


def make_provider(cfg: RunConfig):
    if cfg.provider == "stub":
        return StubProvider(cfg.stub_seed, cfg.stub_dim)
    if cfg.provider == "store":
        if not cfg.cache or not Path(cfg.cache).exists():
            raise DataError(f"embedding store {cfg.cache!r} does not exist")
        return FileStoreProvider(cfg.cache)
    import os

    if not os.environ.get(cfg.embed_token_env):
        if cfg.cache and Path(cfg.cache).exists():
            log.info("%s not set; serving embeddings from %s only", cfg.embed_token_env, cfg.cache)
            return FileStoreProvider(cfg.cache)
        raise ProviderError(
            f"no embedding cache at {cfg.cache!r} and {cfg.embed_token_env} is not set: "
            f"export {cfg.embed_token_env}=<api token>, or fill a cache elsewhere and pass --cache"
        )
    if not (cfg.embed_url and cfg.embed_model and cfg.embed_dim):
        raise UsageError("the http provider needs --embed-url, --embed-model and --embed-dim")
    inner = HTTPProvider(cfg.embed_url, cfg.embed_model, cfg.embed_dim, token_env=cfg.embed_token_env)
    if cfg.cache:
        return CachedProvider(inner, EmbeddingCache(cfg.cache, inner.identity, inner.embed_dim))
    return inner


def _require_data(cfg: RunConfig) -> BeirDataset:
    if not cfg.data:
        raise UsageError("no dataset given (--data DIR)")
    return load_beir(cfg.data)


def make_splits(cfg: RunConfig, ds: BeirDataset) -> Splits:
    """Train / validation / test query ids, from the manifest when one is given."""
    if cfg.split_manifest:
        try:
            obj = json.loads(Path(cfg.split_manifest).read_text(encoding="utf-8"))["splits"]
            return Splits(obj["train"], obj["validation"], obj.get("test", []))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read split manifest {cfg.split_manifest}: {exc}") from None
    seed = derive_seed(cfg.seed, "split")
    if cfg.split_mode == "provided":
        return split(ds.queries, ds.all_qrels, SplitSpec(seed=seed, mode="use-provided-splits"), ds.qrels)
    if cfg.split_mode != "fraction":
        raise UsageError(f"unknown split mode {cfg.split_mode!r}; use 'fraction' or 'provided'")
    test = ds.qrels.get("test", {})
    pool = ds.qrels.get("dev") or {q: r for q, r in ds.all_qrels.items() if q not in test}
    provided = {"test": test} if test else None
    return split(ds.queries, pool, SplitSpec(cfg.train_fraction, seed), provided)


def _checkpoint_path(cfg: RunConfig, kind: str) -> Path | None:
    if cfg.checkpoint:
        return Path(cfg.checkpoint)
    name = {"linear_transform": "linear_transform.mafl", "concat_frozen": "aug_only.mafw"}.get(kind, f"{kind}.mafw")
    path = Path(cfg.out) / name
    return path if path.exists() else None


def make_scorer(cfg: RunConfig, kind: str, provider, load: bool = True) -> Scorer:
    """A scorer of ``kind``; trained weights come from ``--checkpoint`` or ``<out>/<kind>.maf?``."""
    seeds = cfg.seeds()
    path = _checkpoint_path(cfg, kind) if load and kind != "bb_only" else None
    loaded = checkpoint_load(path) if path is not None else None
    if path is not None:
        log.info("scorer %s: loaded %s", kind, path)
    if kind == "bb_only":
        return Scorer(kind, provider, use_title=cfg.use_title)
    if kind == "linear_transform":
        if loaded is not None and not isinstance(loaded, LinearTransform):
            raise CheckpointError(f"{path} is not a linear-transform checkpoint")
        t = loaded or LinearTransform.near_identity(provider.embed_dim, cfg.rank, seed=seeds["transform"])
        return Scorer(kind, provider, transform=t, use_title=cfg.use_title)
    mode = "unnormalized" if kind == "lambda_mafin" else "normalized"
    if loaded is not None and not isinstance(loaded, AugmentingModel):
        raise CheckpointError(f"{path} is not an augmenting-model checkpoint")
    if loaded is None and load and kind in TRAINABLE:
        log.warning("scorer %s: no checkpoint found, using an untrained augmenting model", kind)
    model = loaded or AugmentingModel.init(cfg.d_aug, cfg.feature_dim, mode, seed=seeds["augmodel"], hasher_seed=seeds["hasher"])
    return Scorer(kind, None if kind == "aug_only" else provider, model, use_title=cfg.use_title)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _envelope(cfg: RunConfig, command: str, **payload) -> dict:
    return {"command": command, "config": cfg.to_json(), "seeds": cfg.seeds(), **payload}


# ---------------------------------------------------------------- commands


def cmd_ingest(cfg: RunConfig, args) -> int:
    ds = _require_data(cfg)
    summary = {
        "passages": len(ds.corpus),
        "queries": len(ds.queries),
        "qrels": {name: {"queries": len(q), "judgments": sum(len(v) for v in q.values())} for name, q in sorted(ds.qrels.items())},
    }
    if getattr(args, "split", None):
        mode, *rest = args.split
        if mode == "fraction":
            if len(rest) != 1:
                raise UsageError("--split fraction needs a value, e.g. --split fraction 0.8")
            try:
                cfg.train_fraction = float(rest[0])
            except ValueError:
                raise UsageError(f"--split fraction: {rest[0]!r} is not a number") from None
        elif mode != "provided" or rest:
            raise UsageError("--split takes 'fraction <f>' or 'provided'")
        cfg.split_mode = mode
        cfg.split_manifest = None
        splits = make_splits(cfg, ds)
        manifest = Path(getattr(args, "manifest", None) or Path(cfg.out) / "split.json")
        _write_json(manifest, _envelope(cfg, "ingest", splits=splits.to_json()))
        summary["split"] = {"train": len(splits.train), "validation": len(splits.validation), "test": len(splits.test), "manifest": str(manifest)}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_cache(cfg: RunConfig, args) -> int:
    ds = _require_data(cfg)
    if not cfg.cache:
        raise UsageError("cache needs --cache PATH")
    if cfg.provider == "store":
        raise UsageError("the store provider is read-only; use --provider http or stub")
    provider = make_provider(cfg)
    if isinstance(provider, FileStoreProvider):
        raise ProviderError(f"{cfg.embed_token_env} is not set; cannot fetch missing embeddings")
    if isinstance(provider, CachedProvider):
        provider = provider.inner
    report = cache_fill(provider, ds.corpus, ds.queries, cfg.cache, cfg.use_title)
    print(json.dumps({"cache": cfg.cache, "identity": provider.identity, **report.to_json()}, sort_keys=True))
    return EXIT_OK


def _generator(cfg: RunConfig):
    if cfg.generator == "offline":
        return OfflineGenerator(cfg.seeds()["generator"])
    if cfg.generator == "remote":
        if not (cfg.llm_url and cfg.llm_model):
            raise UsageError("remote generation needs --llm-url and --llm-model")
        try:
            return RemoteGenerator(cfg.llm_url, cfg.llm_model, cfg.llm_temperature, token_env=cfg.llm_token_env)
        except RuntimeError as exc:
            raise ProviderError(str(exc)) from None
    raise UsageError(f"unknown generator {cfg.generator!r}; use 'offline' or 'remote'")


def cmd_gen_queries(cfg: RunConfig, args) -> int:
    ds = _require_data(cfg)
    path = Path(cfg.pairs or Path(cfg.out) / "pairs.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    gen = _generator(cfg)
    pairs = generate_pairs(gen, ds.corpus, cfg.seeds()["generator"], use_title=cfg.use_title, save_to=path)
    print(json.dumps({"pairs": len(pairs), "skipped": len(pairs.skipped), "generator": gen.identity, "path": str(path)}, sort_keys=True))
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    if cfg.scorer not in TRAINABLE:
        raise UsageError(f"scorer {cfg.scorer!r} is not trainable; trainable kinds: {', '.join(TRAINABLE)}")
    ds = _require_data(cfg)
    provider = make_provider(cfg)
    seeds = cfg.seeds()
    out = Path(cfg.out)
    if cfg.supervised:
        splits = make_splits(cfg, ds)
        qrels = ds.all_qrels
        queries = ds.queries
        train_ids, val_ids = splits.train, splits.validation
    else:
        if cfg.pairs and Path(cfg.pairs).exists():
            pairs = SyntheticPairSet.load(cfg.pairs)
        else:
            pairs = generate_pairs(_generator(cfg), ds.corpus, seeds["generator"], use_title=cfg.use_title)
        queries, qrels = pairs.queries(), pairs.qrels()
        splits = split(queries, qrels, SplitSpec(cfg.train_fraction, seeds["split"]))
        train_ids, val_ids = splits.train, splits.validation
    train_qrels = {q: qrels[q] for q in train_ids}
    val_qrels = {q: qrels[q] for q in val_ids}
    loss = LossConfig(cfg.loss, cfg.temperature, cfg.smoothing, cfg.negatives, cfg.train_score)
    tcfg = TrainConfig(
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        monitor=cfg.monitor,
        optimizer=cfg.optimizer,
        lr=cfg.lr,
        seed=seeds["trainer"],
        checkpoint_dir=str(out / "checkpoints"),
    )

    def fresh():
        return make_scorer(cfg, cfg.scorer, provider, load=False)

    if cfg.smoothing_grid:
        result = grid_search_smoothing(fresh, ds.corpus, queries, train_qrels, val_ids, val_qrels, loss, tcfg, SMOOTHING_GRID, train_ids)
        scorer, payload = result.scorer, result.to_json()
        print(f"best smoothing: {result.best_smoothing:g}")
    else:
        scorer = fresh()
        rep = train(scorer, ds.corpus, queries, train_qrels, val_ids, val_qrels, loss, tcfg, train_ids)
        payload = {"best_smoothing": cfg.smoothing, "runs": {repr(cfg.smoothing): rep.to_json()}}
    ckpt = out / ("linear_transform.mafl" if cfg.scorer == "linear_transform" else f"{cfg.scorer}.mafw")
    checkpoint_save(ckpt, scorer.transform if cfg.scorer == "linear_transform" else scorer.model)
    report_path = out / "train_report.json"
    _write_json(
        report_path,
        _envelope(cfg, "train", mode="supervised" if cfg.supervised else "unsupervised", checkpoint=str(ckpt), splits=splits.to_json(), **payload),
    )
    print(report_path)
    return EXIT_OK


def _eval_queries(cfg: RunConfig, ds: BeirDataset):
    if cfg.eval_split == "all":
        return list(ds.queries), ds.all_qrels
    splits = make_splits(cfg, ds)
    ids = getattr(splits, {"test": "test", "validation": "validation", "train": "train"}.get(cfg.eval_split, ""), None)
    if ids is None:
        raise UsageError(f"unknown evaluation split {cfg.eval_split!r}; use test, validation, train or all")
    if not ids:
        raise DataError(f"the {cfg.eval_split} split is empty (no qrels/test.tsv and no manifest test ids)")
    qrels = ds.all_qrels
    return [ds.queries[q] for q in ids], {q: qrels[q] for q in ids if q in qrels}


def cmd_evaluate(cfg: RunConfig, args) -> int:
    ds = _require_data(cfg)
    provider = make_provider(cfg) if any(k != "aug_only" for k in cfg.scorers) else None
    queries, qrels = _eval_queries(cfg, ds)
    specs = default_specs(tuple(cfg.cutoffs))
    reports = {}
    for kind in cfg.scorers:
        reports[kind] = evaluate(make_scorer(cfg, kind, provider), queries, ds.corpus, qrels, specs)
    table = comparison_table(list(reports.values()), list(reports))
    path = Path(cfg.out) / "eval_report.json"
    _write_json(path, _envelope(cfg, "evaluate", reports={k: r.to_json() for k, r in reports.items()}, table=table))
    print(table)
    print(path)
    return EXIT_OK


def _read_queries(args) -> list[tuple[str, str]]:
    if getattr(args, "query", None):
        return [("query", args.query)]
    if getattr(args, "query_file", None):
        fh = open(args.query_file, encoding="utf-8")
    else:
        fh = sys.stdin
    out = []
    with fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            qid, tab, text = line.partition("\t")
            out.append((qid, text) if tab else (f"q{n}", line))
    if not out:
        raise UsageError("no query given (--query, --query-file or stdin)")
    return out


def cmd_retrieve(cfg: RunConfig, args) -> int:
    ds = _require_data(cfg)
    if cfg.k < 1:
        raise UsageError("--k must be >= 1")
    provider = make_provider(cfg) if cfg.scorer != "aug_only" else None
    scorer = make_scorer(cfg, cfg.scorer, provider)
    qs = [_Adhoc(qid, text) for qid, text in _read_queries(args)]
    write_ranked_tsv(retrieve_many(scorer, qs, ds.corpus, min(cfg.k, len(ds.corpus))), sys.stdout)
    return EXIT_OK


@dataclass(frozen=True)
class _Adhoc:
    id: str
    text: str


COMMANDS = {
    "ingest": cmd_ingest,
    "cache": cmd_cache,
    "gen-queries": cmd_gen_queries,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "retrieve": cmd_retrieve,
}


# ---------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv(kind):
    def parse(text: str):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None

    return parse


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="JSON config file (keys = RunConfig fields)")
    g.add_argument("--data", help="BEIR-style folder: corpus.jsonl, queries.jsonl, qrels/*.tsv")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int, help="global seed; per-module seeds derive from it")
    g.add_argument("--provider", choices=PROVIDERS)
    g.add_argument("--cache", help="embedding cache / store file")
    g.add_argument("--stub-seed", type=int)
    g.add_argument("--stub-dim", type=int)
    g.add_argument("--embed-url")
    g.add_argument("--embed-model")
    g.add_argument("--embed-dim", type=int)
    g.add_argument("--no-title", dest="use_title", action="store_false", help="embed passage text without its title")
    g.add_argument("--split-manifest", help="split manifest written by `ingest --split`")
    g.add_argument("--train-fraction", type=float)
    g.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="mafin", description="Augment a frozen embedding model with a trainable encoder.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", parents=[common], help="validate and summarize a dataset", argument_default=argparse.SUPPRESS)
    s.add_argument("--split", nargs="+", metavar="MODE", help="'fraction <f>' or 'provided': write a split manifest")
    s.add_argument("--manifest", help="where to write the split manifest (default <out>/split.json)")

    sub.add_parser("cache", parents=[common], help="fill the embedding cache for corpus and queries", argument_default=argparse.SUPPRESS)

    s = sub.add_parser("gen-queries", parents=[common], help="one synthetic query per passage", argument_default=argparse.SUPPRESS)
    s.add_argument("--generator", choices=("offline", "remote"))
    s.add_argument("--pairs", help="output JSONL (default <out>/pairs.jsonl)")
    s.add_argument("--llm-url")
    s.add_argument("--llm-model")
    s.add_argument("--llm-temperature", type=float)

    s = sub.add_parser("train", parents=[common], help="fine-tune a trainable scorer", argument_default=argparse.SUPPRESS)
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--supervised", dest="supervised", action="store_true", help="train on qrels (default)")
    mode.add_argument("--unsupervised", dest="supervised", action="store_false", help="train on synthetic query pairs")
    s.add_argument("--scorer", choices=KINDS)
    s.add_argument("--loss", choices=LOSS_KINDS)
    s.add_argument("--neg", dest="negatives", type=int, help="list size M (1 positive + M-1 negatives)")
    s.add_argument("--temperature", type=float)
    s.add_argument("--smoothing", type=float)
    s.add_argument("--smoothing-grid", action="store_true", help="train once per rate in {0, 0.1, ..., 0.5}")
    s.add_argument("--train-score", choices=("combined_mafin", "aug_only"))
    s.add_argument("--optimizer", choices=("adam", "sgd"))
    s.add_argument("--lr", type=float)
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--monitor")
    s.add_argument("--d-aug", type=int)
    s.add_argument("--feature-dim", type=int)
    s.add_argument("--rank", type=int, help="low-rank linear transform")
    s.add_argument("--pairs", help="synthetic pairs JSONL (generated offline when absent)")
    s.add_argument("--generator", choices=("offline", "remote"))

    s = sub.add_parser("evaluate", parents=[common], help="compare scorers on a split", argument_default=argparse.SUPPRESS)
    s.add_argument("--scorers", type=_csv(str), help=f"comma-separated subset of {','.join(KINDS)}")
    s.add_argument("--k", dest="cutoffs", type=_csv(int), help="cutoffs, e.g. 1,3,5")
    s.add_argument("--split", dest="eval_split", choices=("test", "validation", "train", "all"))
    s.add_argument("--d-aug", type=int)
    s.add_argument("--feature-dim", type=int)

    s = sub.add_parser("retrieve", parents=[common], help="top-K passages for ad-hoc queries", argument_default=argparse.SUPPRESS)
    s.add_argument("--scorer", choices=KINDS)
    s.add_argument("--k", type=int)
    s.add_argument("--checkpoint", help="trained weights (default <out>/<scorer>.mafw)")
    q = s.add_mutually_exclusive_group()
    q.add_argument("--query", help="query text (otherwise read from --query-file or stdin)")
    q.add_argument("--query-file", help="one query per line, optionally 'id<TAB>text'")
    s.add_argument("--d-aug", type=int)
    s.add_argument("--feature-dim", type=int)
    return p


def main(argv=None) -> int:
    # a handler per call, bound to the current stderr, so repeated in-process calls behave
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    level = log.level
    try:
        args = build_parser().parse_args(argv)
        verbose = getattr(args, "verbose", 0)
        log.setLevel(logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (DataError, CheckpointError, TrainingError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        log.removeHandler(handler)
        log.setLevel(level)


if __name__ == "__main__":
    sys.exit(main())
