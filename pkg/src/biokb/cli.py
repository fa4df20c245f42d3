"""Command-line entry point.

Exit codes: 0 success, 1 validation/usage error, 2 I/O or endpoint failure.
Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import httpx
import numpy as np

from . import synth
from .benchgen import LlmError, RemoteLlm, StubLlm, generate_benchmark, item_json, read_bench
from .domain import LanguageVariant, RecordRejected, dumps_jsonl, iter_jsonl, read_manifest, read_people
from .embed import (
    BadResponse,
    DimensionMismatch,
    RemoteEmbedder,
    StubEmbedder,
    StubFaceEmbedder,
    Transport,
    read_sidecar,
    sidecar_text,
)
from .evalharness import (
    EvalCondition,
    EvalOutcome,
    FixedAnswerModel,
    aggregate,
    evaluate,
    load_fewshot,
    render_report,
)
from .index import BIOGRAPHY, FACE, StoreIndex
from .ingest import (
    DEFAULT_PATTERNS,
    DEFAULT_THRESHOLD,
    coverage_csv,
    read_pageviews,
    read_qid_map,
    read_tables,
    read_translations,
    run_pipeline,
)
from .retrieval import EmptyQuery, NoCandidates, NoFaceChannel, RagConfig, RetrievalQuery, retrieve
from .sampler import SamplerConfig, read_population, sample_benchmark

log = logging.getLogger("biokb")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class AppConfig:
    """Resolved settings. Precedence: CLI flags > environment > config file > defaults."""

    file: dict[str, dict[str, str]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None) -> "AppConfig":
        path = path or os.environ.get("BIOKB_CONFIG")
        if not path:
            return cls()
        if not os.path.exists(path):
            raise UsageError(f"--config: file not found: {path}")
        cp = configparser.ConfigParser()
        cp.read(path, encoding="utf-8")
        return cls({s: dict(cp[s]) for s in cp.sections()})

    def get(self, flag_value: Any, env: str | None, section: str, key: str, default: Any = None, cast=str):
        if flag_value is not None:
            return flag_value
        if env and os.environ.get(env):
            return cast(os.environ[env])
        raw = self.file.get(section, {}).get(key)
        if raw is not None:
            return cast(raw)
        return default

    def path(self, args, name: str) -> str | None:
        return self.get(getattr(args, name, None), None, "paths", name)

    def rag(self, args) -> RagConfig:
        base = RagConfig()
        return RagConfig(
            semantic_k=self.get(getattr(args, "k", None), None, "rag", "semantic_k", base.semantic_k, int),
            face_k=self.get(None, None, "rag", "face_k", base.face_k, int),
            face_final=self.get(None, None, "rag", "face_final", base.face_final, int),
            birth_window_years=self.get(None, None, "rag", "birth_window_years", base.birth_window_years, int),
            popularity_weight=self.get(getattr(args, "lam", None), None, "rag", "popularity_weight",
                                       base.popularity_weight, float),
            bio_budget=self.get(None, None, "rag", "bio_budget", base.bio_budget, int),
            context_k=self.get(None, None, "rag", "context_k", base.context_k, int),
        )


def _need(value, flag: str, must_exist: bool = True):
    if value is None:
        raise UsageError(f"missing required option {flag}")
    if must_exist and not os.path.exists(value):
        raise UsageError(f"{flag}: path does not exist: {value}")
    return value


def _text_embedder(cfg: AppConfig, args):
    endpoint = cfg.get(getattr(args, "embed_endpoint", None), "EMBED_ENDPOINT", "endpoints", "embed")
    dim = cfg.get(getattr(args, "dim", None), None, "embed", "dim", 64, int)
    if endpoint:
        return RemoteEmbedder(endpoint, max_in_flight=cfg.get(None, None, "run", "concurrency", 4, int))
    return StubEmbedder(dim, cfg.get(None, None, "embed", "seed", 0, int))


def _load_index(db: str, emb_dir: str) -> StoreIndex:
    records = read_people(db)
    emb = {BIOGRAPHY: read_sidecar(Path(emb_dir) / "biography.emb")}
    face = Path(emb_dir) / "face.emb"
    if face.exists():
        emb[FACE] = read_sidecar(face)
    return StoreIndex.build(records, emb)


# -- subcommands -----------------------------------------------------------


def cmd_synth(args, cfg: AppConfig) -> int:
    out = Path(_need(args.out, "--out", must_exist=False))
    fx = synth.make_ingest_fixture(args.people, args.tables, args.seed)
    write_atomic(out / "tables.jsonl", dumps_jsonl(t.to_dict() for t in fx.tables))
    qid_lines = [f"{name}\t{q}" for name, qids in sorted(fx.qid_map.items()) for q in sorted(qids)]
    write_atomic(out / "qids.tsv", "\n".join(qid_lines) + "\n")
    write_atomic(out / "translations.jsonl",
                 dumps_jsonl({"qid": q, "names": n} for q, n in sorted(fx.translations.items())))
    write_atomic(out / "pageviews.tsv", "".join(f"{q}\t{v}\n" for q, v in sorted(fx.pageviews.items())))
    write_atomic(out / "images.jsonl",
                 dumps_jsonl({"qid": q, "image_urls": u} for q, u in sorted(fx.images.items())))
    pop = synth.population_table(args.seed)
    write_atomic(out / "population.csv", "country,proportion\n" + "".join(f"{c},{p!r}\n" for c, p in pop.items()))
    print(f"wrote synthetic inputs for {len(fx.truth)} people to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_ingest(args, cfg: AppConfig) -> int:
    tables = read_tables(_need(args.tables, "--tables"))
    qid_map = read_qid_map(_need(args.qids, "--qids"))
    translations = read_translations(args.translations) if args.translations else {}
    pageviews = read_pageviews(_need(args.pageviews, "--pageviews"))
    images = {}
    if args.images:
        images = {d["qid"]: d["image_urls"] for d in iter_jsonl(_need(args.images, "--images"))}
    out = _need(args.out, "--out", must_exist=False)
    patterns = tuple(p.strip() for p in args.patterns.split(",")) if args.patterns else DEFAULT_PATTERNS
    threshold = cfg.get(args.threshold, None, "ingest", "threshold", DEFAULT_THRESHOLD, float)
    result = run_pipeline(tables, qid_map, translations, pageviews, images, patterns=patterns, threshold=threshold)
    write_atomic(out, dumps_jsonl(result.records))
    if args.rejections:
        write_atomic(args.rejections, dumps_jsonl(result.rejections))
    if args.coverage:
        write_atomic(args.coverage, coverage_csv(result.coverage))
    flagged = [c.country for c in result.coverage if c.flagged]
    print(f"ingested {len(result.records)} records, {len(result.rejections)} rejections; "
          f"countries below minimum: {', '.join(flagged) or 'none'}", file=sys.stderr)
    return EXIT_OK


def cmd_index(args, cfg: AppConfig) -> int:
    records = read_people(_need(cfg.path(args, "db"), "--db"))
    out = Path(_need(args.out_dir, "--out-dir", must_exist=False))
    emb = _text_embedder(cfg, args)
    vecs = emb.embed_batch([r.biography for r in records])
    write_atomic(out / "biography.emb", sidecar_text({r.qid: v for r, v in zip(records, vecs)}))
    if args.faces == "stub":
        # stand-in face vectors from the first image URL; images are never fetched
        face = StubFaceEmbedder(cfg.get(args.dim, None, "embed", "dim", 64, int))
        faces = {r.qid: face.embed(r.image_urls[0].encode("utf-8")) for r in records if r.image_urls}
        write_atomic(out / "face.emb", sidecar_text(faces))
    elif args.faces:
        faces = read_sidecar(_need(args.faces, "--faces"))
        write_atomic(out / "face.emb", sidecar_text(faces))
    print(f"indexed {len(records)} records into {out}", file=sys.stderr)
    return EXIT_OK


def _read_vector(path: str) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").strip()
    if text.startswith("["):
        return np.asarray(json.loads(text), dtype=np.float64)
    if text.startswith("dim="):
        text = text.splitlines()[1].partition("\t")[2]
    return np.array([float(x) for x in text.replace("\n", ",").split(",") if x.strip()])


def cmd_retrieve(args, cfg: AppConfig) -> int:
    index = _load_index(_need(cfg.path(args, "db"), "--db"), _need(cfg.path(args, "embeddings"), "--embeddings"))
    rag = cfg.rag(args)
    face = _read_vector(_need(args.face_embedding_file, "--face-embedding-file")) if args.face_embedding_file else None
    if face is not None:
        face = face / np.linalg.norm(face)
    query = RetrievalQuery(args.name, args.context, args.nationality, args.birth_year, face, args.language)
    try:
        cands = retrieve(query, index, _text_embedder(cfg, args), rag)
    except NoCandidates as exc:
        print(f"no candidates: {exc}", file=sys.stderr)
        cands = []
    if args.json:
        print(json.dumps([c.to_dict() for c in cands], ensure_ascii=False))
    else:
        for c in cands:
            rec = index.record(c.qid)
            print(f"{c.qid}\t{c.score:.4f}\t{rec.display_name()}\t{'>'.join(s.value for s in c.provenance)}")
    return EXIT_OK


def cmd_sample(args, cfg: AppConfig) -> int:
    records = read_people(_need(cfg.path(args, "db"), "--db"))
    population = read_population(_need(args.population, "--population"))
    seed = cfg.get(args.seed, "BIOKB_SEED", "sampler", "seed", None, int)
    if seed is None:
        raise UsageError("missing required option --seed")
    weight = cfg.get(args.date_weight, None, "sampler", "date_weight", 1.0, float)
    out = _need(args.out, "--out", must_exist=False)
    manifest = sample_benchmark(records, population, _text_embedder(cfg, args), SamplerConfig(date_weight=weight), seed)
    write_atomic(out, dumps_jsonl(m.to_dict() for m in manifest))
    print(f"sampled {len(manifest)} subjects", file=sys.stderr)
    return EXIT_OK


def _remote_llm(endpoint: str | None, cfg: AppConfig, section_key: str, env: str) -> RemoteLlm | None:
    endpoint = cfg.get(endpoint, env, "endpoints", section_key)
    if endpoint:
        return RemoteLlm(endpoint, max_in_flight=cfg.get(None, None, "run", "concurrency", 4, int))
    return None


def cmd_generate(args, cfg: AppConfig) -> int:
    records = {r.qid: r for r in read_people(_need(cfg.path(args, "db"), "--db"))}
    manifest = read_manifest(_need(cfg.path(args, "manifest"), "--manifest"))
    out = _need(args.out, "--out", must_exist=False)
    llm = _remote_llm(args.llm_endpoint, cfg, "llm", "LLM_ENDPOINT") or StubLlm(args.seed or 0)
    report = generate_benchmark(manifest, records, llm,
                                max_workers=cfg.get(args.concurrency, None, "run", "concurrency", 4, int))
    write_atomic(out, "".join(item_json(it) + "\n" for it in report.items))
    if report.failures:
        print(f"{len(report.failures)} subjects failed validation", file=sys.stderr)
    print(f"generated {len(report.items)} items", file=sys.stderr)
    return EXIT_OK


def _write_report(cells, out: str | None) -> None:
    csv_text, table = render_report(cells)
    if out:
        write_atomic(out, csv_text)
    sys.stdout.write(table)


def cmd_evaluate(args, cfg: AppConfig) -> int:
    items = read_bench(_need(cfg.path(args, "bench"), "--bench"))
    manifest = {m.qid: m for m in read_manifest(_need(cfg.path(args, "manifest"), "--manifest"))}
    records = {r.qid: r for r in read_people(_need(cfg.path(args, "db"), "--db"))}
    index = embedder = None
    if args.rag:
        index = _load_index(cfg.path(args, "db"), _need(cfg.path(args, "embeddings"), "--embeddings"))
        embedder = _text_embedder(cfg, args)
    model = _remote_llm(args.model_endpoint, cfg, "model", "MODEL_ENDPOINT") or FixedAnswerModel(args.stub_answer)
    condition = EvalCondition(args.rag, args.image, LanguageVariant(args.variant), args.model_id)
    fewshot = load_fewshot(args.fewshot) if args.fewshot else None
    run = evaluate(items, condition, model, records, manifest, index=index, embedder=embedder,
                   rag_cfg=cfg.rag(args), fewshot=fewshot,
                   max_workers=cfg.get(args.concurrency, None, "run", "concurrency", 4, int))
    if args.outcomes:
        write_atomic(args.outcomes, dumps_jsonl(o.to_dict() for o in run.outcomes))
    if not run.outcomes:
        raise UsageError("no items evaluated under this condition")
    by_id = {it.item_id: it for it in items}
    _write_report(aggregate(run.outcomes, by_id, manifest), args.out)
    fallbacks = sum(o.rag_fallback for o in run.outcomes)
    print(f"evaluated {len(run.outcomes)} items ({len(run.skipped)} skipped, {fallbacks} RAG fallbacks)",
          file=sys.stderr)
    return EXIT_OK


def cmd_report(args, cfg: AppConfig) -> int:
    items = {it.item_id: it for it in read_bench(_need(cfg.path(args, "bench"), "--bench"))}
    manifest = {m.qid: m for m in read_manifest(_need(cfg.path(args, "manifest"), "--manifest"))}
    outcomes = []
    for path in _need(args.outcomes, "--outcomes", must_exist=False):
        outcomes += [EvalOutcome.from_dict(d) for d in iter_jsonl(_need(path, "--outcomes"))]
    if not outcomes:
        raise UsageError("--outcomes: no outcomes found")
    by = tuple(s.strip() for s in args.by.split(",")) if args.by else None
    cells = aggregate(outcomes, items, manifest, by) if by else aggregate(outcomes, items, manifest)
    _write_report(cells, args.out)
    return EXIT_OK


def cmd_selftest(args, cfg: AppConfig) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest(sys.stdout) else EXIT_INVALID


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="biokb", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI config file (sections: paths, rag, sampler, embed, endpoints, run)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic input workspace")
    s.add_argument("--out")
    s.add_argument("--people", type=int, default=1000)
    s.add_argument("--tables", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="tables -> person JSONL")
    s.add_argument("--tables")
    s.add_argument("--qids", help="name<TAB>qid mapping")
    s.add_argument("--translations")
    s.add_argument("--pageviews", help="qid<TAB>views")
    s.add_argument("--images", help="JSONL of {qid, image_urls}")
    s.add_argument("--patterns", help="comma-separated header patterns")
    s.add_argument("--threshold", type=float)
    s.add_argument("--out")
    s.add_argument("--rejections")
    s.add_argument("--coverage")
    s.set_defaults(func=cmd_ingest)

    def embed_opts(sp):
        sp.add_argument("--embed-endpoint")
        sp.add_argument("--dim", type=int)

    s = sub.add_parser("index", help="compute embedding sidecars")
    s.add_argument("--db")
    s.add_argument("--out-dir")
    s.add_argument("--faces", help="'stub' or a face sidecar file to copy")
    embed_opts(s)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("retrieve", help="run the retrieval pipeline for one query")
    s.add_argument("--db")
    s.add_argument("--embeddings", help="directory with biography.emb [face.emb]")
    s.add_argument("--name")
    s.add_argument("--context")
    s.add_argument("--nationality")
    s.add_argument("--birth-year", type=int)
    s.add_argument("--language")
    s.add_argument("--face-embedding-file")
    s.add_argument("--k", type=int)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--json", action="store_true")
    embed_opts(s)
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("sample", help="select benchmark subjects")
    s.add_argument("--db")
    s.add_argument("--population", help="CSV country,proportion")
    s.add_argument("--seed", type=int)
    s.add_argument("--date-weight", type=float)
    s.add_argument("--out")
    embed_opts(s)
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("generate", help="generate benchmark items with an LLM")
    s.add_argument("--db")
    s.add_argument("--manifest")
    s.add_argument("--llm-endpoint")
    s.add_argument("--seed", type=int, default=0, help="seed of the stub generator")
    s.add_argument("--concurrency", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="answer benchmark items and report accuracy")
    s.add_argument("--bench")
    s.add_argument("--manifest")
    s.add_argument("--db")
    s.add_argument("--embeddings")
    s.add_argument("--model-endpoint")
    s.add_argument("--model-id", default="model")
    s.add_argument("--stub-answer", default="A", help="letter answered by the stub model")
    s.add_argument("--rag", action="store_true")
    s.add_argument("--image", action="store_true")
    s.add_argument("--variant", choices=[v.value for v in LanguageVariant], default="English")
    s.add_argument("--fewshot", help="JSON file with few-shot exemplars")
    s.add_argument("--concurrency", type=int)
    s.add_argument("--outcomes", help="write graded outcomes JSONL")
    s.add_argument("--out", help="report CSV")
    s.add_argument("--k", type=int)
    s.add_argument("--lambda", dest="lam", type=float)
    embed_opts(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="re-aggregate stored outcomes")
    s.add_argument("--outcomes", nargs="+")
    s.add_argument("--bench")
    s.add_argument("--manifest")
    s.add_argument("--by", help="comma-separated strata to keep (default: all)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("selftest", help="run the built-in oracle checks")
    s.set_defaults(func=cmd_selftest)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError("no subcommand given (try --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = AppConfig.load(args.config)
        start = time.perf_counter()
        code = args.func(args, cfg)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
        return code
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (Transport, BadResponse, LlmError, httpx.HTTPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RecordRejected, DimensionMismatch, EmptyQuery, NoFaceChannel, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
