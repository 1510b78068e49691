"""Command line entry points: ingestion, index builds, evaluation, serving."""

from __future__ import annotations

import functools
import json
from pathlib import Path

import click

from kgi.corpus import PassageStore, ingest_corpus
from kgi.embedding import HashedBowEmbedder, RemoteEmbedder
from kgi.errors import ConfigurationError, KgiError
from kgi.generator import ExtractiveGenerator, RemoteGenerator
from kgi.hnsw import build_dense_index, load_dense_index, save_dense_index
from kgi.metrics import evaluate_run, format_metrics_table
from kgi.rerank import LexicalOverlapReranker, RemoteReranker
from kgi.sparse import build_sparse_index, load_sparse_index, save_sparse_index
from kgi.tasks import Pipeline, TaskKind


def _translate_errors(command):
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except KgiError as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


@click.group()
def main() -> None:
    """Knowledge-grounded retrieve, rerank, generate engine."""


@main.group()
def corpus() -> None:
    """Corpus ingestion."""


@corpus.command("ingest")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--max-tokens", default=100, show_default=True, type=int)
@click.option("--stride", default=100, show_default=True, type=int)
@_translate_errors
def corpus_ingest(input_path: str, out_dir: str, max_tokens: int, stride: int) -> None:
    """Chunk a line-delimited document file into a passage store."""
    stats = ingest_corpus(input_path, out_dir, max_tokens=max_tokens, stride=stride)
    click.echo(
        f"ingested {stats.n_documents} documents into {stats.n_passages} passages "
        f"(mean {stats.mean_passage_tokens:.1f} tokens) at {out_dir}"
    )


@main.group()
def index() -> None:
    """Index builds."""


@index.command("sparse")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--k1", default=0.9, show_default=True, type=float)
@click.option("--b", default=0.4, show_default=True, type=float)
@_translate_errors
def index_sparse(corpus_dir: str, out_dir: str, k1: float, b: float) -> None:
    """Build the lexical index over an ingested corpus."""
    store = PassageStore(corpus_dir)
    built = build_sparse_index(store, k1=k1, b=b)
    save_sparse_index(built, out_dir)
    click.echo(f"sparse index over {built.n_docs} passages at {out_dir}")


def _make_embedder(spec: str, dim: int):
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteEmbedder(spec, dim=dim)
    if spec == "hashed_bow":
        return HashedBowEmbedder(dim=dim)
    raise ConfigurationError(
        f"unknown embedder {spec!r}: expected 'hashed_bow' or an http(s) endpoint"
    )


@index.command("dense")
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--embedder", "embedder_spec", default="hashed_bow", show_default=True)
@click.option("--dim", default=256, show_default=True, type=int)
@click.option("--m", "m", default=16, show_default=True, type=int)
@click.option("--ef-construction", default=200, show_default=True, type=int)
@click.option("--metric", default="ip", show_default=True, type=click.Choice(["ip", "cosine"]))
@click.option("--seed", default=0, show_default=True, type=int)
@_translate_errors
def index_dense(
    corpus_dir: str,
    out_dir: str,
    embedder_spec: str,
    dim: int,
    m: int,
    ef_construction: int,
    metric: str,
    seed: int,
) -> None:
    """Embed an ingested corpus and build the graph index."""
    store = PassageStore(corpus_dir)
    embedder = _make_embedder(embedder_spec, dim)
    built = build_dense_index(
        store, embedder, M=m, ef_construction=ef_construction, metric=metric, seed=seed
    )
    save_dense_index(built, out_dir)
    click.echo(f"dense index over {len(built.pids)} passages at {out_dir}")


@main.command("eval")
@click.option("--task", required=True, type=click.Choice([t.value for t in TaskKind]))
@click.option("--pred", "pred_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gold", "gold_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--report", "report_file", default=None, type=click.Path(dir_okay=False))
@click.option(
    "--recall-mode",
    default="fraction",
    show_default=True,
    type=click.Choice(["fraction", "hit"]),
)
@_translate_errors
def eval_command(
    task: str, pred_file: str, gold_file: str, report_file: str | None, recall_mode: str
) -> None:
    """Score a prediction file against gold."""
    report = evaluate_run(pred_file, gold_file, task, recall_mode=recall_mode)
    table = format_metrics_table([report.as_row(task)])
    click.echo(table, nl=False)
    if report_file:
        Path(report_file).write_text(table, encoding="utf-8")
        click.echo(f"report written to {report_file}")


def _build_pipeline(config: dict) -> Pipeline:
    for key in ("corpus_dir", "sparse_dir", "dense_dir"):
        if key not in config:
            raise ConfigurationError(f"serve config is missing {key!r}")
    store = PassageStore(config["corpus_dir"])
    sparse = load_sparse_index(config["sparse_dir"])
    dense = load_dense_index(config["dense_dir"])

    embedder_cfg = config.get("embedder", {})
    embedder = _make_embedder(
        embedder_cfg.get("kind", "hashed_bow")
        if embedder_cfg.get("kind") != "remote"
        else embedder_cfg["endpoint"],
        int(embedder_cfg.get("dim", dense.dim)),
    )
    if embedder.dim != dense.dim:
        raise ConfigurationError(
            f"embedder dim {embedder.dim} does not match dense index dim {dense.dim}"
        )

    lexical = LexicalOverlapReranker(sparse.idf)
    reranker_cfg = config.get("reranker", {"kind": "lexical"})
    if reranker_cfg.get("kind") == "remote":
        reranker = RemoteReranker(reranker_cfg["endpoint"])
        fallback = lexical if reranker_cfg.get("fallback_to_lexical", True) else None
    else:
        reranker = lexical
        fallback = None

    generator_cfg = config.get("generator", {"kind": "extractive"})
    if generator_cfg.get("kind") == "remote":
        model = RemoteGenerator(generator_cfg["endpoint"])
    else:
        model = ExtractiveGenerator()

    knobs = config.get("pipeline", {})
    return Pipeline(
        resolve=store.get_passage,
        sparse=sparse,
        dense=dense,
        embedder=embedder,
        reranker=reranker,
        model=model,
        rerank_fallback=fallback,
        n_sparse=int(knobs.get("n_sparse", 12)),
        n_dense=int(knobs.get("n_dense", 12)),
        n_total=int(knobs.get("n_total", 24)),
        k_evidence=int(knobs.get("k_evidence", 5)),
        n_best=int(knobs.get("n_best", 1)),
        ef_search=int(knobs.get("ef_search", 128)),
    )


@main.command("serve")
@click.option("--config", "config_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--host", default="127.0.0.1", show_default=True)
@_translate_errors
def serve(config_file: str, port: int, host: str) -> None:
    """Run the HTTP service from a JSON config."""
    import uvicorn

    from kgi.service import create_app

    with open(config_file, "r", encoding="utf-8") as handle:
        config = json.load(handle)
    app = create_app(_build_pipeline(config))
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
