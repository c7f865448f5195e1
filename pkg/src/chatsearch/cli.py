"""Operator entry points.

Subcommands: ``embed`` builds a pool file from captions, ``run``
simulates a batch of episodes, ``eval`` scores a log file, ``ablate-m``
sweeps the cluster count, ``serve`` starts the interactive session
service. Machine-readable output goes to files (or stdout for eval
without --out), diagnostics to stderr. Exit codes: 0 ok, 1 usage,
2 runtime failure.

Settings resolve as flags > config file > environment > defaults; the
run manifest records the resolved values and where each came from.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .backends import (
    BackendConfig,
    BackendError,
    Backends,
    CaptionAnswerBackend,
    HashEmbedBackend,
    PoolCaptionBackend,
    RemoteAnswerBackend,
    RemoteCaptionBackend,
    RemoteChatBackend,
    RemoteEmbedBackend,
    SimulatedChatBackend,
    pool_uri_resolver,
)
from .corpus import ImagePool, ImageRecord, PoolFormatError, load_pool, save_pool
from .metrics import LogFormatError, MetricReport, evaluate, read_logs, write_logs
from .orchestrator import EpisodeConfig, run_batch

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

ENV_PREFIX = "CHATSEARCH_"

# Keys that participate in flag > config file > env > default resolution.
RESOLVABLE = {
    "rounds": int,
    "n": int,
    "m": int,
    "k_questions": int,
    "k_report": int,
    "seed": int,
    "parallelism": int,
    "early_stop": bool,
    "backend_chat": str,
    "backend_embed": str,
    "backend_caption": str,
    "backend_answer": str,
}


class CliError(click.ClickException):
    """Runtime failure; maps to exit code 2."""

    def __init__(self, message):
        super().__init__(message)
        self.exit_code = EXIT_RUNTIME


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except FileNotFoundError:
        raise click.UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"config file is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise click.UsageError("config file must hold a JSON object")
    return obj


def _coerce(key: str, raw, kind):
    if kind is bool and isinstance(raw, str):
        return raw.lower() in ("1", "true", "yes", "on")
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise click.UsageError(f"bad value for {key!r}: {raw!r}")


def resolve_settings(ctx: click.Context, params: dict, config_file: dict,
                     env=None) -> tuple[dict, dict]:
    """Apply flag > file > env > default per key; returns values + sources."""
    env = env if env is not None else dict(__import__("os").environ)
    values: dict = {}
    sources: dict = {}
    for key, kind in RESOLVABLE.items():
        if key not in params:
            continue
        source = ctx.get_parameter_source(key)
        if source is not None and source.name == "COMMANDLINE":
            values[key], sources[key] = params[key], "flag"
        elif key in config_file:
            values[key], sources[key] = _coerce(key, config_file[key], kind), "config"
        elif ENV_PREFIX + key.upper() in env:
            values[key] = _coerce(key, env[ENV_PREFIX + key.upper()], kind)
            sources[key] = "env"
        else:
            values[key], sources[key] = params[key], "default"
    return values, sources


def _episode_config(values: dict) -> EpisodeConfig:
    return EpisodeConfig(
        max_rounds=values["rounds"],
        n=values["n"],
        m=values["m"],
        k_questions=values["k_questions"],
        report_k=values["k_report"],
        seed=values["seed"],
        early_stop=values["early_stop"],
    )


def build_backends(values: dict, pool: ImagePool) -> Backends:
    """Instantiate the four roles from their mock|remote selections."""
    seed = values["seed"]
    if values["backend_chat"] == "mock":
        chat = SimulatedChatBackend()
    else:
        chat = RemoteChatBackend(BackendConfig.from_env("chat"))
    if values["backend_embed"] == "mock":
        embed = HashEmbedBackend(dim=pool.dimension, seed=seed)
    else:
        embed = RemoteEmbedBackend(BackendConfig.from_env("embed"),
                                   dimension=pool.dimension)
    if values["backend_caption"] == "mock":
        caption = PoolCaptionBackend(pool)
    else:
        caption = RemoteCaptionBackend(BackendConfig.from_env("caption"),
                                       pool_uri_resolver(pool))
    if values["backend_answer"] == "mock":
        answer = CaptionAnswerBackend(pool)
    else:
        answer = RemoteAnswerBackend(BackendConfig.from_env("answer"),
                                     pool_uri_resolver(pool))
    return Backends(chat=chat, embed=embed, caption=caption, answer=answer)


def _read_dataset(path: str) -> list[tuple[str, str]]:
    """(target_id, caption) pairs from a line-delimited JSON file."""
    pairs = []
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read dataset: {exc}")
    with handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                target_id = obj["target_id"]
                caption = obj["caption"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CliError(f"dataset line {line_no}: expected "
                               '{"target_id": ..., "caption": ...}')
            pairs.append((str(target_id), str(caption)))
    if not pairs:
        raise CliError("dataset is empty")
    return pairs


def _load_pool_or_fail(path: str) -> ImagePool:
    try:
        pool = load_pool(path)
    except OSError as exc:
        raise CliError(f"cannot read pool: {exc}")
    except PoolFormatError as exc:
        raise CliError(f"pool file: {exc}")
    if len(pool) == 0:
        raise CliError("pool is empty")
    return pool


def _write_json(path: str | None, obj) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


def _report_table(report: MetricReport) -> str:
    lines = [
        f"queries: {report.num_queries}   K: {report.k}   "
        f"rounds: 0..{report.round_cutoff}",
        f"BRI (lower is better): {report.bri:.4f}",
        "round  recall@K  hits@K  mrr@K  ndcg@K",
    ]
    for t in range(len(report.recall_at_k)):
        lines.append(
            f"{t:>5}  {report.recall_at_k[t]:>8.3f}  {report.hits_at_k[t]:>6.3f}  "
            f"{report.mrr_at_k[t]:>5.3f}  {report.ndcg_at_k[t]:>6.3f}")
    if report.avg_rounds_to_success is None:
        lines.append(f"avg rounds to success: n/a (0 of {report.num_queries} succeeded)")
    else:
        lines.append(
            f"avg rounds to success: {report.avg_rounds_to_success:.2f} "
            f"({report.num_successful} of {report.num_queries} succeeded)")
    return "\n".join(lines)


def backend_options(fn):
    for role in ("answer", "caption", "embed", "chat"):
        fn = click.option(f"--backend.{role}", f"backend_{role}",
                          type=click.Choice(["mock", "remote"]), default="mock",
                          show_default=True,
                          help=f"Backend for the {role} role.")(fn)
    return fn


def episode_options(fn):
    decorators = [
        click.option("--rounds", type=int, default=10, show_default=True,
                     help="Dialogue rounds per episode."),
        click.option("--n", type=int, default=None,
                     help="Retrieval candidates per round (default: ~1% of pool)."),
        click.option("--m", type=int, default=10, show_default=True,
                     help="Clusters (captions shown to the questioner)."),
        click.option("--k-questions", type=int, default=5, show_default=True,
                     help="Candidate questions generated per round."),
        click.option("--K", "k_report", type=int, default=10, show_default=True,
                     help="K for Recall/Hits/MRR/NDCG reporting."),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--early-stop", is_flag=True, default=False,
                     help="Stop an episode once the target reaches rank 1."),
    ]
    for decorator in reversed(decorators):
        fn = decorator(fn)
    return fn


@click.group()
@click.version_option(version=__version__, prog_name="chatsearch")
def cli():
    """Interactive text-to-image retrieval toolkit."""


@cli.command("embed")
@click.option("--captions", "captions_path", required=True,
              help='Input JSONL: {"id", "caption", "image_uri"?} per line.')
@click.option("--out", "out_path", required=True, help="Pool file to write.")
@click.option("--backend.embed", "backend_embed",
              type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--dim", type=int, default=32, show_default=True,
              help="Embedding dimension for the mock embedder.")
@click.option("--seed", type=int, default=0, show_default=True)
def cmd_embed(captions_path, out_path, backend_embed, dim, seed):
    """Embed a captions file into a pool file."""
    if backend_embed == "mock":
        embedder = HashEmbedBackend(dim=dim, seed=seed)
    else:
        embedder = RemoteEmbedBackend(BackendConfig.from_env("embed"))
    records = []
    failures = {}
    try:
        handle = open(captions_path, "r", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read captions: {exc}")
    with handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                image_id = str(obj["id"])
                caption = str(obj["caption"])
            except (json.JSONDecodeError, KeyError, TypeError):
                raise CliError(f"captions line {line_no}: expected "
                               '{"id": ..., "caption": ...}')
            try:
                embedding = embedder.embed_text(caption)
            except BackendError as exc:
                failures[image_id] = str(exc)
                continue
            records.append(ImageRecord(id=image_id, embedding=embedding,
                                       caption=caption,
                                       image_uri=obj.get("image_uri")))
    try:
        pool = ImagePool(records)
    except PoolFormatError as exc:
        raise CliError(str(exc))
    save_pool(pool, out_path)
    click.echo(f"wrote {len(pool)} records to {out_path}", err=True)
    if failures:
        report_path = out_path + ".failures.json"
        _write_json(report_path, failures)
        click.echo(f"{len(failures)} record(s) failed; see {report_path}", err=True)
        raise CliError(f"{len(failures)} record(s) could not be embedded")


@cli.command("run")
@click.option("--pool", "pool_path", required=True, help="Pool file.")
@click.option("--dataset", "dataset_path", required=True,
              help='JSONL of {"target_id", "caption"} queries.')
@click.option("--out", "out_path", required=True, help="Episode log file to write.")
@click.option("--config", "config_path", default=None,
              help="JSON config file (flags take precedence).")
@click.option("--parallelism", type=int, default=1, show_default=True)
@episode_options
@backend_options
@click.pass_context
def cmd_run(ctx, pool_path, dataset_path, out_path, config_path, **params):
    """Simulate one episode per dataset query and write the logs."""
    values, sources = resolve_settings(ctx, params, _load_config_file(config_path))
    pool = _load_pool_or_fail(pool_path)
    dataset = _read_dataset(dataset_path)
    config = _episode_config(values)
    backends = build_backends(values, pool)
    result = run_batch(dataset, pool, config, backends,
                       parallelism=values["parallelism"])
    write_logs(result.logs, out_path)
    manifest = {
        "command": "run",
        "pool": pool_path,
        "dataset": dataset_path,
        "out": out_path,
        "num_queries": len(dataset),
        "num_logs": len(result.logs),
        "failures": result.failures,
        "config": {k: values[k] for k in sorted(values) if k != "parallelism"},
        "sources": {k: sources[k] for k in sorted(sources) if k != "parallelism"},
        "package_version": __version__,
    }
    _write_json(out_path + ".manifest.json", manifest)
    click.echo(f"wrote {len(result.logs)} episode log(s) to {out_path}", err=True)
    if result.failures:
        click.echo(f"{result.num_failed} episode(s) failed", err=True)
        raise CliError(f"{result.num_failed} episode(s) failed; see manifest")


@cli.command("eval")
@click.option("--log", "log_path", required=True, help="Episode log file.")
@click.option("--K", "k_report", type=int, default=10, show_default=True)
@click.option("--cutoff", type=int, default=None,
              help="Evaluate rounds 0..cutoff (default: all).")
@click.option("--out", "out_path", default=None,
              help="Write the JSON report here (default: stdout).")
def cmd_eval(log_path, k_report, cutoff, out_path):
    """Score an episode log file."""
    try:
        logs = read_logs(log_path)
    except OSError as exc:
        raise CliError(f"cannot read log: {exc}")
    except LogFormatError as exc:
        raise CliError(f"log file: {exc}")
    if not logs:
        raise CliError("log file holds no episodes")
    try:
        report = evaluate(logs, k=k_report, round_cutoff=cutoff)
    except ValueError as exc:
        raise CliError(str(exc))
    _write_json(out_path, report.to_dict())
    click.echo(_report_table(report), err=True)


@cli.command("ablate-m")
@click.option("--pool", "pool_path", required=True)
@click.option("--dataset", "dataset_path", required=True)
@click.option("--out", "out_path", required=True, help="Per-m report file.")
@click.option("--m-values", default="2,5,10", show_default=True,
              help="Comma-separated cluster counts to sweep.")
@click.option("--config", "config_path", default=None)
@click.option("--parallelism", type=int, default=1, show_default=True)
@episode_options
@backend_options
@click.pass_context
def cmd_ablate_m(ctx, pool_path, dataset_path, out_path, m_values, config_path,
                 **params):
    """Run the batch once per m and tabulate BRI."""
    try:
        sweep = [int(v) for v in m_values.split(",") if v.strip()]
    except ValueError:
        raise click.UsageError(f"--m-values must be comma-separated integers, "
                               f"got {m_values!r}")
    if not sweep:
        raise click.UsageError("--m-values is empty")
    values, _ = resolve_settings(ctx, params, _load_config_file(config_path))
    pool = _load_pool_or_fail(pool_path)
    dataset = _read_dataset(dataset_path)
    rows = []
    for m in sweep:
        config = _episode_config({**values, "m": m})
        resolved = config.resolve_for_pool(len(pool))
        if resolved.m < m:
            click.echo(f"warning: m={m} clamped to {resolved.m} "
                       f"(candidate count n={resolved.n})", err=True)
        backends = build_backends(values, pool)
        result = run_batch(dataset, pool, config, backends,
                           parallelism=values["parallelism"])
        if not result.logs:
            raise CliError(f"all episodes failed for m={m}")
        report = evaluate(result.logs, k=values["k_report"])
        rows.append({"m": m, "effective_m": resolved.m, "bri": report.bri,
                     "num_queries": report.num_queries,
                     "num_failed": result.num_failed})
        click.echo(f"m={m:<3} bri={report.bri:.4f}", err=True)
    _write_json(out_path, {"rows": rows, "k": values["k_report"],
                           "seed": values["seed"],
                           "package_version": __version__})


@cli.command("serve")
@click.option("--pool", "pool_path", required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--log-dir", default=None, help="Directory for session logs.")
@click.option("--static", "static_dir", default=None,
              help="Serve built UI assets from this directory under /ui.")
@click.option("--config", "config_path", default=None)
@episode_options
@backend_options
@click.pass_context
def cmd_serve(ctx, pool_path, host, port, log_dir, static_dir, config_path, **params):
    """Start the interactive session service."""
    import uvicorn

    from .service import create_app

    values, _ = resolve_settings(ctx, params, _load_config_file(config_path))
    pool = _load_pool_or_fail(pool_path)
    backends = build_backends(values, pool)
    app = create_app(pool, backends, _episode_config(values),
                     log_dir=log_dir, static_dir=static_dir)
    click.echo(f"serving {len(pool)} images on http://{host}:{port}", err=True)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except CliError as exc:
        click.echo(f"error: {exc.message}", err=True)
        return EXIT_RUNTIME
    except click.Abort:
        return EXIT_USAGE
    except (BackendError, PoolFormatError, LogFormatError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
