"""``obsbatch`` command line: ingest, synth, shuffle, iterate, bench, verify, inspect."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import sys
import time
import warnings
import zlib
from pathlib import Path

import numpy as np

from ..loader import LoaderConfig, open_epoch
from ..metrics import randomness_report, run_throughput, sweep, write_csv
from ..metrics.throughput import CACHE_MODES, SWEEP_PARAMETERS
from ..preshuffle import (
    DatasetCollection,
    MissingProvenanceError,
    ShuffleStats,
    plan_shuffle,
    read_provenance,
    run_shuffle,
    verify_shuffle,
)
from ..preshuffle.collection import JOIN_MODES
from ..store import CodecError, CsrBlock, ManifestError, Store, StoreCorruptError, open_store
from ..store.manifest import CODECS, INDEX_DTYPES, VALUE_DTYPES
from .chunking import DEFAULT_CHUNKS_PER_SHARD, suggest_chunking
from .ingest import IngestError, ingest_csv, ingest_triplet
from .synth import synth_store

log = logging.getLogger("obsbatch")

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_IO = 3

_FACTOR = re.compile(r"^\s*(\d+)\s*(?:\^\s*(\d+))?\s*$")


class UsageError(ValueError):
    pass


class VerificationFailed(Exception):
    pass


def parse_count(text: str) -> int:
    """Parse an integer flag; accepts ``2^k``, ``2**k`` and products like ``3*2^10``."""
    s = str(text).replace("**", "^").replace("_", "")
    total = 1
    for factor in s.split("*"):
        m = _FACTOR.match(factor)
        if not m:
            raise argparse.ArgumentTypeError(f"not an integer or a^b expression: {text!r}")
        base, exp = int(m.group(1)), m.group(2)
        total *= base ** int(exp) if exp is not None else base
    return total


def _count_list(text: str) -> list[int]:
    return [parse_count(v) for v in text.split(",") if v.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one-line errors instead of usage dumps
        raise UsageError(f"{self.prog}: {message}")


# ---- flag groups -------------------------------------------------------------

def _store_flags(p: argparse.ArgumentParser, *, dtypes: bool = True) -> None:
    g = p.add_argument_group("store layout")
    g.add_argument("--chunk-rows", type=parse_count, default=1024)
    g.add_argument("--chunks-per-shard", type=parse_count, default=DEFAULT_CHUNKS_PER_SHARD)
    g.add_argument("--codec", choices=CODECS, default="none")
    if dtypes:  # shuffle output keeps the inputs' dtypes
        g.add_argument("--value-dtype", choices=sorted(VALUE_DTYPES), default="f32")
        g.add_argument("--index-dtype", choices=sorted(INDEX_DTYPES), default=None)


def _loader_flags(p: argparse.ArgumentParser) -> None:
    d = LoaderConfig()
    g = p.add_argument_group("loader")
    g.add_argument("--fetch-block-rows", type=parse_count, default=d.fetch_block_rows)
    g.add_argument("--buffer-rows", type=parse_count, default=d.buffer_capacity_rows)
    g.add_argument("--batch-rows", type=parse_count, default=d.batch_rows)
    g.add_argument("--prefetch", type=parse_count, default=d.prefetch_depth)
    g.add_argument("--drop-last", action="store_true")
    g.add_argument("--cache-bypass", action="store_true")


def _loader_config(args) -> LoaderConfig:
    return LoaderConfig(
        fetch_block_rows=args.fetch_block_rows,
        buffer_capacity_rows=args.buffer_rows,
        batch_rows=args.batch_rows,
        seed=args.seed,
        prefetch_depth=args.prefetch,
        drop_last=args.drop_last,
        cache_bypass=args.cache_bypass,
    )


def _require_out(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command}: --out is required")
    return Path(args.out)


def _open(path) -> Store:
    try:
        return open_store(path)
    except ManifestError as exc:
        raise StoreCorruptError(f"{path}: {exc}") from exc


# ---- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = _require_out(args)
    fmt = args.format or ("csv" if str(args.input).lower().endswith(".csv") else "triplet")
    common = dict(value_dtype=args.value_dtype, chunk_rows=args.chunk_rows,
                  chunks_per_shard=args.chunks_per_shard, codec=args.codec)
    if fmt == "csv":
        store = ingest_csv(args.input, out, **common)
    else:
        store = ingest_triplet(args.input, out, index_dtype=args.index_dtype, **common)
    print(f"ingested rows={store.n_obs} vars={store.n_var} layout={store.layout} path={out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = _require_out(args)
    store = synth_store(
        out, args.n_obs, args.n_var, args.layout, args.density, args.seed,
        value_dtype=args.value_dtype, index_dtype=args.index_dtype, chunk_rows=args.chunk_rows,
        chunks_per_shard=args.chunks_per_shard, codec=args.codec, disk_budget=args.disk_budget,
    )
    print(f"synthesized rows={store.n_obs} vars={store.n_var} layout={store.layout} path={out}")
    return EXIT_OK


def cmd_shuffle(args) -> int:
    out = _require_out(args)
    collection = DatasetCollection(join_mode=args.join)
    for i, path in enumerate(args.inputs):
        collection.add(_open(path), dataset_id=i)
    plan = plan_shuffle(collection.total_rows, args.block_rows, args.buffer_rows, args.seed)
    stats = ShuffleStats()
    store, _ = run_shuffle(
        collection, plan, out,
        chunk_rows=args.chunk_rows,
        chunks_per_shard=args.chunks_per_shard,
        codec=args.codec,
        workers=args.workers,
        stats=stats,
    )
    print(f"shuffled rows={store.n_obs} vars={store.n_var} rounds={len(plan.rounds)} "
          f"peak_resident_rows={stats.meter.peak} bound={args.buffer_rows + args.block_rows} path={out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    store = _open(args.store)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = verify_shuffle(store, samples=args.samples, seed=args.seed)
    for v in report.violations:
        print(f"violation: {v}")
    print(f"verify ok={report.ok} rows={report.n_rows} checked_rows={report.checked_rows} "
          f"mismatched_rows={len(report.mismatched_rows)}")
    if not report.ok:
        raise VerificationFailed(f"{len(report.violations)} violation(s) in {args.store}")
    return EXIT_OK


def _batch_crc(block, crc: int) -> int:
    if isinstance(block, CsrBlock):
        for arr in (block.indptr, block.indices, block.data):
            crc = zlib.crc32(np.ascontiguousarray(arr).tobytes(), crc)
        return crc
    return zlib.crc32(np.ascontiguousarray(block.values).tobytes(), crc)


def _identity_column(block) -> np.ndarray:
    if isinstance(block, CsrBlock):
        col = np.zeros(block.n_rows, dtype=np.float64)
        first = block.indptr[:-1]
        has = (block.indptr[1:] > first)
        hit = has.copy()
        hit[has] = block.indices[first[has]] == 0
        col[hit] = block.data[first[hit]]
        return col
    return block.values[:, 0].astype(np.float64)


def cmd_iterate(args) -> int:
    store = _open(args.store)
    config = _loader_config(args)
    failures = []
    for epoch in range(args.epochs):
        seen = np.zeros(store.n_obs, dtype=bool)
        digest = hashlib.sha256()
        crc = rows = batches = 0
        bad_identity = 0
        with open_epoch(store, config, epoch) as it:
            for batch in it:
                idx = batch.global_indices.astype(np.int64)
                seen[idx] = True
                digest.update(idx.astype("<i8").tobytes())
                crc = _batch_crc(batch.block, crc)
                if args.check_identity:
                    bad_identity += int((_identity_column(batch.block) != idx).sum())
                rows += batch.n_rows
                batches += 1
            reads, nbytes, decodes = it.io_counters()
        distinct = int(seen.sum())
        line = (f"epoch={epoch} rows={rows} batches={batches} distinct={distinct} "
                f"index_sha256={digest.hexdigest()[:16]} value_crc32={crc:08x} "
                f"read_ops={reads} bytes_read={nbytes} chunk_decodes={decodes}")
        if args.check_identity:
            line += f" identity_mismatches={bad_identity}"
        print(line, flush=True)
        if not config.drop_last and distinct != store.n_obs:
            failures.append(f"epoch {epoch} touched {distinct} of {store.n_obs} rows")
        if bad_identity:
            failures.append(f"epoch {epoch} has {bad_identity} rows whose identity column disagrees")
    if failures:
        raise VerificationFailed("; ".join(failures))
    return EXIT_OK


def cmd_bench(args) -> int:
    store = _open(args.store)
    config = _loader_config(args)
    strategies = ["chunked", "row_random"] if args.strategy == "both" else [args.strategy]
    items = []
    for strategy in strategies:
        if args.sweep:
            if not args.values:
                raise UsageError("bench: --sweep needs --values")
            items.extend(sweep(store, args.sweep, args.values, config, args.epochs, args.warmup,
                               strategy, args.cache_mode))
        else:
            items.append(run_throughput(store, config, args.epochs, args.warmup, strategy, args.cache_mode))
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            write_csv(items, fh)
    else:
        sys.stdout.write(write_csv(items))
    return EXIT_OK


def cmd_inspect(args) -> int:
    store = _open(args.store)
    m = store.manifest
    sys.stdout.write(m.to_json())
    print(f"chunk_rows={m.chunk_rows}")
    print(f"chunks_per_shard={m.chunks_per_shard}")
    print(f"shard_capacity_rows={m.shard_capacity_rows}")
    print(f"chunk_count={m.chunk_count}")
    print(f"shard_count={m.shard_count}")
    if m.has_provenance:
        try:
            meta = read_provenance(store.path).meta
        except MissingProvenanceError:
            print("provenance=missing")
        else:
            print("provenance=" + json.dumps(meta["shuffle"], sort_keys=True))
    return EXIT_OK


def cmd_randomness(args) -> int:
    store = _open(args.store)
    prov = read_provenance(store.path)
    report = randomness_report(prov, args.block_rows, args.window, args.simulations, args.seed)
    sys.stdout.write(write_csv([report]))
    return EXIT_OK


def cmd_suggest_chunking(args) -> int:
    chunk_rows, cps = suggest_chunking(args.layout, args.target_elements, mean_nnz_per_row=args.mean_nnz,
                                       n_var=args.n_var, chunks_per_shard=args.chunks_per_shard)
    print(f"chunk_rows={chunk_rows}")
    print(f"chunks_per_shard={cps}")
    print(f"shard_capacity_rows={chunk_rows * cps}")
    return EXIT_OK


# ---- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=parse_count, default=0)
    common.add_argument("-o", "--out", default=None, help="output path (store directory)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("-q", "--quiet", action="store_true", help="do not print the resolved config")

    parser = _Parser(prog="obsbatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="convert csv (dense) or triplet (csr) text to a store")
    p.add_argument("input")
    p.add_argument("--format", choices=("csv", "triplet"), default=None)
    _store_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic store")
    p.add_argument("--n-obs", type=parse_count, required=True)
    p.add_argument("--n-var", type=parse_count, required=True)
    p.add_argument("--layout", choices=("dense", "csr"), default="dense")
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--disk-budget", type=parse_count, default=2**34, help="refuse stores larger than this many bytes")
    _store_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("shuffle", parents=[common], help="preshuffle one or more stores into a new store")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--join", choices=JOIN_MODES, default="outer")
    p.add_argument("--block-rows", type=parse_count, required=True, help="contiguous source block size c")
    p.add_argument("--buffer-rows", type=parse_count, required=True, help="rows held per round m")
    p.add_argument("--workers", type=parse_count, default=0)
    _store_flags(p, dtypes=False)
    p.set_defaults(func=cmd_shuffle)

    p = sub.add_parser("verify", parents=[common], help="check a shuffled store against its sources")
    p.add_argument("store")
    p.add_argument("--samples", type=parse_count, default=1000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("iterate", parents=[common], help="stream epochs and print row counts and checksums")
    p.add_argument("store")
    p.add_argument("--epochs", type=parse_count, default=1)
    p.add_argument("--check-identity", action="store_true", help="require column 0 to equal the row index")
    _loader_flags(p)
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("bench", parents=[common], help="throughput protocol, CSV output")
    p.add_argument("store")
    p.add_argument("--strategy", choices=("chunked", "row_random", "both"), default="chunked")
    p.add_argument("--epochs", type=parse_count, default=1)
    p.add_argument("--warmup", type=parse_count, default=0)
    p.add_argument("--cache-mode", choices=CACHE_MODES, default="warm")
    p.add_argument("--sweep", choices=SWEEP_PARAMETERS, default=None)
    p.add_argument("--values", type=_count_list, default=None, help="comma-separated sweep values")
    p.add_argument("--csv", default=None, help="write CSV here instead of stdout")
    _loader_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("inspect", parents=[common], help="print a store's manifest and derived layout")
    p.add_argument("store")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("randomness", parents=[common], help="block-locality report from a shuffled store's provenance")
    p.add_argument("store")
    p.add_argument("--block-rows", type=parse_count, required=True)
    p.add_argument("--window", type=parse_count, required=True)
    p.add_argument("--simulations", type=parse_count, default=100)
    p.set_defaults(func=cmd_randomness)

    p = sub.add_parser("suggest-chunking", parents=[common], help="element-count chunk target to chunk_rows")
    p.add_argument("--layout", choices=("dense", "csr"), required=True)
    p.add_argument("--target-elements", type=parse_count, required=True)
    p.add_argument("--mean-nnz", type=float, default=None)
    p.add_argument("--n-var", type=parse_count, default=None)
    p.add_argument("--chunks-per-shard", type=parse_count, default=DEFAULT_CHUNKS_PER_SHARD)
    p.set_defaults(func=cmd_suggest_chunking)
    return parser


def resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "verbose", "quiet")}
    return json.loads(json.dumps(cfg, default=str))


def _error_line(code: int, exc: BaseException) -> str:
    return f"obsbatch: error code={code} kind={type(exc).__name__} message={json.dumps(str(exc))}"


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, VerificationFailed):
        return EXIT_VERIFY
    if isinstance(exc, (IngestError, CodecError, StoreCorruptError)):
        return EXIT_IO
    if isinstance(exc, OSError) and not isinstance(exc, FileExistsError):
        return EXIT_IO
    return EXIT_USAGE


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(_error_line(EXIT_USAGE, exc), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.quiet:
        print("config " + json.dumps(resolved_config(args), sort_keys=True), file=sys.stderr, flush=True)
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except (VerificationFailed, UsageError, ValueError, OSError) as exc:
        code = exit_code_for(exc)
        print(_error_line(code, exc), file=sys.stderr)
        return code
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
