"""Command-line interface: extract, split, stats, train, predict, highlight, evaluate.

Configuration is layered: built-in defaults, then an optional JSON config
file, then explicit flags. Every command echoes its effective configuration
(and seed) into the output directory as a JSON snapshot before doing work.

Exit codes: 0 success, 1 missing or inconsistent input, 2 SRL backend
failure, 3 non-finite training loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from . import data as data_mod
from . import evaluation
from .attention import highlight_record
from .core import FrameSource, LabelVector, Sample, read_samples, write_samples
from .data import FieldMap, SplitManifest, SplitSpec, corpus_stats, dedup
from .model import (
    Checkpoint,
    FactErrorModel,
    ModelConfig,
    PreparedSample,
    build_model,
    load_checkpoint,
    prepare_samples,
    save_checkpoint,
)
from .srl import (
    LexiconBackend,
    SrlBackendError,
    SubprocessBackend,
    extract_frames,
    read_frame_sidecar,
    tokenize,
    write_frame_sidecar,
)
from .synthetic import make_alignment_corpus
from .training import NonFiniteLossError, TrainConfig, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_MISSING_INPUT = 1
EXIT_BACKEND_FAILURE = 2
EXIT_NONFINITE_LOSS = 3


class MissingInputError(FileNotFoundError):
    pass


def _require_file(path: str | Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"{what} not found: {path}")
    return path


def _layered(args: argparse.Namespace, keys: dict[str, object]) -> dict:
    """defaults <- config file <- explicitly passed flags."""
    effective = dict(keys)
    if getattr(args, "config", None):
        with open(_require_file(args.config, "config file"), "r", encoding="utf-8") as handle:
            file_values = json.load(handle)
        unknown = set(file_values) - set(keys)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        effective.update(file_values)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            effective[key] = value
    return effective


def _write_snapshot(out_dir: Path, command: str, effective: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {"command": command, **effective}
    with open(out_dir / f"config_{command}.json", "w", encoding="utf-8") as handle:
        json.dump(snapshot, handle, indent=2, sort_keys=True, default=str)
        handle.write("\n")


def _out_dir(args: argparse.Namespace, primary_output: str | Path | None) -> Path:
    if getattr(args, "out_dir", None):
        return Path(args.out_dir)
    if primary_output is not None:
        return Path(primary_output).resolve().parent
    return Path(".")


def _load_corpus(args: argparse.Namespace) -> list[Sample]:
    path = _require_file(args.corpus, "corpus file")
    if getattr(args, "field_map", None):
        fmap = FieldMap.from_json(_require_file(args.field_map, "field map"))
        return data_mod.load_raw_corpus(path, fmap)
    return read_samples(path)


def _subset(samples: list[Sample], args: argparse.Namespace) -> list[Sample]:
    if not getattr(args, "manifest", None):
        return samples
    manifest = SplitManifest.load(_require_file(args.manifest, "split manifest"))
    return data_mod.select_samples(samples, manifest.subset(args.subset))


def _build_backend(args: argparse.Namespace):
    if args.backend == "lexicon":
        verbs: list[str] = []
        if args.verbs:
            verbs.extend(v.strip() for v in args.verbs.split(",") if v.strip())
        if args.lexicon_file:
            with open(_require_file(args.lexicon_file, "lexicon file"), encoding="utf-8") as handle:
                verbs.extend(line.strip() for line in handle if line.strip())
        if not verbs:
            raise ValueError("lexicon backend needs --verbs or --lexicon-file")
        return LexiconBackend(verbs)
    if args.backend == "subprocess":
        if not args.backend_cmd:
            raise ValueError("subprocess backend needs --backend-cmd")
        return SubprocessBackend(shlex.split(args.backend_cmd))
    raise ValueError(f"unknown backend {args.backend!r}")


def _prepare(model: FactErrorModel, samples: list[Sample], frames_path: str) -> list[PreparedSample]:
    frames = read_frame_sidecar(_require_file(frames_path, "frames sidecar"))
    return prepare_samples(model.encoder, samples, frames)


# --- commands -----------------------------------------------------------------

def cmd_extract(args: argparse.Namespace) -> int:
    samples = _load_corpus(args)
    backend = _build_backend(args)
    frames = {}
    for sample in samples:
        frames[(sample.id, FrameSource.DOCUMENT)] = extract_frames(
            sample.document, backend, FrameSource.DOCUMENT
        )
        frames[(sample.id, FrameSource.SUMMARY)] = extract_frames(
            sample.summary, backend, FrameSource.SUMMARY
        )
    if hasattr(backend, "close"):
        backend.close()
    write_frame_sidecar(args.out, frames)
    out_dir = _out_dir(args, args.out)
    _write_snapshot(out_dir, "extract", {
        "corpus": args.corpus, "out": args.out, "backend": args.backend,
        "verbs": args.verbs, "lexicon_file": args.lexicon_file,
        "backend_cmd": args.backend_cmd, "seed": args.seed,
    })
    print(f"extracted frames for {len(samples)} samples -> {args.out}")
    return EXIT_OK


def cmd_split(args: argparse.Namespace) -> int:
    samples = _load_corpus(args)
    if not args.no_dedup:
        before = len(samples)
        samples = dedup(samples)
        print(f"dedup: {before} -> {len(samples)} samples")
    if args.write_deduped:
        write_samples(args.write_deduped, samples)
    if args.mode == "random":
        if not args.sizes:
            raise ValueError("random split needs --sizes train,validation,test")
        sizes = [int(x) for x in args.sizes.split(",")]
        if len(sizes) != 3:
            raise ValueError("--sizes needs exactly three comma-separated integers")
        manifest = data_mod.make_random_split(
            samples, SplitSpec(sizes[0], sizes[1], sizes[2], seed=args.seed)
        )
    else:
        if not args.holdout_system or args.val_size is None:
            raise ValueError("challenging split needs --holdout-system and --val-size")
        manifest = data_mod.make_challenging_split(
            samples, args.holdout_system, args.val_size, seed=args.seed
        )
    manifest.save(args.out)
    _write_snapshot(_out_dir(args, args.out), "split", {
        "corpus": args.corpus, "mode": args.mode, "sizes": args.sizes,
        "holdout_system": args.holdout_system, "val_size": args.val_size,
        "seed": args.seed, "out": args.out, "dedup": not args.no_dedup,
    })
    print(
        f"split sizes: train={len(manifest.train)} validation={len(manifest.validation)} "
        f"test={len(manifest.test)} removed_overlap={len(manifest.removed_overlap)}"
    )
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    samples = _load_corpus(args)
    if args.dedup:
        samples = dedup(samples)
    stats = corpus_stats(samples)
    print(stats.to_tables())
    print(f"total: {stats.total}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            json.dump(stats.to_dict(), handle, indent=2, sort_keys=True)
            handle.write("\n")
        _write_snapshot(_out_dir(args, args.out), "stats", {
            "corpus": args.corpus, "out": args.out, "dedup": args.dedup, "seed": args.seed,
        })
    return EXIT_OK


_MODEL_KEYS = dict(
    encoder_type="toy", hidden_size=32, encoder_layers=2, encoder_heads=2,
    encoder_segment_isolated=False, vocab_size=4096, truncation_limit=128,
    activation="gelu", pooler_hidden=None, attention_heads=16, adapter_dim=32,
    base_model=None, fact_attention=True, threshold=0.5,
)

_TRAIN_KEYS = dict(
    epochs=40, learning_rate=1e-5, batch_size=12, grad_accum_steps=2, seed=13,
    threshold=0.5, top_k=5, weight_mode="paper",
)


def cmd_train(args: argparse.Namespace) -> int:
    effective = _layered(args, {**_MODEL_KEYS, **_TRAIN_KEYS})
    model_values = {key: effective[key] for key in _MODEL_KEYS}
    train_values = {key: effective[key] for key in _TRAIN_KEYS}
    if args.ablate_fact_attention:
        model_values["fact_attention"] = False
    model_values["threshold"] = train_values["threshold"]

    samples = _load_corpus(args)
    manifest = SplitManifest.load(_require_file(args.manifest, "split manifest"))
    train_samples = data_mod.select_samples(samples, manifest.train)
    val_samples = data_mod.select_samples(samples, manifest.validation)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_config = TrainConfig(**train_values)

    head_counts = (
        [int(h) for h in args.sweep_heads.split(",")]
        if args.sweep_heads
        else [model_values["attention_heads"]]
    )
    best = None
    for heads in head_counts:
        config = ModelConfig(**{**model_values, "attention_heads": heads})
        model = build_model(config, seed=train_config.seed)
        train_items = _prepare(model, train_samples, args.frames)
        val_items = _prepare(model, val_samples, args.frames)
        log_path = out_dir / ("train_log.jsonl" if len(head_counts) == 1
                              else f"train_log_h{heads}.jsonl")
        result = train(model, train_items, val_items, train_config, log_path=log_path)
        print(
            f"heads={heads}: best validation BACC {result.checkpoint.val_bacc:.4f} "
            f"at epoch {result.checkpoint.epoch}"
        )
        if best is None or result.checkpoint.val_bacc > best.checkpoint.val_bacc:
            best = result
    assert best is not None
    best.checkpoint.extra["sweep_heads"] = head_counts
    checkpoint_path = out_dir / "checkpoint.ckpt"
    save_checkpoint(checkpoint_path, best.checkpoint)
    _write_snapshot(out_dir, "train", {
        **model_values, **train_values,
        "attention_heads": best.checkpoint.config.attention_heads,
        "sweep_heads": head_counts, "corpus": args.corpus, "frames": args.frames,
        "manifest": args.manifest, "checkpoint": str(checkpoint_path),
    })
    print(f"saved checkpoint -> {checkpoint_path}")
    return EXIT_OK


def _load_model(args: argparse.Namespace) -> tuple[FactErrorModel, Checkpoint]:
    checkpoint = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    return checkpoint.build_model(), checkpoint


def cmd_predict(args: argparse.Namespace) -> int:
    model, checkpoint = _load_model(args)
    samples = _subset(_load_corpus(args), args)
    items = _prepare(model, samples, args.frames)
    threshold = args.threshold if args.threshold is not None else model.config.threshold
    with open(args.out, "w", encoding="utf-8") as handle:
        for item in items:
            probs, labels = model.predict_labels(item.prepared, threshold)
            record = {
                "id": item.sample.id,
                "probs": [round(float(p), 6) for p in probs],
                "labels": labels.to_dict(),
            }
            handle.write(json.dumps(record) + "\n")
    _write_snapshot(_out_dir(args, args.out), "predict", {
        "corpus": args.corpus, "frames": args.frames, "checkpoint": args.checkpoint,
        "out": args.out, "threshold": threshold, "subset": args.subset,
        "manifest": args.manifest, "seed": checkpoint.seed,
    })
    print(f"wrote {len(items)} predictions -> {args.out}")
    return EXIT_OK


def cmd_highlight(args: argparse.Namespace) -> int:
    model, checkpoint = _load_model(args)
    samples = _subset(_load_corpus(args), args)
    items = _prepare(model, samples, args.frames)
    with open(args.out, "w", encoding="utf-8") as handle:
        for item in items:
            document = tokenize(item.sample.document)
            if args.baseline_cls:
                with torch.no_grad():
                    output = model.encoder(item.prepared.encoding)
                result = evaluation.baseline_cls_highlights(
                    output.final_attention,
                    item.prepared.doc_frames,
                    args.top_k,
                    cls_index=item.prepared.encoding.cls_index,
                    mode=args.baseline_importance,
                )
            else:
                result = model.highlight(item.prepared, args.top_k)
            handle.write(json.dumps(highlight_record(item.sample.id, result, document)) + "\n")
    _write_snapshot(_out_dir(args, args.out), "highlight", {
        "corpus": args.corpus, "frames": args.frames, "checkpoint": args.checkpoint,
        "out": args.out, "top_k": args.top_k, "baseline_cls": args.baseline_cls,
        "baseline_importance": args.baseline_importance, "subset": args.subset,
        "manifest": args.manifest, "seed": checkpoint.seed,
    })
    print(f"wrote highlights for {len(items)} samples -> {args.out}")
    return EXIT_OK


def _read_predictions(path: str | Path) -> dict[str, LabelVector]:
    predictions = {}
    with open(_require_file(path, "predictions file"), "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            predictions[record["id"]] = LabelVector.from_dict(record["labels"])
    return predictions


def cmd_evaluate(args: argparse.Namespace) -> int:
    samples = _subset(_load_corpus(args), args)
    reports = []
    for run_index, pred_path in enumerate(args.predictions):
        by_id = _read_predictions(pred_path)
        missing = [s.id for s in samples if s.id not in by_id]
        if missing:
            raise ValueError(f"{pred_path}: no prediction for sample {missing[0]!r}")
        predictions = [by_id[s.id] for s in samples]
        reports.append(
            evaluation.report_from_predictions(
                predictions, samples, {"predictions": str(pred_path), "run": run_index}
            )
        )
    report = reports[0] if len(reports) == 1 else evaluation.average_reports(reports)
    print(report.to_table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(report.to_json() + "\n")
        _write_snapshot(_out_dir(args, args.out), "evaluate", {
            "corpus": args.corpus, "predictions": [str(p) for p in args.predictions],
            "out": args.out, "subset": args.subset, "manifest": args.manifest,
            "seed": args.seed,
        })
    return EXIT_OK


def cmd_make_demo(args: argparse.Namespace) -> int:
    samples, verbs = make_alignment_corpus(
        args.n_samples, seed=args.seed, facts_per_doc=args.facts_per_doc
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_samples(out_dir / "corpus.jsonl", samples)
    with open(out_dir / "verbs.txt", "w", encoding="utf-8") as handle:
        handle.write("\n".join(verbs) + "\n")
    _write_snapshot(out_dir, "make-demo", {
        "n_samples": args.n_samples, "seed": args.seed,
        "facts_per_doc": args.facts_per_doc, "out_dir": str(out_dir),
    })
    print(f"wrote {len(samples)} synthetic samples -> {out_dir / 'corpus.jsonl'}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument("--out-dir", default=None, help="directory for the config snapshot")


def _add_corpus(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--corpus", required=True, help="sample JSONL (or raw corpus with --field-map)")
    parser.add_argument("--field-map", default=None, help="JSON field map for raw corpora")


def _add_subset(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", default=None, help="split manifest JSON")
    parser.add_argument("--subset", default="test", choices=("train", "validation", "test"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framefact",
        description="Fine-grained factual error detection with semantic-frame evidence",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract semantic frames into a sidecar file")
    _add_corpus(p)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="lexicon", choices=("lexicon", "subprocess"))
    p.add_argument("--verbs", default=None, help="comma-separated verb lexicon")
    p.add_argument("--lexicon-file", default=None, help="file with one verb per line")
    p.add_argument("--backend-cmd", default=None, help="command line of an external SRL tool")
    _add_common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("split", help="build a split manifest (dedups first by default)")
    _add_corpus(p)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="random", choices=("random", "challenging"))
    p.add_argument("--sizes", default=None, help="train,validation,test sizes for random mode")
    p.add_argument("--holdout-system", default=None, help="system held out as the test set")
    p.add_argument("--val-size", type=int, default=None)
    p.add_argument("--no-dedup", action="store_true")
    p.add_argument("--write-deduped", default=None, help="write the post-dedup corpus here")
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("stats", help="error-type and system-category count tables")
    _add_corpus(p)
    p.add_argument("--out", default=None, help="also write the counts as JSON")
    p.add_argument("--dedup", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a detector and save the best checkpoint")
    _add_corpus(p)
    p.add_argument("--frames", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config file (flags override it)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--grad-accum-steps", "--grad-accum", dest="grad_accum_steps",
                   type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--weight-mode", default=None, choices=("paper", "inverse"))
    p.add_argument("--encoder", dest="encoder_type", default=None, choices=("toy", "adapter-bert"))
    p.add_argument("--base-model", default=None, help="pretrained model name for adapter-bert")
    p.add_argument("--hidden-size", type=int, default=None)
    p.add_argument("--encoder-layers", type=int, default=None)
    p.add_argument("--encoder-heads", type=int, default=None)
    p.add_argument("--encoder-segment-isolated", dest="encoder_segment_isolated",
                   action="store_const", const=True, default=None,
                   help="toy encoder: mask self-attention to stay within each segment")
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--truncation-limit", type=int, default=None)
    p.add_argument("--activation", default=None, choices=("gelu", "relu", "tanh"))
    p.add_argument("--pooler-hidden", type=int, default=None)
    p.add_argument("--heads", dest="attention_heads", type=int, default=None,
                   help="cross-attention head count")
    p.add_argument("--adapter-dim", type=int, default=None)
    p.add_argument("--sweep-heads", default=None,
                   help="comma-separated head counts; keeps the best by validation BACC")
    p.add_argument("--ablate-fact-attention", action="store_true",
                   help="replace document fact attention with document mean pooling")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-sample error probabilities and labels")
    _add_corpus(p)
    p.add_argument("--frames", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=None)
    _add_subset(p)
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("highlight", help="top-k document fact highlights per sample")
    _add_corpus(p)
    p.add_argument("--frames", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--baseline-cls", action="store_true",
                   help="rank by encoder CLS attention instead of fact attention")
    p.add_argument("--baseline-importance", default="mean", choices=("mean", "sum"))
    _add_subset(p)
    _add_common(p)
    p.set_defaults(func=cmd_highlight)

    p = sub.add_parser("evaluate", help="metric report from prediction files")
    _add_corpus(p)
    p.add_argument("--predictions", action="append", required=True,
                   help="prediction JSONL; repeat to average runs")
    p.add_argument("--out", default=None)
    _add_subset(p)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("make-demo", help="write a synthetic corpus plus its verb lexicon")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-samples", type=int, default=64)
    p.add_argument("--facts-per-doc", type=int, default=6)
    p.add_argument("--seed", type=int, default=13)
    p.set_defaults(func=cmd_make_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except SrlBackendError as exc:
        print(f"error: SRL backend failed: {exc}", file=sys.stderr)
        return EXIT_BACKEND_FAILURE
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE_LOSS


if __name__ == "__main__":
    sys.exit(main())
