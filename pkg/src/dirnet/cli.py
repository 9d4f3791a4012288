"""``dirnet`` command line: train, compress, finetune, eval, stats, config.

Exit codes: 0 success, 1 usage or configuration, 2 file IO, 3 malformed
model or input data, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import compressor, formats
from .config import RunConfig, dump_defaults, load_config
from .errors import ConfigError, DomainError, FormatError, InputError, IntegrityError, ShapeError
from .model import CompressedModel

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("dirnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(s: str) -> tuple:
    try:
        vals = tuple(int(t) for t in s.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated integer list, got {s!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _dumps(obj, **kw) -> str:
    return json.dumps(obj, default=_json_default, sort_keys=True, **kw)


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _load_model(path):
    try:
        return formats.load_any(path)
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _write(path, data, text=False):
    try:
        if text:
            Path(path).write_text(data, encoding="utf-8")
        else:
            Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    for key in ("kind", "widths", "embed_dim", "epochs"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    return cfg.replace(**over) if over else cfg


def _emit(args, human: str, payload):
    print(_dumps(payload) if args.json else human)


def model_counts(model) -> dict:
    """Dense-equivalent parameter count and stored nonzeros of a model file.

    For a compressed model the recurrent part counts each dictionary and
    code matrix as dense; ``nnz`` counts dictionary entries plus stored code
    coefficients. Embedding, output projection and biases are always dense.
    """
    extra = model.embed.size + model.out_proj.size + model.out_bias.size
    if isinstance(model, CompressedModel):
        dense = nnz = extra
        for cl in model.layers:
            d_size = cl.dict_h.atoms.size + (0 if cl.shared else cl.dict_x.atoms.size)
            dense += d_size + cl.p * cl.n + cl.p_x * cl.n_in + cl.bias.size
            nnz += d_size + cl.z_h.nnz + cl.z_x.nnz + int(np.count_nonzero(cl.bias))
        return {"params_dense_equivalent": int(dense), "nnz": int(nnz)}
    dense = extra + sum(l.w_h.size + l.w_x.size + l.bias.size for l in model.layers)
    nnz = extra + sum(int(np.count_nonzero(l.w_h)) + int(np.count_nonzero(l.w_x))
                      + int(np.count_nonzero(l.bias)) for l in model.layers)
    return {"params_dense_equivalent": int(dense), "nnz": int(nnz)}


def cmd_train(args) -> int:
    from .rnnrt import train_baseline
    cfg = _run_config(args)
    corpus = _read_bytes(args.corpus)
    model, hist = train_baseline(corpus, cfg.arch(), cfg.train_config())
    data = formats.save_model(model, args.out)
    log_path = args.log or f"{args.out}.log.jsonl"
    _write(log_path, "".join(_dumps(r) + "\n" for r in hist.records()), text=True)
    summary = {"out": str(args.out), "log": str(log_path), "bytes": len(data),
               "best_epoch": hist.best_epoch,
               "val_loss": hist.val_loss[-1] if hist.val_loss else None}
    _emit(args, f"wrote {args.out} ({len(data)} bytes), log {log_path}", summary)
    return EXIT_OK


def cmd_compress(args) -> int:
    cfg = _run_config(args)
    model = _load_model(args.model)
    if isinstance(model, CompressedModel):
        raise FormatError(f"{args.model} is already compressed")
    cm, report = compressor.compress_network(model, cfg.compress_config())
    formats.save_model(cm, args.out)
    report_path = args.report or f"{args.out}.report.json"
    _write(report_path, _dumps(report, indent=2) + "\n", text=True)
    t = report["totals"]
    human = (f"wrote {args.out}; p per layer {t['p']}; rate_dense {t['rate_dense']:.3f}; "
             f"report {report_path}")
    _emit(args, human, report)
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .rnnrt import finetune_masked
    cfg = _run_config(args)
    cm = _load_model(args.cmodel)
    if not isinstance(cm, CompressedModel):
        raise FormatError(f"{args.cmodel} is not a compressed model")
    corpus = _read_bytes(args.corpus)
    ft = cfg.finetune_config()
    if args.epochs is not None:
        ft = dataclasses.replace(ft, epochs=args.epochs)
    out, hist = finetune_masked(cm, corpus, ft, freeze_dict=cfg.freeze_dict)
    formats.save_model(out, args.out)
    if args.log:
        _write(args.log, "".join(_dumps(r) + "\n" for r in hist.records()), text=True)
    payload = {"out": str(args.out), "epochs": ft.epochs, "best_epoch": hist.best_epoch,
               "val_loss": hist.val_loss}
    _emit(args, f"wrote {args.out} after {ft.epochs} epochs", payload)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .rnnrt import evaluate
    model = _load_model(args.model)
    corpus = _read_bytes(args.corpus)
    metrics = evaluate(model, corpus, compressed_path=args.factored)
    if not np.isfinite(metrics["cross_entropy"]):
        raise DomainError("non-finite cross-entropy")
    metrics.update(model_counts(model))
    human = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                     for k, v in metrics.items())
    _emit(args, human, metrics)
    return EXIT_OK


def _file_stats(model) -> dict:
    info = {"kind": model.kind, "vocab": len(model.vocab), "embed_dim": model.embed.shape[1],
            "widths": [l.n for l in model.layers], "compressed": isinstance(model, CompressedModel)}
    info.update(model_counts(model))
    if isinstance(model, CompressedModel):
        entries = [compressor.layer_report(cl, {}) for cl in model.layers]
        info["layers"] = [{k: e[k] for k in ("n", "n_in", "p", "p_x", "nnz_h", "nnz_x",
                                             "rate_dense", "rate_nnz", "recon_err_h",
                                             "recon_err_x", "shared_d")} for e in entries]
        info["p"] = [e["p"] for e in entries]
    return info


def cmd_stats(args) -> int:
    if args.topology is not None:
        if args.p is None:
            raise UsageError("--topology needs --p")
        summary = compressor.topology_summary(list(args.topology), list(args.p), args.kind,
                                              args.n_in, args.vocab)
        lines = [f"{'layer':>5} {'n':>6} {'n_in':>6} {'p':>5} {'rate':>8} {'params':>10}"]
        for i, r in enumerate(summary["layers"]):
            lines.append(f"{i:>5} {r['n']:>6} {r['n_in']:>6} {r['p']:>5} "
                         f"{r['rate_dense']:>8.3f} {r['params_dense_equivalent']:>10}")
        lines.append(f"p per layer: {', '.join(str(p) for p in args.p)}")
        lines.append(f"dense-equivalent parameters: {summary['params_dense_equivalent']} "
                     f"(original {summary['params_original']})")
        _emit(args, "\n".join(lines), summary)
        return EXIT_OK
    if args.file is None:
        raise UsageError("stats needs a model file or --topology")
    info = _file_stats(_load_model(args.file))
    lines = [f"{'compressed' if info['compressed'] else 'dense'} {info['kind']} model, "
             f"vocab {info['vocab']}, embed {info['embed_dim']}, widths {info['widths']}",
             f"dense-equivalent parameters {info['params_dense_equivalent']}, nnz {info['nnz']}"]
    for i, e in enumerate(info.get("layers", [])):
        lines.append(f"layer {i}: n={e['n']} p={e['p']} nnz_h={e['nnz_h']} nnz_x={e['nnz_x']} "
                     f"rate_dense={e['rate_dense']:.3f} err_h={e['recon_err_h']:.3g} "
                     f"err_x={e['recon_err_x']:.3g} shared_d={e['shared_d']}")
    _emit(args, "\n".join(lines), info)
    return EXIT_OK


def cmd_config(args) -> int:
    if args.dump_defaults:
        sys.stdout.write(dump_defaults())
        return EXIT_OK
    if args.config:
        sys.stdout.write(load_config(args.config).dumps())
        return EXIT_OK
    raise UsageError("config needs --dump-defaults or --config PATH")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value run configuration")
    common.add_argument("--seed", type=int, help="overrides the seed key")
    common.add_argument("--json", action="store_true", help="machine-readable stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="dirnet", description="Shared-dictionary compression for recurrent nets.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a dense baseline")
    t.add_argument("corpus")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="JSON-lines log path (default OUT.log.jsonl)")
    t.add_argument("--kind", choices=["lstm", "vanilla_rnn"])
    t.add_argument("--widths", type=_int_list)
    t.add_argument("--embed-dim", dest="embed_dim", type=int)
    t.add_argument("--epochs", type=int)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", parents=[common], help="compress a dense model file")
    c.add_argument("model")
    c.add_argument("--out", required=True)
    c.add_argument("--report", help="report JSON path (default OUT.report.json)")
    c.set_defaults(func=cmd_compress)

    f = sub.add_parser("finetune", parents=[common], help="masked fine-tuning")
    f.add_argument("cmodel")
    f.add_argument("corpus")
    f.add_argument("--out", required=True)
    f.add_argument("--log")
    f.add_argument("--epochs", type=int, help="overrides finetune_epochs")
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", parents=[common], help="cross-entropy and perplexity")
    e.add_argument("model")
    e.add_argument("corpus")
    e.add_argument("--factored", action="store_true",
                   help="run compressed models through the factored forward pass")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", parents=[common], help="summarise a model file or topology")
    s.add_argument("file", nargs="?")
    s.add_argument("--topology", type=_int_list, help="layer widths, e.g. 500,500,500")
    s.add_argument("--p", type=_int_list, help="projection size per layer")
    s.add_argument("--kind", default="lstm", choices=["lstm", "vanilla_rnn"])
    s.add_argument("--n-in", dest="n_in", type=int)
    s.add_argument("--vocab", type=int, default=0)
    s.set_defaults(func=cmd_stats)

    g = sub.add_parser("config", parents=[common], help="print configuration")
    g.add_argument("--dump-defaults", action="store_true")
    g.set_defaults(func=cmd_config)
    return p


def _thread_limit():
    raw = os.environ.get("DIRNET_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"DIRNET_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with _thread_limit():
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"dirnet: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"dirnet: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FormatError, IntegrityError, ShapeError, InputError) as exc:
        print(f"dirnet: bad data: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (DomainError, FloatingPointError) as exc:
        print(f"dirnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
