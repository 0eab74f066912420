"""Command line entry point.

Every subcommand reads one JSON experiment file (``--config``). Exit codes:
0 success, 1 configuration error (including missing input files), 2 runtime
error. The worker count for ``sweep`` comes from ``NMSOSD_WORKERS`` unless
``--workers`` is given.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (ConfigError, ExperimentConfig, FailureCorpus, HybridDecoder, SweepResult,
                      calibrate_from_corpus, capture_failures, report, run_sweep, train_dia_models,
                      worker_count)
from .osd import DynamicScheme, UniformScheme
from .training import save_loss_log, save_parameters, train

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def cmd_train_nms(cfg, args):
    code = HybridDecoder.from_config(cfg).code
    tc = cfg.training_config()
    if args.steps is not None:
        tc.total_steps = args.steps
    res = train(tc, code, cfg.variant,
                log=lambda step, loss, p: _log(f"step {step} loss {loss:.5f} zeta3 {p.zeta3:.4f}"))
    save_parameters(res.params, args.out)
    if args.loss_log:
        save_loss_log(res.losses, args.loss_log)
    _log(f"wrote {args.out}")


def cmd_capture(cfg, args):
    snrs = [args.snr] if args.snr is not None else None
    corpus = capture_failures(cfg, args.count, snr_db=snrs, max_frames=args.max_frames)
    corpus.save(args.out)
    _log(f"captured {len(corpus)} failures from {corpus.meta['frames']} frames -> {args.out}")


def cmd_train_dia(cfg, args):
    corpus = FailureCorpus.load(args.corpus)
    dc = cfg.dia_training_config()
    if args.steps is not None:
        dc.steps = args.steps
    models = train_dia_models(corpus, args.groups, dc)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(models):
        f = out / f"{args.prefix}_g{i}.json"
        m.save(f)
        _log(f"wrote {f} ({m.parameter_count} parameters)")


def cmd_calibrate(cfg, args):
    dec = HybridDecoder.from_config(cfg)
    corpus = FailureCorpus.load(args.corpus)
    o = cfg.osd
    scheme = (UniformScheme(dec.code.k, o.p, o.w_b) if o.scheme == "uniform"
              else DynamicScheme(dec.code.k, o.xi_max, o.p, o.d0, o.d3_rule))
    path = calibrate_from_corpus(corpus, dec.code, scheme, models=dec.models, policy=o.policy)
    path.save(args.out)
    _log(f"wrote {args.out}")


def cmd_sweep(cfg, args):
    workers = args.workers if args.workers is not None else worker_count()
    res = run_sweep(cfg, workers=workers,
                    progress=lambda snr, st: _log(f"{snr} dB: {st.frames} frames, {st.frame_errors} errors"))
    out = Path(args.out_dir) if args.out_dir else cfg.resolve(cfg.output_dir)
    paths = report(res, out, cfg.output_stem)
    (out / f"{cfg.output_stem}_result.json").write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True))
    for r in res.records:
        print(f"{r.snr_db:6.2f} dB  FER {r.fer:.4e}  BER {r.ber:.4e}  frames {r.frames}")
    _log(f"wrote {paths['csv']}")


def cmd_report(args):
    try:
        res = SweepResult.from_dict(json.loads(Path(args.result).read_text()))
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read result file: {exc}") from None
    paths = report(res, args.out_dir, args.stem)
    _log(f"wrote {paths['csv']}")


def build_parser():
    p = _Parser(prog="nmsosd", description="NMS decoding with OSD post-processing")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(name, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", required=True, help="JSON experiment file")
        return s

    s = with_config("train-nms", "train NMS weights")
    s.add_argument("--out", required=True)
    s.add_argument("--loss-log")
    s.add_argument("--steps", type=int)

    s = with_config("capture-failures", "collect non-converged NMS decodes")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--snr", type=float)
    s.add_argument("--max-frames", type=int)

    s = with_config("train-dia", "train DIA models on a failure corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--groups", type=int, default=1)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--prefix", default="dia")
    s.add_argument("--steps", type=int)

    s = with_config("calibrate-path", "rank OSD patterns on a failure corpus")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)

    s = with_config("sweep", "FER/BER simulation over the SNR grid")
    s.add_argument("--workers", type=int)
    s.add_argument("--out-dir")

    s = sub.add_parser("report", help="rewrite CSV/JSON/plot files from a sweep result")
    s.add_argument("--result", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--stem", default="sweep")
    return p


COMMANDS = {"train-nms": cmd_train_nms, "capture-failures": cmd_capture, "train-dia": cmd_train_dia,
            "calibrate-path": cmd_calibrate, "sweep": cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            cmd_report(args)
        else:
            COMMANDS[args.command](ExperimentConfig.load(args.config), args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
