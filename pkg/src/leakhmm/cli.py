"""Command-line entry point.

Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
4 numerical failure (outputs are still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import workflow
from .config import load_run_config
from .errors import ConfigError, InvalidInputError, LeakHmmError, NoAdmissiblePathError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("leakhmm")


def _config(args):
    return load_run_config(
        args.config,
        seed=args.seed,
        f_start=getattr(args, "f_start", None),
        f_stop=getattr(args, "f_stop", None),
        window_length=getattr(args, "window_length", None),
        stride=getattr(args, "stride", None),
        n_components=getattr(args, "n_components", None),
        preset=getattr(args, "preset", None),
        train_fraction=getattr(args, "train_fraction", None),
    )


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _train_status(report) -> int:
    if not report.converged:
        log.warning("Baum-Welch stopped after %d iterations without converging", report.iterations)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_simulate(args) -> int:
    workflow.simulate(_config(args), args.out)
    return EXIT_OK


def cmd_features(args) -> int:
    info = workflow.extract_features(_config(args), args.waveforms, args.baseline, args.out)
    print(f"observations per waveform: {info['observations_per_waveform']}; "
          f"train sequences: {info['train']}; test sequences: {info['test']}")
    return EXIT_OK


def cmd_train(args) -> int:
    report = workflow.train(_config(args), args.features, args.out)
    print(f"iterations: {report.iterations}; converged: {report.converged}; "
          f"log-likelihood: {report.log_likelihood_trace[-1]:.6f}")
    return _train_status(report)


def cmd_decode(args) -> int:
    workflow.decode(args.model, args.features, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    reports = workflow.run_eval(args.decoded, args.features, args.out)
    for name, rep in reports.items():
        print(f"{name}: per-observation accuracy {rep.per_observation_accuracy:.4f}; "
              f"per-sequence accuracy {rep.per_sequence_accuracy:.4f}")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    out = Path(args.out)
    if not out.parent.is_dir():
        raise FileNotFoundError(f"parent directory of {out} does not exist")
    out.mkdir(exist_ok=True)
    cfg = _config(args)
    workflow.simulate(cfg, out / "sim")
    info = workflow.extract_features(cfg, out / "sim" / "waveforms", out / "sim" / "baseline.csv", out / "features")
    report = workflow.train(cfg, out / "features" / "train", out / "model")
    workflow.decode(out / "model" / "model.ini", out / "features" / "test", out / "decoded")
    reports = workflow.run_eval(out / "decoded", out / "features" / "test", out / "eval")
    rep = reports["posterior"]
    print(f"observations per waveform: {info['observations_per_waveform']}; "
          f"Baum-Welch iterations: {report.iterations}; "
          f"test accuracy (posterior, per observation): {rep.per_observation_accuracy:.4f}")
    return _train_status(report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leakhmm",
        description="Classify damage states of waveform recordings with a GMM-HMM.",
        epilog="exit codes: 0 success, 2 configuration or validation error, 3 I/O error, "
        "4 numerical failure (outputs still written)",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help, config=True):
        p = sub.add_parser(name, help=help)
        if config:
            p.add_argument("--config", required=True, help="sectioned key=value run configuration")
        p.add_argument("--seed", type=_seed, help="replace every seed in the configuration")
        p.add_argument("--out", required=True, help="output directory (created; parent must exist)")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "render a synthetic scenario to waveform files")

    p = add("features", cmd_features, "extract damage-index sequences and split train/test")
    p.add_argument("--waveforms", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--window-length", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--f-start", type=float)
    p.add_argument("--f-stop", type=float)
    p.add_argument("--train-fraction", type=float)

    p = add("train", cmd_train, "fit state mixtures and run Baum-Welch")
    p.add_argument("--features", required=True, help="training dataset directory")
    p.add_argument("--n-components", type=int)
    p.add_argument("--preset")

    p = add("decode", cmd_decode, "Viterbi and posterior decoding", config=False)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)

    p = add("eval", cmd_eval, "score decoded paths against labels", config=False)
    p.add_argument("--decoded", required=True)
    p.add_argument("--features", required=True)

    p = add("pipeline", cmd_pipeline, "simulate, features, train, decode and eval in one run")
    p.add_argument("--window-length", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--f-start", type=float)
    p.add_argument("--f-stop", type=float)
    p.add_argument("--n-components", type=int)
    p.add_argument("--preset")
    p.add_argument("--train-fraction", type=float)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NoAdmissiblePathError, FloatingPointError, LeakHmmError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
