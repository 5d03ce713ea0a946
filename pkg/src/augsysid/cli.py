"""Command line entry point: ``augsysid {generate,init,train,eval,montecarlo}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .augmented import AugmentedModel, train
from .core import RngStream
from .encoder_init import InitMethod
from .neural import load_params, save_params

log = logging.getLogger("augsysid")

EXIT_USAGE = 1
EXIT_NUMERIC = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _method(value: str) -> str:
    try:
        return InitMethod(value).tag
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="augsysid", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=False):
        sp.add_argument("--config", required=True, help="key=value config with [sections]")
        sp.add_argument("--seed", type=int, default=None, help="override the config seeds")
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", required=True, help="directory with est/val/test CSVs")

    common(sub.add_parser("generate", help="simulate the benchmark data sets"))
    sp = sub.add_parser("init", help="initialise an encoder")
    common(sp, data=True)
    sp.add_argument("--method", required=True, type=_method,
                    help="random | model | lls | ann (or the long names)")
    sp = sub.add_parser("train", help="train an augmented model")
    common(sp, data=True)
    sp.add_argument("--encoder", required=True, help="encoder CSV written by 'init'")
    sp = sub.add_parser("eval", help="test simulation RMSE of a trained model")
    sp.add_argument("--config", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True, help="model directory written by 'train'")
    sp.add_argument("--out", default=None)
    sp = sub.add_parser("montecarlo", help="repeat init + train + test for each method")
    common(sp, data=False)
    sp.add_argument("--data", default=None, help="reuse generated data instead of simulating")
    sp.add_argument("--workers", type=int, default=None)
    sp.add_argument("--runs", type=int, default=None)
    sp.add_argument("--method", action="append", type=_method, default=None,
                    help="restrict to these methods (repeatable)")
    return p


def _data(args, cfg):
    data = ex.load_data(args.data)
    missing = [s for s in ("est", "val", "test") if s not in data]
    if missing:
        raise UsageError(f"{args.data}: missing data set(s) {', '.join(missing)}")
    return data


def cmd_generate(args, cfg):
    data = ex.generate(cfg, args.out)
    print(" ".join(f"{k}={len(v)}" for k, v in data.items()))


def cmd_init(args, cfg):
    data = _data(args, cfg)
    baseline = ex.build_baseline(cfg.baseline, cfg.sim)
    enc, info = ex.init_encoder(args.method, cfg, baseline, data["est"], RngStream(cfg.train.seed, 5))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(enc, out / "encoder.csv")
    ex.write_manifest(out / "encoder.meta", method=args.method, seed=cfg.train.seed,
                      na=cfg.train.na, nb=cfg.train.nb, **{k: v for k, v in info.items()})
    print(f"method={args.method} wall_s={info['wall_s']:.6g}")


def cmd_train(args, cfg):
    data = _data(args, cfg)
    baseline = ex.build_baseline(cfg.baseline, cfg.sim)
    enc, _ = load_params(args.encoder)
    if (enc.na, enc.nb) != (cfg.train.na, cfg.train.nb):
        raise UsageError(f"encoder lags ({enc.na}, {enc.nb}) differ from config ({cfg.train.na}, {cfg.train.nb})")
    root = RngStream(cfg.train.seed, 3)
    model = AugmentedModel.create(baseline, enc, root.child(1))
    model, hist = train(model, data["est"], data["val"], cfg.train, root.child(2))
    out = Path(args.out)
    ex.save_model(model, out, {"train": dataclasses.asdict(cfg.train)})
    hist.to_csv(out / "history.csv")
    print(f"epochs={len(hist)}")


def cmd_eval(args, cfg):
    data = _data(args, cfg)
    baseline = ex.build_baseline(cfg.baseline, cfg.sim)
    model = ex.load_model(args.model, baseline)
    r = model.rmse_simulation(data["test"])
    print(f"test_simulation_rmse={r:.10g}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        ex.write_manifest(Path(args.out) / "eval.txt", test_simulation_rmse=repr(r))


def cmd_montecarlo(args, cfg):
    mc = cfg.montecarlo
    data = _data(args, cfg) if args.data else ex.make_datasets(cfg.sim)
    methods = args.method or [InitMethod(m.strip()).tag for m in mc.methods.split(",") if m.strip()]
    runs = args.runs if args.runs is not None else mc.n_runs
    workers = args.workers if args.workers is not None else mc.workers
    results = ex.montecarlo(cfg, data, runs, methods, workers)
    ex.write_montecarlo(results, args.out)
    for row in ex.summarise(results):
        print(f"{row[0]}: n={row[1]} min={row[2]:.4g} median={row[3]:.4g} max={row[4]:.4g}")


COMMANDS = {"generate": cmd_generate, "init": cmd_init, "train": cmd_train,
            "eval": cmd_eval, "montecarlo": cmd_montecarlo}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.load_config(args.config).with_seed(getattr(args, "seed", None))
        COMMANDS[args.command](args, cfg)
    except (ex.ConfigError, UsageError, FileNotFoundError) as exc:
        print(f"augsysid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"augsysid: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
