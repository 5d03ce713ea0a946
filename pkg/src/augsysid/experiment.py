"""Config loading and the end-to-end experiment pieces shared by the CLI."""
from __future__ import annotations

import configparser
import dataclasses
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .augmented import AugmentedModel, TrainConfig, train
from .baseline import LtiBaseline
from .core import IoDataset, LtiSS, RngStream
from .encoder_init import InitMethod, data_scaling, initialise
from .msd import SPLITS, MsdModel, MsdParams, SimConfig, make_datasets
from .neural import EncoderNet, load_params, save_params

log = logging.getLogger(__name__)


METHODS_ORDER = ("random", "model_based", "data_based_lls", "data_based_ann")


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, typ):
    if typ is int:
        return int(float(raw)) if "e" in raw.lower() else int(raw)
    if typ is float:
        return float(raw)
    if typ is tuple:
        vals = [float(v) for v in raw.replace(",", " ").split()]
        return tuple(int(v) if v.is_integer() else v for v in vals)
    if typ is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw.strip()


def _section(cp: configparser.ConfigParser, name: str, cls, required: bool = True):
    if not cp.has_section(name):
        if required:
            raise ConfigError(f"missing config section [{name}]")
        return cls()
    sec = cp[name]
    kwargs = {}
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else None
        typ = type(default) if default is not None else str
        if f.name not in sec:
            raise ConfigError(f"missing config key '{name}.{f.name}'")
        kwargs[f.name] = _parse_value(sec[f.name], typ)
    unknown = set(sec) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown config key(s) in [{name}]: {', '.join(sorted(unknown))}")
    return cls(**kwargs)


@dataclasses.dataclass
class PretrainOptions:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3


@dataclasses.dataclass
class MonteCarloOptions:
    n_runs: int = 10
    methods: str = "model_based,data_based_ann,random"
    workers: int = 1


@dataclasses.dataclass
class BaselineSpec:
    kind: str = "msd"
    d1: float = 0.05
    A: str = ""
    B: str = ""
    C: str = ""
    D: str = ""


@dataclasses.dataclass
class ExperimentConfig:
    sim: SimConfig
    train: TrainConfig
    pretrain: PretrainOptions
    montecarlo: MonteCarloOptions
    baseline: BaselineSpec

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        return dataclasses.replace(self, sim=dataclasses.replace(self.sim, seed=seed),
                                   train=dataclasses.replace(self.train, seed=seed))


def load_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    return ExperimentConfig(
        sim=_section(cp, "sim", SimConfig),
        train=_section(cp, "train", TrainConfig, required=False),
        pretrain=_section(cp, "pretrain", PretrainOptions, required=False),
        montecarlo=_section(cp, "montecarlo", MonteCarloOptions, required=False),
        baseline=_section(cp, "baseline", BaselineSpec, required=False),
    )


def _matrix(text: str) -> np.ndarray:
    return np.array([[float(v) for v in row.replace(",", " ").split()] for row in text.split(";")])


def build_baseline(spec: BaselineSpec, sim: SimConfig):
    if spec.kind == "msd":
        return MsdModel(dataclasses.replace(MsdParams.baseline(), d1=spec.d1), sim.ts, sim.ti)
    if spec.kind == "lti":
        D = _matrix(spec.D) if spec.D.strip() else None
        return LtiBaseline(LtiSS(_matrix(spec.A), _matrix(spec.B), _matrix(spec.C), D))
    raise ConfigError(f"unknown baseline kind {spec.kind!r} (expected msd or lti)")


def write_manifest(path, **items) -> None:
    with open(path, "w") as fh:
        for key, value in items.items():
            if isinstance(value, dict):
                for k, v in value.items():
                    fh.write(f"{key}.{k}={v}\n")
            else:
                fh.write(f"{key}={value}\n")


def read_kv(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                k, v = line.split("=", 1)
                out[k] = v
    return out


def generate(cfg: ExperimentConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = make_datasets(cfg.sim)
    for name, ds in data.items():
        ds.to_csv(out / f"{name}.csv")
    write_manifest(out / "manifest.txt", sim=cfg.sim.as_dict(),
                   sizes={k: len(v) for k, v in data.items()})
    return data


def load_data(data_dir) -> dict:
    d = Path(data_dir)
    return {name: IoDataset.from_csv(d / f"{name}.csv") for name in SPLITS if (d / f"{name}.csv").exists()}


def blank_encoder(baseline, tc: TrainConfig, rng: RngStream) -> EncoderNet:
    return EncoderNet.blank(baseline.nx, baseline.ny, baseline.nu, tc.na, tc.nb, rng)


def init_encoder(method: str, cfg: ExperimentConfig, baseline, est: IoDataset, rng: RngStream):
    m = InitMethod(method)
    opts = {}
    if m.tag == "data_based_ann":
        opts = dataclasses.asdict(cfg.pretrain)
    m = InitMethod(m.tag, opts)
    scaling = None
    if m.tag == "random":
        scaling = data_scaling(baseline, est, cfg.train.na, cfg.train.nb)
    enc = blank_encoder(baseline, cfg.train, rng.child(0))
    return initialise(m, enc, baseline, est, rng.child(1), scaling)


def save_model(model: AugmentedModel, out_dir, meta: Optional[dict] = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_params(model.encoder, out / "encoder.csv")
    save_params(model.f_aug, out / "f_aug.csv")
    if meta:
        write_manifest(out / "model.meta", **meta)


def load_model(model_dir, baseline) -> AugmentedModel:
    d = Path(model_dir)
    enc, _ = load_params(d / "encoder.csv")
    f_aug, _ = load_params(d / "f_aug.csv")
    return AugmentedModel(baseline, f_aug, enc)


def run_single(method: str, run: int, cfg: ExperimentConfig, data: dict) -> dict:
    """Init, train and test one model; failures are reported, not raised."""
    baseline = build_baseline(cfg.baseline, cfg.sim)
    root = RngStream(cfg.train.seed, 1 + run)
    result = {"method": InitMethod(method).tag, "run": run, "status": "ok",
              "init_wall_s": float("nan"), "test_rmse": float("nan"), "history": None}
    try:
        enc, info = init_encoder(method, cfg, baseline, data["est"], root.child(10 + METHODS_ORDER.index(result["method"])))
        result["init_wall_s"] = info["wall_s"]
        model = AugmentedModel.create(baseline, enc, root.child(1))
        _, hist = train(model, data["est"], data["val"], cfg.train, root.child(2))
        result["history"] = hist
        result["test_rmse"] = model.rmse_simulation(data["test"])
    except (FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        result["status"] = f"failed: {exc}"
        log.warning("%s run %d failed: %s", method, run, exc)
    return result


def _run_job(args):
    return run_single(*args)


def montecarlo(cfg: ExperimentConfig, data: dict, n_runs: int, methods, workers: int = 1) -> list:
    jobs = [(m, r, cfg, data) for m in methods for r in range(n_runs)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    return sorted(results, key=lambda r: (METHODS_ORDER.index(r["method"]), r["run"]))


def summarise(results: list) -> list:
    rows = []
    for method in dict.fromkeys(r["method"] for r in results):
        vals = np.array([r["test_rmse"] for r in results if r["method"] == method and r["status"] == "ok"])
        if len(vals):
            rows.append((method, len(vals), vals.min(), float(np.median(vals)), vals.max()))
        else:
            rows.append((method, 0, np.nan, np.nan, np.nan))
    return rows


def median_curves(results: list, method: str) -> Optional[np.ndarray]:
    """Per-epoch median validation RMSE, columns ordered as the history horizons."""
    hists = [r["history"] for r in results if r["method"] == method and r["history"] is not None]
    if not hists:
        return None
    cols = [c for c in hists[0].header if c.startswith("val_rmse_T")]
    stack = np.stack([np.column_stack([h.column(c) for c in cols]) for h in hists])
    return np.median(stack, axis=0)


def write_montecarlo(results: list, out_dir) -> None:
    out = Path(out_dir)
    (out / "histories").mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w") as fh:
        fh.write("method,run,init_wall_s,test_rmse,status\n")
        for r in results:
            fh.write(f"{r['method']},{r['run']},{r['init_wall_s']:.17g},{r['test_rmse']:.17g},"
                     f"\"{r['status']}\"\n")
            if r["history"] is not None:
                r["history"].to_csv(out / "histories" / f"{r['method']}_{r['run']}.csv")
    with open(out / "summary.csv", "w") as fh:
        fh.write("method,n_ok,min_test_rmse,median_test_rmse,max_test_rmse\n")
        for row in summarise(results):
            fh.write(f"{row[0]},{row[1]}," + ",".join(f"{v:.17g}" for v in row[2:]) + "\n")
    for method in dict.fromkeys(r["method"] for r in results):
        med = median_curves(results, method)
        if med is None:
            continue
        hist = next(r["history"] for r in results if r["method"] == method and r["history"] is not None)
        cols = [c for c in hist.header if c.startswith("val_rmse_T")]
        with open(out / f"curves_{method}.csv", "w") as fh:
            fh.write("epoch," + ",".join(f"median_{c}" for c in cols) + "\n")
            for e, row in enumerate(med):
                fh.write(f"{e}," + ",".join(f"{v:.17g}" for v in row) + "\n")
