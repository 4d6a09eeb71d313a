"""Command-line experiment harness.

Subcommands: simulate, train, eval, recon, polar, sweep-iters, sweep-dose.
Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path


from . import _accel
from .data import ManifestError, build_dataset, load_manifest, load_sample, load_split, manifest_geometry
from .data.phantom import ShellGeometry
from .evaluate import EM_ITERS, evaluate_predictions, mean_mu_map, write_report
from .io import TensorFileError, load_ddt, save_ddt, save_slices
from .metrics import polar_map_17
from .networks import CascadeConfig, CheckpointError, DuDoCFNet, Scaling, ablation_config, load_checkpoint
from .physics import GeometryError, ScannerGeometry, build_system_matrix, mlem_reconstruct
from .training import NumericalError, TrainConfig, predict, train

log = logging.getLogger("dudocf")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_ITERATIONS = 5
DOSE_GRID = (0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8)
SWEEP_COLUMNS = (
    "setting",
    "n_params",
    "nmse_proj",
    "ssim_proj",
    "psnr_proj",
    "nmse_mu",
    "ssim_mu",
    "psnr_mu",
    "nmse_ac",
    "baseline_nmse_proj",
)


class ConfigError(ValueError):
    pass


def _strict(block: dict, known, name: str) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(f"{name} block must be an object")
    unknown = set(block) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    return block


@dataclass
class DatasetConfig:
    n_train: int = 40
    n_val: int = 10
    n_test: int = 20
    dose_rate: float = 0.1
    seed: int = 0
    total_counts: float | None = None


@dataclass
class ExperimentConfig:
    geometry: dict = field(default_factory=lambda: {"preset": "toy"})
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    cascade: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    eval: dict = field(default_factory=lambda: {"em_iters": EM_ITERS})
    output: str = "runs"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _strict(d, {f.name for f in dataclasses.fields(cls)}, "config")
        ds = _strict(d.get("dataset", {}), {f.name for f in dataclasses.fields(DatasetConfig)}, "dataset")
        ev = _strict(d.get("eval", {"em_iters": EM_ITERS}), {"em_iters"}, "eval")
        cfg = cls(
            geometry=dict(d.get("geometry", {"preset": "toy"})),
            dataset=DatasetConfig(**ds),
            cascade=dict(d.get("cascade", {})),
            training=dict(d.get("training", {})),
            eval=dict(ev),
            output=str(d.get("output", "runs")),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        """Build every typed sub-config once so bad values fail before any work starts."""
        try:
            self.geometry_obj()
            CascadeConfig.from_dict(self.cascade)
            TrainConfig.from_dict(self.training)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        ds = self.dataset
        if min(ds.n_train, ds.n_val, ds.n_test) < 0:
            raise ConfigError("split sizes must be non-negative")
        if not 0.0 < ds.dose_rate <= 1.0:
            raise ConfigError(f"dose rate must lie in (0, 1], got {ds.dose_rate}")
        if int(self.eval.get("em_iters", EM_ITERS)) < 1:
            raise ConfigError("eval.em_iters must be >= 1")

    def geometry_obj(self) -> ScannerGeometry:
        g = dict(self.geometry)
        name = g.pop("preset", None)
        if name is None:
            return ScannerGeometry.from_dict(g)
        return ScannerGeometry.preset(name, **{k: (tuple(v) if isinstance(v, list) else v) for k, v in g.items()})


def load_config(path) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig.from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(d)


def _out(args, cfg: ExperimentConfig, sub: str) -> Path:
    return Path(args.out) if args.out else Path(cfg.output) / sub


def _data_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.data) if getattr(args, "data", None) else Path(cfg.output) / "dataset"


# ------------------------------------------------------------------ commands


def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    ds = cfg.dataset
    seed = ds.seed if args.seed is None else args.seed
    dose = ds.dose_rate if args.dose is None else args.dose
    if not 0.0 < dose <= 1.0:
        raise ConfigError(f"dose rate must lie in (0, 1], got {dose}")
    out = _out(args, cfg, "dataset")
    kw = {} if ds.total_counts is None else {"total_counts": ds.total_counts}
    m = build_dataset(out, ds.n_train, ds.n_val, ds.n_test, cfg.geometry_obj(), dose, seed, **kw)
    sizes = {k: len(v) for k, v in m["splits"].items()}
    print(f"dataset {out}: train {sizes['train']} val {sizes['val']} test {sizes['test']} dose {m['dose_rate']} seed {m['seed']}")
    return EXIT_OK


def _cascade_cfg(args, cfg: ExperimentConfig, n_iters: int | None = None) -> CascadeConfig:
    c = dict(cfg.cascade)
    if n_iters is not None:
        c["n_iters"] = n_iters
    elif getattr(args, "iterations", None) is not None:
        c["n_iters"] = args.iterations
    else:
        c.setdefault("n_iters", DEFAULT_ITERATIONS)
    if args.seed is not None:
        c["seed"] = args.seed
    try:
        return ablation_config(CascadeConfig.from_dict(c), getattr(args, "ablate", None) or [])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _train_cfg(args, cfg: ExperimentConfig) -> TrainConfig:
    t = dict(cfg.training)
    if args.seed is not None:
        t["seed"] = args.seed
    try:
        return TrainConfig.from_dict(t)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_data(root: Path):
    m = load_manifest(root)
    splits = {s: load_split(root, s, m) for s in ("train", "val", "test")}
    return m, splits


def _train_one(A, manifest, splits, ccfg: CascadeConfig, tcfg: TrainConfig, out: Path):
    model = DuDoCFNet(A, ccfg)
    scaling = Scaling(manifest["proj_scale"], manifest["dose_rate"])
    res = train(model, splits["train"], splits["val"], scaling, tcfg, out)
    return model, scaling, res


def cmd_train(args, cfg: ExperimentConfig) -> int:
    data = _data_dir(args, cfg)
    m, splits = _load_data(data)
    A = build_system_matrix(manifest_geometry(m))
    ccfg = _cascade_cfg(args, cfg)
    out = _out(args, cfg, "train")
    try:
        model, _, res = _train_one(A, m, splits, ccfg, _train_cfg(args, cfg), out)
    except NumericalError as exc:
        log.error("%s; batch dumped to %s", exc, exc.dump)
        return EXIT_NUMERIC
    print(
        f"checkpoint {res.checkpoint}: N={ccfg.n_iters} params {model.n_parameters()} "
        f"best epoch {res.best_epoch} score {res.best_score:.4f}"
    )
    return EXIT_OK


def _eval_model(A, model, scaling, splits, out: Path, em_iters: int) -> dict:
    preds = predict(model, splits["test"], scaling)
    mean_mu = mean_mu_map(splits["train"]) if splits["train"] else None
    rep = evaluate_predictions(A, splits["test"], preds, mean_mu, em_iters, out)
    return write_report(out, rep)


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    data = _data_dir(args, cfg)
    m, splits = _load_data(data)
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg.output) / "train" / "checkpoint"
    A = build_system_matrix(manifest_geometry(m))
    model, scaling, _, _ = load_checkpoint(ckpt, A)
    if scaling is None:
        scaling = Scaling(m["proj_scale"], m["dose_rate"])
    out = _out(args, cfg, "eval")
    summary = _eval_model(A, model, scaling, splits, out, int(cfg.eval.get("em_iters", EM_ITERS)))
    for dom in ("proj", "mu", "ac"):
        for meth, st in summary[dom].items():
            print(f"{dom:5s} {meth:8s} NMSE {st['nmse_mean']:.3f} +- {st['nmse_std']:.3f} %")
    return EXIT_OK


def _geometry_from_args(args, cfg: ExperimentConfig) -> ScannerGeometry:
    if getattr(args, "data", None):
        return manifest_geometry(load_manifest(args.data))
    return cfg.geometry_obj()


def cmd_recon(args, cfg: ExperimentConfig) -> int:
    geom = _geometry_from_args(args, cfg)
    p = load_ddt(args.projection)
    mu = load_ddt(args.mu) if args.mu else None
    A = build_system_matrix(geom)
    try:
        x = mlem_reconstruct(A, p, mu, args.iters)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out) if args.out else Path(cfg.output) / "recon.ddt"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_ddt(out, x)
    save_slices(out.with_suffix(""), x)
    print(f"volume {out} shape {tuple(x.shape)}")
    return EXIT_OK


def cmd_polar(args, cfg: ExperimentConfig) -> int:
    vol = load_ddt(args.volume)
    if args.shell:
        try:
            shell = ShellGeometry.from_dict(json.loads(Path(args.shell).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"shell file is not valid JSON: {exc}") from exc
        vox = args.voxel_size if args.voxel_size else cfg.geometry_obj().voxel_size_mm
    elif args.data is not None and args.sample is not None:
        m = load_manifest(args.data)
        shell = load_sample(args.data, args.sample, m).shell
        vox = manifest_geometry(m).voxel_size_mm
    else:
        raise ConfigError("polar needs --shell or --data with --sample")
    pm = polar_map_17(vol, shell, vox)
    out = Path(args.out) if args.out else Path(cfg.output) / "polar.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("segment", "value", "raw", "n_rays"))
        for k in range(17):
            w.writerow((k + 1, repr(float(pm.values[k])), repr(float(pm.raw[k])), int(pm.counts[k])))
    print(f"polar map {out}")
    return EXIT_OK


def _sweep_row(setting, model, summary) -> dict:
    return {
        "setting": setting,
        "n_params": model.n_parameters(),
        "nmse_proj": summary["proj"]["model"]["nmse_mean"],
        "ssim_proj": summary["proj"]["model"]["ssim_mean"],
        "psnr_proj": summary["proj"]["model"]["psnr_mean"],
        "nmse_mu": summary["mu"]["model"]["nmse_mean"],
        "ssim_mu": summary["mu"]["model"]["ssim_mean"],
        "psnr_mu": summary["mu"]["model"]["psnr_mean"],
        "nmse_ac": summary["ac"]["model"]["nmse_mean"],
        "baseline_nmse_proj": summary["proj"]["ldlv"]["nmse_mean"],
    }


def _write_sweep(path: Path, key: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((key,) + SWEEP_COLUMNS[1:])
        for r in rows:
            w.writerow([r["setting"]] + [r[c] if c == "n_params" else repr(float(r[c])) for c in SWEEP_COLUMNS[1:]])


def _parse_list(text, kind):
    try:
        return [kind(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad list {text!r}: {exc}") from exc


def cmd_sweep_iters(args, cfg: ExperimentConfig) -> int:
    data = _data_dir(args, cfg)
    m, splits = _load_data(data)
    A = build_system_matrix(manifest_geometry(m))
    out = _out(args, cfg, "sweep_iters")
    out.mkdir(parents=True, exist_ok=True)
    n_list = _parse_list(args.n_list, int)
    tcfg = _train_cfg(args, cfg)
    rows = []
    for n in n_list:
        sub = out / f"N{n}"
        try:
            model, scaling, _ = _train_one(A, m, splits, _cascade_cfg(args, cfg, n), tcfg, sub)
        except NumericalError as exc:
            log.error("N=%d: %s", n, exc)
            return EXIT_NUMERIC
        summary = _eval_model(A, model, scaling, splits, sub / "eval", int(cfg.eval.get("em_iters", EM_ITERS)))
        rows.append(_sweep_row(n, model, summary))
        _write_sweep(out / "sweep_iters.csv", "n_iters", rows)
        print(f"N={n}: proj NMSE {rows[-1]['nmse_proj']:.3f} % mu NMSE {rows[-1]['nmse_mu']:.3f} %")
    return EXIT_OK


def cmd_sweep_dose(args, cfg: ExperimentConfig) -> int:
    rates = _parse_list(args.rates, float) if args.rates else list(DOSE_GRID)
    for r in rates:
        if not 0.0 < r <= 1.0:
            raise ConfigError(f"dose rate must lie in (0, 1], got {r}")
    out = _out(args, cfg, "sweep_dose")
    out.mkdir(parents=True, exist_ok=True)
    geom = cfg.geometry_obj()
    A = build_system_matrix(geom)
    ds = cfg.dataset
    seed = ds.seed if args.seed is None else args.seed
    kw = {} if ds.total_counts is None else {"total_counts": ds.total_counts}
    tcfg = _train_cfg(args, cfg)
    rows = []
    for r in rates:
        sub = out / f"dose_{r:g}"
        build_dataset(sub / "dataset", ds.n_train, ds.n_val, ds.n_test, geom, r, seed, A=A, **kw)
        m, splits = _load_data(sub / "dataset")
        try:
            model, scaling, _ = _train_one(A, m, splits, _cascade_cfg(args, cfg), tcfg, sub / "train")
        except NumericalError as exc:
            log.error("dose %g: %s", r, exc)
            return EXIT_NUMERIC
        summary = _eval_model(A, model, scaling, splits, sub / "eval", int(cfg.eval.get("em_iters", EM_ITERS)))
        rows.append(_sweep_row(r, model, summary))
        _write_sweep(out / "sweep_dose.csv", "dose_rate", rows)
        print(f"dose {r:g}: proj NMSE {rows[-1]['nmse_proj']:.3f} % mu NMSE {rows[-1]['nmse_mu']:.3f} %")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "recon": cmd_recon,
    "polar": cmd_polar,
    "sweep-iters": cmd_sweep_iters,
    "sweep-dose": cmd_sweep_dose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, default=None, help="override the dataset/training seed")
    common.add_argument("--deterministic", action="store_true", help="single-threaded, bit-reproducible run")
    common.add_argument("--out", default=None, help="output path")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dudocf", description="DuDoCFNet cardiac SPECT experiments")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--dose", type=float, default=None, help="low-dose rate (default from config, 0.1)")

    def model_flags(q):
        q.add_argument("--data", default=None, help="dataset directory")
        q.add_argument("--ablate", action="append", default=[], help="no-tsp-stage2 | no-bda-stage2 | no-mlf")

    t = sub.add_parser("train", parents=[common], help="train the cascade")
    model_flags(t)
    t.add_argument("--iterations", type=int, default=None, help=f"cascade iterations N (default {DEFAULT_ITERATIONS})")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--data", default=None)

    r = sub.add_parser("recon", parents=[common], help="ML-EM of a projection file")
    r.add_argument("--projection", required=True)
    r.add_argument("--mu", default=None, help="attenuation map for AC")
    r.add_argument("--iters", type=int, default=EM_ITERS)
    r.add_argument("--data", default=None, help="take the geometry from this dataset")

    q = sub.add_parser("polar", parents=[common], help="17-segment polar map of a volume")
    q.add_argument("--volume", required=True)
    q.add_argument("--shell", default=None, help="shell geometry JSON")
    q.add_argument("--voxel-size", type=float, default=None)
    q.add_argument("--data", default=None)
    q.add_argument("--sample", type=int, default=None)

    si = sub.add_parser("sweep-iters", parents=[common], help="train and evaluate for several N")
    model_flags(si)
    si.add_argument("--n-list", default="1,2,3,4,5")

    sd = sub.add_parser("sweep-dose", parents=[common], help="simulate, train and evaluate per dose rate")
    sd.add_argument("--ablate", action="append", default=[])
    sd.add_argument("--iterations", type=int, default=None)
    sd.add_argument("--rates", default=None, help="comma-separated dose rates")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s"
    )
    if args.deterministic:
        _accel.set_deterministic(True)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, CheckpointError, TensorFileError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
