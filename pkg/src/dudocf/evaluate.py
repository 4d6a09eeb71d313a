"""Test-set evaluation: predicted projections and mu-maps, AC reconstruction, metrics and polar maps.

For each test sample the cascade output (P_FDFV estimate, mu estimate) goes
through attenuated ML-EM to give the AC volume. The reference AC volume is
ML-EM of the true P_FDFV with the true mu. Baselines:

* projections: LDLV input compensated for dose (``P_LDLV / dose_rate``)
* mu-maps: the mean mu-map of the training split
* AC volumes: ML-EM of the true P_FDFV without attenuation (Non-AC)
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io import save_ddt, save_slices
from .metrics import ape, correlation_stats, nmse, paired_t, polar_map_17, psnr, ssim
from .physics.geometry import GeometryError
from .physics.projector import mlem_reconstruct
from .physics.system_matrix import SystemMatrix

log = logging.getLogger(__name__)

EM_ITERS = 30
METRIC_COLUMNS = ("sample", "method", "nmse", "ssim", "psnr")
POLAR_COLUMNS = ("sample", "method", "segment", "value", "reference", "ape")


@dataclass
class MetricReport:
    proj: list[dict] = field(default_factory=list)
    mu: list[dict] = field(default_factory=list)
    ac: list[dict] = field(default_factory=list)
    polar: list[dict] = field(default_factory=list)

    def summary(self, model: str = "model") -> dict:
        """Group mean/std per domain and method, paired t-tests on NMSE against ``model``.

        Polar entries hold mean APE per method, its paired test, and the
        correlation of pooled segment values with the reference.
        """
        out = {}
        for name in ("proj", "mu", "ac"):
            rows = getattr(self, name)
            out[name] = _group_stats(rows, "nmse", model, ("nmse", "ssim", "psnr"))
        out["polar"] = {}
        methods = sorted({r["method"] for r in self.polar})
        per_sample = {}
        for m in methods:
            rows = [r for r in self.polar if r["method"] == m]
            samples = sorted({r["sample"] for r in rows})
            per_sample[m] = np.array([np.mean([r["ape"] for r in rows if r["sample"] == s]) for s in samples])
            r, r2 = correlation_stats([x["value"] for x in rows], [x["reference"] for x in rows])
            out["polar"][m] = {
                "ape_mean": float(per_sample[m].mean()),
                "ape_std": float(per_sample[m].std()),
                "corr": r,
                "r2": r2,
            }
        if model in per_sample:
            for m in methods:
                if m != model and len(per_sample[m]) >= 2:
                    out["polar"][m]["p_value"] = paired_t(per_sample[m], per_sample[model])[1]
        return out


def _group_stats(rows, key, model, metrics) -> dict:
    out = {}
    methods = sorted({r["method"] for r in rows})
    for m in methods:
        sel = [r for r in rows if r["method"] == m]
        out[m] = {"n": len(sel)}
        for k in metrics:
            v = np.array([r[k] for r in sel], dtype=np.float64)
            out[m][f"{k}_mean"] = float(v.mean())
            out[m][f"{k}_std"] = float(v.std())
    if model in out:
        ref = np.array([r[key] for r in rows if r["method"] == model])
        for m in methods:
            if m == model:
                continue
            v = np.array([r[key] for r in rows if r["method"] == m])
            if len(v) == len(ref) and len(v) >= 2:
                out[m]["p_value"] = paired_t(v, ref)[1]
    return out


def _metric_row(sample, method, est, ref) -> dict:
    return {"sample": sample, "method": method, "nmse": nmse(est, ref), "ssim": ssim(est, ref), "psnr": psnr(est, ref)}


def ac_reconstruct(A: SystemMatrix, projection, mu=None, iters: int = EM_ITERS) -> np.ndarray:
    """ML-EM of a (possibly estimated) projection.

    Negative estimates are clipped to zero, and so are bins that no ray
    through the volume reaches (an estimate there carries no information).
    """
    p = np.maximum(np.asarray(projection, dtype=np.float64), 0.0)
    p = np.where(A.row_sums.reshape(p.shape) > 0, p, 0.0)
    m = None if mu is None else np.maximum(np.asarray(mu, dtype=np.float64), 0.0)
    return mlem_reconstruct(A, p, m, iters)


def mean_mu_map(train_samples) -> np.ndarray:
    return np.mean([s.mu for s in train_samples], axis=0)


def evaluate_predictions(
    A: SystemMatrix,
    test_samples,
    preds: list[dict],
    mean_mu: np.ndarray | None = None,
    em_iters: int = EM_ITERS,
    out_dir=None,
) -> MetricReport:
    """Score ``preds`` (as returned by :func:`dudocf.training.predict`) on ``test_samples``.

    With ``out_dir`` the AC volumes are written as DDT1 files with PGM slice
    previews under ``out_dir/volumes``.
    """
    if len(preds) != len(test_samples):
        raise ValueError("one prediction per test sample is required")
    vox = A.geometry.voxel_size_mm
    rep = MetricReport()
    vol_dir = None
    if out_dir is not None:
        vol_dir = Path(out_dir) / "volumes"
        vol_dir.mkdir(parents=True, exist_ok=True)
    for s, p in zip(test_samples, preds):
        i = s.index
        rep.proj.append(_metric_row(i, "model", p["p_fdfv"], s.P_FDFV))
        rep.proj.append(_metric_row(i, "ldlv", s.P_LDLV / s.dose_rate, s.P_FDFV))
        rep.mu.append(_metric_row(i, "model", p["mu"], s.mu))
        if mean_mu is not None:
            rep.mu.append(_metric_row(i, "mean_mu", mean_mu, s.mu))
        vols = {
            "reference": ac_reconstruct(A, s.P_FDFV, s.mu, em_iters),
            "model": ac_reconstruct(A, p["p_fdfv"], p["mu"], em_iters),
            "non_ac": ac_reconstruct(A, s.P_FDFV, None, em_iters),
        }
        for m in ("model", "non_ac"):
            rep.ac.append(_metric_row(i, m, vols[m], vols["reference"]))
        if vol_dir is not None:
            for m, v in vols.items():
                save_ddt(vol_dir / f"sample_{i}_{m}.ddt", v)
            save_slices(vol_dir / f"sample_{i}_model", vols["model"])
        if s.shell is None:
            continue
        try:
            maps = {m: polar_map_17(v, s.shell, vox) for m, v in vols.items()}
        except GeometryError as exc:
            log.warning("sample %d: no polar map (%s)", i, exc)
            continue
        ref = maps["reference"].values
        for m in ("model", "non_ac"):
            errs = ape(maps[m].values, ref)
            for k in range(17):
                rep.polar.append(
                    {
                        "sample": i,
                        "method": m,
                        "segment": k + 1,
                        "value": float(maps[m].values[k]),
                        "reference": float(ref[k]),
                        "ape": float(errs[k]),
                    }
                )
    return rep


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in columns])


def write_report(out_dir, rep: MetricReport) -> dict:
    """Write the four metric CSVs and ``summary.json``; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics_proj.csv", METRIC_COLUMNS, rep.proj)
    _write_csv(out / "metrics_mu.csv", METRIC_COLUMNS, rep.mu)
    _write_csv(out / "metrics_ac.csv", METRIC_COLUMNS, rep.ac)
    _write_csv(out / "polar_segments.csv", POLAR_COLUMNS, rep.polar)
    summary = rep.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return summary


def read_metric_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k, v in r.items():
            r[k] = int(v) if k in ("sample", "segment") else (v if k == "method" else float(v))
    return rows
