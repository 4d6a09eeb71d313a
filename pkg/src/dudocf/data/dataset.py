"""On-disk synthetic datasets.

A dataset directory holds ``manifest.json`` and one DDT1 file per sample and
field, named ``sample_<idx>_<field>.ddt``. Sample indices run over the
train, val and test splits in that order. Every file's sha256 is recorded
so truncation or tampering is caught on load.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..io import TensorFileError, as_f32_exact, load_ddt, save_ddt
from ..physics.geometry import ScannerGeometry
from ..physics.projector import mlem_reconstruct
from ..physics.system_matrix import SystemMatrix, build_system_matrix
from .boundary import compute_boundary
from .degrade import apply_limited_view, apply_low_dose, lv_detectors
from .phantom import ShellGeometry, generate_phantom
from .simulate import DEFAULT_COUNTS, simulate_acquisition

log = logging.getLogger(__name__)

FIELDS = ("P_FDFV", "P_LDFV", "P_LDLV", "S_LDLV", "mu", "beta", "activity")
SPLITS = ("train", "val", "test")
EM_ITERS = 30
MANIFEST_VERSION = 1


class ManifestError(IOError):
    """Missing, corrupt or inconsistent dataset files."""


@dataclass
class Sample:
    P_FDFV: np.ndarray
    P_LDFV: np.ndarray
    P_LDLV: np.ndarray
    S_LDLV: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    activity: np.ndarray
    dose_rate: float
    lv_mask: np.ndarray
    shell: ShellGeometry | None = None
    index: int = -1
    meta: dict = field(default_factory=dict)


def sample_seeds(seed: int, index: int) -> dict:
    """Independent streams per sample so generation order never matters."""
    phantom, noise, dose = np.random.SeedSequence([seed, index]).spawn(3)
    return {"phantom": phantom, "noise": noise, "dose": dose}


def make_sample(
    A: SystemMatrix, index: int, seed: int, dose_rate: float = 0.1, total_counts: float = DEFAULT_COUNTS
) -> Sample:
    """Phantom, FD/FV draw, thinning, masking, LV ML-EM and boundary label for one index.

    All arrays are rounded to float32 so they survive a DDT1 round trip unchanged.
    """
    geom = A.geometry
    s = sample_seeds(seed, index)
    ph = generate_phantom(s["phantom"], geom.volume_grid, geom.voxel_size_mm)
    p_fdfv = simulate_acquisition(A, ph, total_counts, seed=s["noise"])
    p_ldfv = apply_low_dose(p_fdfv, dose_rate, s["dose"])
    p_ldlv = apply_limited_view(p_ldfv, geom)
    kept = lv_detectors(geom)
    s_ldlv = as_f32_exact(mlem_reconstruct(A, p_ldlv, None, EM_ITERS, detectors=kept))
    mu = as_f32_exact(ph.mu)
    return Sample(
        P_FDFV=p_fdfv,
        P_LDFV=p_ldfv,
        P_LDLV=p_ldlv,
        S_LDLV=s_ldlv,
        mu=mu,
        beta=as_f32_exact(compute_boundary(mu)),
        activity=as_f32_exact(ph.activity),
        dose_rate=float(dose_rate),
        lv_mask=kept,
        shell=ph.shell,
        index=index,
        meta={"myo_ratio": float(ph.metadata["myo_ratio"])},
    )


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fname(index: int, name: str) -> str:
    return f"sample_{index}_{name}.ddt"


def build_dataset(
    out_dir,
    n_train: int,
    n_val: int,
    n_test: int,
    geom: ScannerGeometry,
    dose_rate: float = 0.1,
    seed: int = 0,
    total_counts: float = DEFAULT_COUNTS,
    A: SystemMatrix | None = None,
) -> dict:
    """Generate and persist a dataset; returns the manifest dict."""
    if min(n_train, n_val, n_test) < 0:
        raise ValueError("split sizes must be non-negative")
    if not 0.0 < dose_rate <= 1.0:
        raise ValueError(f"dose rate must lie in (0, 1], got {dose_rate}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    A = A if A is not None else build_system_matrix(geom)
    sizes = {"train": n_train, "val": n_val, "test": n_test}
    splits, samples = {}, {}
    idx = 0
    for name in SPLITS:
        splits[name] = list(range(idx, idx + sizes[name]))
        idx += sizes[name]
    for i in range(idx):
        smp = make_sample(A, i, seed, dose_rate, total_counts)
        files = {}
        for f in FIELDS:
            path = out / _fname(i, f)
            save_ddt(path, getattr(smp, f))
            files[f] = {"file": path.name, "sha256": _sha(path)}
        samples[str(i)] = {"files": files, "shell": smp.shell.to_dict(), **smp.meta}
        log.info("sample %d/%d written", i + 1, idx)
    manifest = {
        "version": MANIFEST_VERSION,
        "seed": int(seed),
        "dose_rate": float(dose_rate),
        "total_counts": float(total_counts),
        "proj_scale": float(total_counts) / geom.n_bins,
        "em_iters": EM_ITERS,
        "geometry": geom.to_dict(),
        "geometry_hash": geom.hash(),
        "lv_detectors": [int(d) for d in lv_detectors(geom)],
        "splits": splits,
        "samples": samples,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, out / "manifest.json")
    return manifest


def load_manifest(root) -> dict:
    root = Path(root)
    try:
        m = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise ManifestError(f"no manifest.json in {root}") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"unreadable manifest in {root}: {exc}") from exc
    for key in ("splits", "samples", "geometry", "dose_rate"):
        if key not in m:
            raise ManifestError(f"manifest lacks {key!r}")
    seen = set()
    for name in SPLITS:
        ids = set(m["splits"].get(name, []))
        if ids & seen:
            raise ManifestError("dataset splits overlap")
        seen |= ids
    if seen != {int(k) for k in m["samples"]}:
        raise ManifestError("split indices do not match the sample table")
    return m


def manifest_geometry(manifest: dict) -> ScannerGeometry:
    return ScannerGeometry.from_dict(manifest["geometry"])


def load_sample(root, index: int, manifest: dict | None = None, verify: bool = True) -> Sample:
    """Read one sample back; checksums are verified unless ``verify`` is False."""
    root = Path(root)
    m = manifest if manifest is not None else load_manifest(root)
    entry = m["samples"].get(str(index))
    if entry is None:
        raise ManifestError(f"sample {index} not in manifest")
    arrays = {}
    for f in FIELDS:
        rec = entry["files"][f]
        path = root / rec["file"]
        if not path.exists():
            raise ManifestError(f"missing file {path.name}")
        if verify and _sha(path) != rec["sha256"]:
            raise ManifestError(f"checksum mismatch for {path.name}")
        try:
            arrays[f] = load_ddt(path)
        except TensorFileError as exc:
            raise ManifestError(str(exc)) from exc
    return Sample(
        **arrays,
        dose_rate=float(m["dose_rate"]),
        lv_mask=np.asarray(m["lv_detectors"]),
        shell=ShellGeometry.from_dict(entry["shell"]),
        index=int(index),
        meta={k: v for k, v in entry.items() if k not in ("files", "shell")},
    )


def load_split(root, split: str, manifest: dict | None = None) -> list[Sample]:
    m = manifest if manifest is not None else load_manifest(root)
    if split not in m["splits"]:
        raise ManifestError(f"unknown split {split!r}")
    return [load_sample(root, i, m) for i in m["splits"][split]]
