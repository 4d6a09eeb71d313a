"""Checkpoint directories: one DDT1 file per tensor plus ``manifest.json``.

Parameter files are named ``iter<i>.<net>.<layer>.<param>.ddt``; optimizer
moments are stored alongside as ``optim.m.<name>.ddt`` / ``optim.v.<name>.ddt``.
Values are float32 on disk.
"""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from ..io import TensorFileError, load_ddt, save_ddt
from ..physics.geometry import ScannerGeometry
from .cascade import DuDoCFNet, Scaling
from .config import ABLATIONS, CascadeConfig


class CheckpointError(IOError):
    pass


def save_checkpoint(path, model: DuDoCFNet, scaling: Scaling | None = None, optim_state: dict | None = None, extra: dict | None = None) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for old in root.glob("*.ddt"):
        old.unlink()
    tensors = dict(model.state_dict())
    step = None
    if optim_state is not None:
        step = int(optim_state["step"])
        for name, arr in optim_state["m"].items():
            tensors[f"optim.m.{name}"] = arr
        for name, arr in optim_state["v"].items():
            tensors[f"optim.v.{name}"] = arr
    files = {}
    for name in sorted(tensors):
        fn = root / f"{name}.ddt"
        save_ddt(fn, tensors[name])
        files[name] = hashlib.sha256(fn.read_bytes()).hexdigest()
    cfg = model.cfg.to_dict()
    manifest = {
        "cascade": cfg,
        "ablations": {k: bool(cfg[k]) for k in ABLATIONS},
        "geometry": model.physics.A.geometry.to_dict(),
        "scaling": None if scaling is None else {"proj_scale": scaling.proj_scale, "dose_rate": scaling.dose_rate},
        "optim_step": step,
        "census": model.census(),
        "files": files,
        "extra": extra or {},
    }
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp, root / "manifest.json")
    return root


def read_manifest(path) -> dict:
    try:
        return json.loads((Path(path) / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest in {path}: {exc}") from exc


def load_checkpoint(path, A=None):
    """Rebuild the cascade stored at ``path``.

    Returns ``(model, scaling, optim_state, manifest)``. ``A`` must match the
    stored geometry; when omitted it is built (or fetched from the cache).
    """
    from ..physics.system_matrix import build_system_matrix

    root = Path(path)
    man = read_manifest(root)
    geom = ScannerGeometry.from_dict(man["geometry"])
    if A is None:
        A = build_system_matrix(geom)
    elif A.geometry.hash() != geom.hash():
        raise CheckpointError("system matrix geometry does not match the checkpoint")
    model = DuDoCFNet(A, CascadeConfig.from_dict(man["cascade"]))
    tensors = {}
    for name, digest in man["files"].items():
        fn = root / f"{name}.ddt"
        if not fn.exists():
            raise CheckpointError(f"missing checkpoint tensor {fn.name}")
        if hashlib.sha256(fn.read_bytes()).hexdigest() != digest:
            raise CheckpointError(f"checksum mismatch for {fn.name}")
        try:
            tensors[name] = load_ddt(fn)
        except TensorFileError as exc:
            raise CheckpointError(str(exc)) from exc
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim.")})
    optim = None
    if man.get("optim_step") is not None:
        optim = {
            "step": man["optim_step"],
            "m": {k[len("optim.m."):]: v for k, v in tensors.items() if k.startswith("optim.m.")},
            "v": {k[len("optim.v."):]: v for k, v in tensors.items() if k.startswith("optim.v.")},
        }
    sc = man.get("scaling")
    scaling = None if sc is None else Scaling(sc["proj_scale"], sc["dose_rate"])
    return model, scaling, optim, man
