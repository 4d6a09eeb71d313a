from .boundary import compute_boundary
from .dataset import (
    ManifestError,
    Sample,
    build_dataset,
    load_manifest,
    load_sample,
    load_split,
    make_sample,
    manifest_geometry,
)
from .degrade import apply_limited_view, apply_low_dose, lv_detectors, lv_mask
from .phantom import Phantom, ShellGeometry, generate_phantom
from .simulate import DEFAULT_COUNTS, expected_projection, simulate_acquisition
