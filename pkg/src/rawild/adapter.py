"""Global curve followed by local grid rendering.

    y(p) = clip(M(p, l(p)) @ g(I(p)), 0, 1),   l(p) = mean_c I_c(p)

The luminance guide is taken from the unmapped input, so the grid's depth
axis keeps the same meaning whatever the curve does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .curve import CurveParams, apply_curve
from .grid import GridCoeffs, load_grid, render, save_grid
from .raster import LinearRawImage

BUNDLE_FORMAT = "rawild-adapter"


@dataclass(frozen=True)
class AdapterParams:
    curve: CurveParams
    grid: GridCoeffs

    @classmethod
    def identity(cls, height: int, width: int, degree: int = 8, **grid_kw) -> "AdapterParams":
        return cls(CurveParams.identity(degree), GridCoeffs.zeros(height, width, **grid_kw))


def luminance_map(image: LinearRawImage) -> np.ndarray:
    d = image.data.astype(np.float64)
    return (d[0] + d[1] + d[2]) / 3.0


def apply_adapter(image: LinearRawImage, params: AdapterParams) -> LinearRawImage:
    lum = luminance_map(image)
    mapped = apply_curve(params.curve, image)
    return image.with_data(render(params.grid.materialize(), mapped.data, lum))


def save_bundle(params: AdapterParams, directory, image_size: tuple[int, int] | None = None) -> Path:
    """Write curve.json, grid.json, grid.bin and a manifest.json tying them together."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "curve.json").write_text(params.curve.to_json())
    save_grid(params.grid, directory / "grid.json", directory / "grid.bin")
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": 1,
        "curve": "curve.json",
        "grid_header": "grid.json",
        "grid_payload": "grid.bin",
    }
    if image_size is not None:
        manifest["image_size"] = list(image_size)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_bundle(path) -> tuple[AdapterParams, dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = json.loads(path.read_text())
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{path}: not an adapter bundle manifest")
    root = path.parent
    curve = CurveParams.from_json((root / manifest["curve"]).read_text())
    grid = load_grid(root / manifest["grid_header"], root / manifest["grid_payload"])
    return AdapterParams(curve, grid), manifest
