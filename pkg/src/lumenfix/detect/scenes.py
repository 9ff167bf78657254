"""Synthetic low-light desk scenes with exact ground truth."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..image_core import RgbImage, load_image, save_image
from .boxes import BoundingBox

CLASS_NAMES = ("rectangle", "disk", "triangle")

MIN_TARGET_PX = 6


@dataclass(frozen=True)
class Instance:
    box: BoundingBox
    class_id: int


@dataclass(frozen=True)
class Scene:
    image: RgbImage
    instances: tuple[Instance, ...]

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        if not self.instances:
            raise ValueError("a scene needs at least one instance")
        for inst in self.instances:
            if not inst.box.fits(self.image.width, self.image.height):
                raise ValueError(f"instance box {inst.box} lies outside the image")
            if inst.class_id < 0:
                raise ValueError("class ids are non-negative")

    @property
    def boxes(self) -> list[BoundingBox]:
        return [inst.box for inst in self.instances]

    @property
    def rho(self) -> int:
        return len(self.instances)


@dataclass(frozen=True)
class SceneSpec:
    """Generator parameters.

    Target sides are drawn from ``[min_size, max_size]`` as fractions of the
    shorter image side.  ``placement="uniform"`` scatters targets anywhere;
    ``"centered"`` keeps each target centre within ``jitter`` (fraction of
    the image size) of the image centre.
    """

    width: int = 64
    height: int = 64
    n_targets: int = 1
    min_size: float = 0.25
    max_size: float = 0.5
    placement: str = "uniform"
    jitter: float = 0.1
    background: float = 0.05
    noise_sigma: float = 0.01
    min_intensity: float = 0.1
    max_intensity: float = 0.25
    classes: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.n_targets < 1:
            raise ValueError("at least one target must be requested")
        if self.placement not in ("uniform", "centered"):
            raise ValueError(f"unknown placement {self.placement!r}")
        if not 0 < self.min_size <= self.max_size <= 1:
            raise ValueError("require 0 < min_size <= max_size <= 1")
        if not 0 <= self.min_intensity <= self.max_intensity <= 0.25:
            raise ValueError("target intensity must stay within [0, 0.25]")
        if any(c not in range(len(CLASS_NAMES)) for c in self.classes) or not self.classes:
            raise ValueError(f"classes must be drawn from 0..{len(CLASS_NAMES) - 1}")
        if round(self.min_size * min(self.width, self.height)) < MIN_TARGET_PX:
            raise ValueError(f"targets cannot fit: image {self.width}x{self.height} is too small")


def shape_mask(class_id: int, w: int, h: int) -> np.ndarray:
    """Boolean ``(h, w)`` raster of the shape inscribed in its box."""
    ys, xs = np.mgrid[0:h, 0:w]
    u = (xs + 0.5) / w  # pixel centres in [0, 1]
    v = (ys + 0.5) / h
    if class_id == 0:
        return np.ones((h, w), dtype=bool)
    if class_id == 1:
        return (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.25
    # apex top-centre, base along the bottom edge; widen by half a pixel so
    # the raster touches every side of the box
    half = 0.5 * v + 0.5 / w
    return np.abs(u - 0.5) <= half


def _place(spec: SceneSpec, rng: np.random.Generator, w: int, h: int) -> tuple[int, int]:
    if spec.placement == "uniform":
        return int(rng.integers(0, spec.width - w + 1)), int(rng.integers(0, spec.height - h + 1))
    jx, jy = spec.jitter * spec.width, spec.jitter * spec.height
    cx = spec.width / 2 + rng.uniform(-jx, jx)
    cy = spec.height / 2 + rng.uniform(-jy, jy)
    x = int(np.clip(round(cx - w / 2), 0, spec.width - w))
    y = int(np.clip(round(cy - h / 2), 0, spec.height - h))
    return x, y


def make_synthetic_scene(spec: SceneSpec, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    side = min(spec.width, spec.height)
    lo = max(MIN_TARGET_PX, int(round(spec.min_size * side)))
    hi = max(lo, int(round(spec.max_size * side)))
    img = spec.background + rng.normal(0.0, spec.noise_sigma, size=(spec.height, spec.width, 3))
    instances = []
    for _ in range(spec.n_targets):
        class_id = int(rng.choice(spec.classes))
        w = int(rng.integers(lo, hi + 1))
        h = int(rng.integers(lo, hi + 1))
        x, y = _place(spec, rng, w, h)
        colour = rng.uniform(spec.min_intensity, spec.max_intensity, size=3)
        mask = shape_mask(class_id, w, h)
        texture = rng.normal(0.0, spec.noise_sigma, size=(h, w, 3))
        region = img[y : y + h, x : x + w]
        region[mask] = colour + texture[mask]
        instances.append(Instance(BoundingBox(x, y, w, h), class_id))
    # round-trip through 8 bits so in-memory and on-disk scenes agree exactly
    img = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5) / 255.0
    return Scene(RgbImage(img), tuple(instances))


# -- ground-truth files -------------------------------------------------------------


def scene_to_json(scene: Scene, image_path: str) -> str:
    doc = {
        "image": image_path,
        "instances": [
            {"x": i.box.x, "y": i.box.y, "w": i.box.w, "h": i.box.h, "class": i.class_id}
            for i in scene.instances
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def read_ground_truth(path: str | os.PathLike) -> tuple[str, list[Instance]]:
    """Parse a ground-truth JSON file; the image path is resolved relative to it."""
    with open(path) as fh:
        doc = json.load(fh)
    image = Path(doc["image"])
    if not image.is_absolute():
        image = Path(path).parent / image
    instances = [
        Instance(BoundingBox(int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"])), int(d["class"]))
        for d in doc["instances"]
    ]
    return str(image), instances


def save_scene(scene: Scene, directory: str | os.PathLike, stem: str) -> tuple[Path, Path]:
    directory = Path(directory)
    image_path = directory / f"{stem}.ppm"
    json_path = directory / f"{stem}.json"
    save_image(scene.image, image_path)
    json_path.write_text(scene_to_json(scene, image_path.name))
    return image_path, json_path


def load_scene(json_path: str | os.PathLike) -> Scene:
    image_path, instances = read_ground_truth(json_path)
    image = load_image(image_path)
    if not isinstance(image, RgbImage):
        raise ValueError(f"{image_path}: scenes must be colour (P6) images")
    return Scene(image, tuple(instances))
