"""Deterministic synthetic detection world with a controllable domain shift.

A "scene" is a set of category-labeled ground-truth boxes inside a fixed
extent. Instead of rendering pixels, the world exposes a feature oracle:
the feature of any query box is an IoU-weighted mixture of per-category
prototype vectors plus a background prototype, shifted by a constant
offset vector on the target domain, plus Gaussian noise whose magnitude
depends on the augmentation view (weak or strong). Proposal generation
replaces a region-proposal network with jittered ground-truth boxes and
uniform random boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, boxes_to_array, iou_matrix
from .rng import child_rng, derive_int

# Minimum side length applied after clipping so every proposal stays a valid box.
MIN_SIDE = 1e-3

VIEW_SIGMAS = ("weak", "strong", "clean")


@dataclass
class DomainConfig:
    """World definition: prototypes, domain shift, noise and scene geometry."""

    num_categories: int
    feature_dim: int
    prototypes: np.ndarray  # (C+1, d); row C is the background prototype
    domain_offset: np.ndarray  # (d,), added to target-domain features
    feature_noise_sigma: float
    weak_aug_sigma: float
    strong_aug_sigma: float
    scene_extent: tuple[float, float]
    min_objects: int = 1
    max_objects: int = 8
    min_box_size: float = 7.0
    max_box_size: float = 24.0
    max_object_overlap: float = 0.3

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        self.domain_offset = np.asarray(self.domain_offset, dtype=np.float64)
        c, d = self.num_categories, self.feature_dim
        if self.prototypes.shape != (c + 1, d):
            raise ValueError(
                f"prototypes must have shape ({c + 1}, {d}), got {self.prototypes.shape}"
            )
        if self.domain_offset.shape != (d,):
            raise ValueError(f"domain_offset must have shape ({d},)")
        diffs = self.prototypes[:, None, :] - self.prototypes[None, :, :]
        dist = np.linalg.norm(diffs, axis=-1)
        iu = np.triu_indices(c + 1, k=1)
        if dist[iu].size and dist[iu].min() <= 0.0:
            raise ValueError("prototypes must be pairwise distinct")
        if not (self.strong_aug_sigma >= self.weak_aug_sigma >= 0.0):
            raise ValueError("need strong_aug_sigma >= weak_aug_sigma >= 0")
        if self.feature_noise_sigma < 0.0:
            raise ValueError("feature_noise_sigma must be >= 0")
        if not (1 <= self.min_objects <= self.max_objects):
            raise ValueError("need 1 <= min_objects <= max_objects")

    @property
    def background_index(self) -> int:
        return self.num_categories

    def view_sigma(self, view: str) -> float:
        if view == "weak":
            aug = self.weak_aug_sigma
        elif view == "strong":
            aug = self.strong_aug_sigma
        elif view == "clean":
            aug = 0.0
        else:
            raise ValueError(f"unknown view {view!r}, expected one of {VIEW_SIGMAS}")
        return float(np.hypot(self.feature_noise_sigma, aug))


@dataclass
class Scene:
    """One synthetic image: labeled objects, a domain tag and its own RNG seed."""

    objects: list[tuple[int, BBox]]
    domain: str  # "source" | "target"
    seed: int

    def __post_init__(self):
        if self.domain not in ("source", "target"):
            raise ValueError(f"domain must be source|target, got {self.domain!r}")
        if not self.objects:
            raise ValueError("a scene must contain at least one object")


@dataclass
class Proposal:
    box: BBox
    origin: str  # "jittered-gt" | "random"


@dataclass
class Dataset:
    world: DomainConfig
    source: list[Scene]
    target: list[Scene]
    eval: list[Scene]
    seed: int = 0


def make_world(
    seed: int,
    num_categories: int = 4,
    feature_dim: int = 16,
    prototype_scale: float = 3.0,
    domain_offset_scale: float = 2.25,
    offset_span_mix: float = 0.5,
    feature_noise_sigma: float = 0.15,
    weak_aug_sigma: float = 0.1,
    strong_aug_sigma: float = 0.15,
    scene_extent: tuple[float, float] = (100.0, 100.0),
    **kwargs,
) -> DomainConfig:
    """Draw prototypes and the domain offset for a fresh world.

    Prototypes are random directions of equal norm ``prototype_scale``.
    The target shift is a random direction scaled to
    ``domain_offset_scale``; by default it is drawn independently of the
    prototypes, so it degrades the source model's calibration diffusely
    rather than flipping any one category's identity — teacher rankings
    stay trustworthy while confidence sags. ``offset_span_mix`` tilts a
    fraction of the shift along the axis from the background prototype
    toward one randomly chosen foreground prototype, which inflates
    that category's evidence in regions containing no object at all.
    Background patches on the target domain then surface as spurious
    low-confidence detections of that category, so a loop that ingests
    everything above a permissive threshold trains on them, while the
    saturated high band stays clean. Instance hardness also comes from
    geometry: small objects are rarely hit by well-overlapping
    proposals, so their pseudo-labels sit at low confidence regardless
    of category.
    """
    if not 0.0 <= offset_span_mix <= 1.0:
        raise ValueError("offset_span_mix must lie in [0, 1]")
    rng = child_rng(seed, "world")
    protos = rng.standard_normal((num_categories + 1, feature_dim))
    protos *= prototype_scale / np.linalg.norm(protos, axis=1, keepdims=True)
    direction = rng.standard_normal(feature_dim)
    if domain_offset_scale > 0.0:
        if offset_span_mix > 0.0:
            spurious = int(rng.integers(num_categories))
            axis = protos[spurious] - protos[num_categories]
            direction = (1.0 - offset_span_mix) * direction / np.linalg.norm(direction)
            direction += offset_span_mix * axis / np.linalg.norm(axis)
        offset = direction * (domain_offset_scale / np.linalg.norm(direction))
    else:
        offset = np.zeros(feature_dim)
    return DomainConfig(
        num_categories=num_categories,
        feature_dim=feature_dim,
        prototypes=protos,
        domain_offset=offset,
        feature_noise_sigma=feature_noise_sigma,
        weak_aug_sigma=weak_aug_sigma,
        strong_aug_sigma=strong_aug_sigma,
        scene_extent=scene_extent,
        **kwargs,
    )


def _sample_scene(world: DomainConfig, domain: str, seed: int) -> Scene:
    rng = child_rng(seed, "scene")
    w, h = world.scene_extent
    n_obj = int(rng.integers(world.min_objects, world.max_objects + 1))
    objects: list[tuple[int, BBox]] = []
    for _ in range(n_obj):
        box = None
        # Rejection keeps objects from piling up; the last draw is kept regardless.
        for _ in range(20):
            bw = rng.uniform(world.min_box_size, world.max_box_size)
            bh = rng.uniform(world.min_box_size, world.max_box_size)
            x1 = rng.uniform(0.0, w - bw)
            y1 = rng.uniform(0.0, h - bh)
            box = BBox(x1, y1, x1 + bw, y1 + bh)
            if not objects:
                break
            existing = boxes_to_array([b for _, b in objects])
            if iou_matrix(box.as_array()[None, :], existing).max() <= world.max_object_overlap:
                break
        cat = int(rng.integers(0, world.num_categories))
        objects.append((cat, box))
    return Scene(objects=objects, domain=domain, seed=seed)


def generate_dataset(
    world: DomainConfig,
    n_source: int,
    n_target: int,
    seed: int,
    n_eval: int | None = None,
) -> Dataset:
    """Build the three splits: labeled source, unlabeled target, held-out target eval.

    Target-eval ground truth exists only for metric computation; the
    adaptation loop never reads target labels. Every scene owns a seed
    derived from (dataset seed, split, index), so generation order and
    parallelism cannot change the result.
    """
    if n_source < 1 or n_target < 1:
        raise ValueError("need n_source >= 1 and n_target >= 1")
    if n_eval is None:
        n_eval = max(1, n_target // 2)
    splits = {}
    for split, domain, count in (
        ("source", "source", n_source),
        ("target", "target", n_target),
        ("eval", "target", n_eval),
    ):
        splits[split] = [
            _sample_scene(world, domain, derive_int(seed, split, i)) for i in range(count)
        ]
    return Dataset(world=world, source=splits["source"], target=splits["target"],
                   eval=splits["eval"], seed=seed)


def clean_feature(world: DomainConfig, scene: Scene, box: BBox) -> np.ndarray:
    """Noise-free feature of one box: IoU-weighted prototype mixture plus shift."""
    return clean_features(world, scene, [box])[0]


def clean_features(world: DomainConfig, scene: Scene, boxes: list[BBox]) -> np.ndarray:
    gt = boxes_to_array([b for _, b in scene.objects])
    cats = np.array([c for c, _ in scene.objects], dtype=np.intp)
    overlaps = iou_matrix(boxes_to_array(boxes), gt)  # (N, n_obj)
    feats = overlaps @ world.prototypes[cats]
    feats += (1.0 - overlaps.max(axis=1))[:, None] * world.prototypes[world.background_index]
    if scene.domain == "target":
        feats += world.domain_offset
    return feats


def extract_feature(
    world: DomainConfig, scene: Scene, box: BBox, view: str, rng: np.random.Generator
) -> np.ndarray:
    return extract_features(world, scene, [box], view, rng)[0]


def extract_features(
    world: DomainConfig,
    scene: Scene,
    boxes: list[BBox],
    view: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Features for a batch of boxes under one augmentation view.

    The noise draw happens even at sigma zero, so changing sigmas never
    changes how much of the stream downstream consumers see.
    """
    feats = clean_features(world, scene, boxes)
    sigma = world.view_sigma(view)
    noise = rng.standard_normal(feats.shape)
    return feats + sigma * noise


def _clip_box(x1: float, y1: float, x2: float, y2: float, extent: tuple[float, float]) -> BBox:
    w, h = extent
    x1, x2 = sorted((min(max(x1, 0.0), w), min(max(x2, 0.0), w)))
    y1, y2 = sorted((min(max(y1, 0.0), h), min(max(y2, 0.0), h)))
    if x2 - x1 < MIN_SIDE:
        x2 = x1 + MIN_SIDE if x1 + MIN_SIDE <= w else x2
        x1 = x2 - MIN_SIDE
    if y2 - y1 < MIN_SIDE:
        y2 = y1 + MIN_SIDE if y1 + MIN_SIDE <= h else y2
        y1 = y2 - MIN_SIDE
    return BBox(x1, y1, x2, y2)


def generate_proposals(
    world: DomainConfig,
    scene: Scene,
    n_jitter: int,
    n_random: int,
    jitter_sigma: float,
    rng: np.random.Generator,
) -> list[Proposal]:
    """Fixed stand-in for a proposal network.

    ``n_jitter`` Gaussian-perturbed copies of ground-truth boxes (round-robin
    over objects) plus ``n_random`` uniform boxes, clipped to the extent and
    kept non-degenerate.
    """
    if n_jitter < 0 or n_random < 0:
        raise ValueError("proposal counts must be >= 0")
    w, h = world.scene_extent
    proposals: list[Proposal] = []
    for k in range(n_jitter):
        _, gt = scene.objects[k % len(scene.objects)]
        dx1, dy1, dx2, dy2 = rng.normal(0.0, 1.0, 4) * jitter_sigma
        box = _clip_box(gt.x1 + dx1, gt.y1 + dy1, gt.x2 + dx2, gt.y2 + dy2, (w, h))
        proposals.append(Proposal(box=box, origin="jittered-gt"))
    for _ in range(n_random):
        xa, xb = np.sort(rng.uniform(0.0, w, 2))
        ya, yb = np.sort(rng.uniform(0.0, h, 2))
        proposals.append(Proposal(box=_clip_box(xa, ya, xb, yb, (w, h)), origin="random"))
    return proposals


# ---------------------------------------------------------------------------
# On-disk format: world.json plus one line-delimited text file per split.
# Scene line: "<domain> <seed> <cat>,<x1>,<y1>,<x2>,<y2> ..." with %.17g
# coordinates so values round-trip exactly.
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return "%.17g" % x


def scene_to_line(scene: Scene) -> str:
    parts = [scene.domain, str(scene.seed)]
    for cat, b in scene.objects:
        parts.append(",".join([str(cat)] + [_fmt(v) for v in (b.x1, b.y1, b.x2, b.y2)]))
    return " ".join(parts)


def scene_from_line(line: str) -> Scene:
    parts = line.split()
    if len(parts) < 3:
        raise ValueError(f"malformed scene record: {line!r}")
    domain, seed = parts[0], int(parts[1])
    objects = []
    for tok in parts[2:]:
        fields = tok.split(",")
        if len(fields) != 5:
            raise ValueError(f"malformed object tuple: {tok!r}")
        cat = int(fields[0])
        x1, y1, x2, y2 = (float(v) for v in fields[1:])
        objects.append((cat, BBox(x1, y1, x2, y2)))
    return Scene(objects=objects, domain=domain, seed=seed)


def save_dataset(dataset: Dataset, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = dataset.world
    meta = {
        "format": "sfodkit-dataset-v1",
        "seed": dataset.seed,
        "num_categories": world.num_categories,
        "feature_dim": world.feature_dim,
        "prototypes": world.prototypes.tolist(),
        "domain_offset": world.domain_offset.tolist(),
        "feature_noise_sigma": world.feature_noise_sigma,
        "weak_aug_sigma": world.weak_aug_sigma,
        "strong_aug_sigma": world.strong_aug_sigma,
        "scene_extent": list(world.scene_extent),
        "min_objects": world.min_objects,
        "max_objects": world.max_objects,
        "min_box_size": world.min_box_size,
        "max_box_size": world.max_box_size,
        "max_object_overlap": world.max_object_overlap,
    }
    (out / "world.json").write_text(json.dumps(meta, indent=2) + "\n")
    for split in ("source", "target", "eval"):
        scenes = getattr(dataset, split)
        text = "\n".join(scene_to_line(s) for s in scenes)
        (out / f"{split}.txt").write_text(text + "\n" if text else "")


def load_dataset(in_dir: str | Path) -> Dataset:
    src = Path(in_dir)
    meta = json.loads((src / "world.json").read_text())
    if meta.get("format") != "sfodkit-dataset-v1":
        raise ValueError(f"unrecognized dataset format in {src}/world.json")
    world = DomainConfig(
        num_categories=meta["num_categories"],
        feature_dim=meta["feature_dim"],
        prototypes=np.array(meta["prototypes"]),
        domain_offset=np.array(meta["domain_offset"]),
        feature_noise_sigma=meta["feature_noise_sigma"],
        weak_aug_sigma=meta["weak_aug_sigma"],
        strong_aug_sigma=meta["strong_aug_sigma"],
        scene_extent=tuple(meta["scene_extent"]),
        min_objects=meta["min_objects"],
        max_objects=meta["max_objects"],
        min_box_size=meta["min_box_size"],
        max_box_size=meta["max_box_size"],
        max_object_overlap=meta["max_object_overlap"],
    )
    splits = {}
    for split in ("source", "target", "eval"):
        lines = (src / f"{split}.txt").read_text().splitlines()
        splits[split] = [scene_from_line(ln) for ln in lines if ln.strip()]
    return Dataset(world=world, source=splits["source"], target=splits["target"],
                   eval=splits["eval"], seed=meta["seed"])
