"""Corpus generation, manifests, and the on-disk dataset layout.

A corpus directory holds ``manifest.json`` plus one tensor-container file per
clip (records: frames, masks, trajectories, first_frame). The manifest stores
every scene's full parameters, so ground truth can be re-simulated or audited
from the manifest alone.

Splits: train / val / test_seen draw from the "seen" pools; test_unseen draws
appearance ids, background ids, and sizes from disjoint held-out pools.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import sim, tensorio
from .sim import Aabb, RigidObject, Scene, VideoClip

SPLITS = ("train", "val", "test_seen", "test_unseen")

# walls and ceiling keep every object inside the unit square for the whole
# clip, which is what makes mask centroids match stored trajectories
ENCLOSURE = (
    Aabb(-10.0, -10.0, 0.0, 11.0),
    Aabb(1.0, -10.0, 11.0, 11.0),
    Aabb(-10.0, 1.0, 11.0, 11.0),
)


class ConfigError(ValueError):
    """Invalid corpus or training configuration."""


@dataclass(frozen=True)
class ClipGeometry:
    t: int = 16
    h: int = 64
    w: int = 64
    c: int = 1
    fps: float = 16.0

    def to_json(self) -> dict:
        return {"T": self.t, "H": self.h, "W": self.w, "C": self.c, "fps": self.fps}

    @staticmethod
    def from_json(d: dict) -> "ClipGeometry":
        return ClipGeometry(t=d["T"], h=d["H"], w=d["W"], c=d["C"], fps=d["fps"])


@dataclass(frozen=True)
class SplitPools:
    appearance_ids: tuple[int, ...]
    background_ids: tuple[int, ...]
    size_range: tuple[float, float]


@dataclass
class CorpusConfig:
    counts: dict[str, int] = field(
        default_factory=lambda: {"train": 64, "val": 8, "test_seen": 8, "test_unseen": 8}
    )
    geometry: ClipGeometry = field(default_factory=ClipGeometry)
    substeps: int = 8
    gravity: float = 2.0
    n_objects_range: tuple[int, int] = (1, 3)
    restitution_range: tuple[float, float] = (0.1, 0.9)
    density_range: tuple[float, float] = (0.5, 2.0)
    seen: SplitPools = field(
        default_factory=lambda: SplitPools((0, 1, 2, 3, 4, 5, 6, 7), (0, 1, 2), (0.06, 0.13))
    )
    unseen: SplitPools = field(
        default_factory=lambda: SplitPools((8, 9, 10, 11), (3, 4), (0.135, 0.18))
    )

    def validate(self) -> None:
        for split in self.counts:
            if split not in SPLITS:
                raise ConfigError(f"unknown split {split!r}")
        if any(v < 0 for v in self.counts.values()):
            raise ConfigError("split counts must be >= 0")
        overlap_app = set(self.seen.appearance_ids) & set(self.unseen.appearance_ids)
        if overlap_app:
            raise ConfigError(f"seen/unseen appearance pools intersect: {sorted(overlap_app)}")
        overlap_bg = set(self.seen.background_ids) & set(self.unseen.background_ids)
        if overlap_bg:
            raise ConfigError(f"seen/unseen background pools intersect: {sorted(overlap_bg)}")
        lo_s, hi_s = self.seen.size_range
        lo_u, hi_u = self.unseen.size_range
        if max(lo_s, lo_u) < min(hi_s, hi_u):
            raise ConfigError("seen/unseen size ranges intersect")
        lo, hi = self.n_objects_range
        if not (1 <= lo <= hi):
            raise ConfigError("bad n_objects_range")

    def pools_for(self, split: str) -> SplitPools:
        return self.unseen if split == "test_unseen" else self.seen

    def to_json(self) -> dict:
        d = asdict(self)
        d["geometry"] = self.geometry.to_json()
        return d

    @staticmethod
    def from_json(d: dict) -> "CorpusConfig":
        d = dict(d)
        if "geometry" in d:
            d["geometry"] = ClipGeometry.from_json(d["geometry"])
        for key in ("seen", "unseen"):
            if key in d:
                p = d[key]
                d[key] = SplitPools(
                    tuple(p["appearance_ids"]),
                    tuple(p["background_ids"]),
                    tuple(p["size_range"]),
                )
        for key in ("n_objects_range", "restitution_range", "density_range"):
            if key in d:
                d[key] = tuple(d[key])
        return CorpusConfig(**d)


# ---------------------------------------------------------------------------
# scene sampling
# ---------------------------------------------------------------------------


def sample_scene(config: CorpusConfig, pools: SplitPools, rng: np.random.Generator) -> Scene:
    """Draw one valid free-fall scene: objects at rest in the upper half."""
    lo, hi = config.n_objects_range
    n_obj = int(rng.integers(lo, hi + 1))
    background_id = int(rng.choice(pools.background_ids))
    app_pool = list(pools.appearance_ids)
    perm = rng.permutation(len(app_pool))
    appearance = [app_pool[perm[i % len(app_pool)]] for i in range(n_obj)]

    for _ in range(200):  # rejection-sample non-overlapping placements
        objects: list[RigidObject] = []
        ok = True
        for i in range(n_obj):
            shape = sim.CIRCLE if rng.random() < 0.5 else sim.BOX
            size = float(rng.uniform(*pools.size_range))
            restitution = float(rng.uniform(*config.restitution_range))
            density = float(rng.uniform(*config.density_range))
            area = np.pi * size * size if shape == sim.CIRCLE else 4.0 * size * size
            margin = size + 0.01
            placed = None
            for _ in range(50):
                x = float(rng.uniform(margin, 1.0 - margin))
                y = float(rng.uniform(max(0.55, margin), 1.0 - margin))
                cand = RigidObject(
                    shape=shape,
                    position=(x, y),
                    velocity=(0.0, 0.0),
                    size=size,
                    restitution=restitution,
                    mass=float(density * area),
                    appearance_id=appearance[i],
                )
                if all(not sim._objects_overlap(cand, o) for o in objects):
                    placed = cand
                    break
            if placed is None:
                ok = False
                break
            objects.append(placed)
        if ok:
            scene = Scene(
                objects=tuple(objects),
                gravity=config.gravity,
                static_obstacles=ENCLOSURE,
                background_id=background_id,
                category_label=n_obj - 1,
            )
            scene.validate()
            return scene
    raise RuntimeError("could not place objects without overlap")


def scene_to_json(scene: Scene) -> dict:
    return {
        "objects": [
            {
                "shape": o.shape,
                "position": list(o.position),
                "velocity": list(o.velocity),
                "size": o.size,
                "restitution": o.restitution,
                "mass": o.mass,
                "appearance_id": o.appearance_id,
            }
            for o in scene.objects
        ],
        "gravity": scene.gravity,
        "static_obstacles": [
            [b.x_min, b.y_min, b.x_max, b.y_max] for b in scene.static_obstacles
        ],
        "background_id": scene.background_id,
        "category_label": scene.category_label,
    }


def scene_from_json(d: dict) -> Scene:
    return Scene(
        objects=tuple(
            RigidObject(
                shape=o["shape"],
                position=tuple(o["position"]),
                velocity=tuple(o["velocity"]),
                size=o["size"],
                restitution=o["restitution"],
                mass=o["mass"],
                appearance_id=o["appearance_id"],
            )
            for o in d["objects"]
        ),
        gravity=d["gravity"],
        static_obstacles=tuple(Aabb(*b) for b in d["static_obstacles"]),
        background_id=d["background_id"],
        category_label=d["category_label"],
    )


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


@dataclass
class ClipRecord:
    clip_id: str
    split: str
    file: str  # relative to the corpus root
    offsets: dict[str, int]
    scene: Scene

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "split": self.split,
            "file": self.file,
            "offsets": self.offsets,
            "scene": scene_to_json(self.scene),
        }

    @staticmethod
    def from_json(d: dict) -> "ClipRecord":
        return ClipRecord(
            clip_id=d["clip_id"],
            split=d["split"],
            file=d["file"],
            offsets=dict(d["offsets"]),
            scene=scene_from_json(d["scene"]),
        )


@dataclass
class ConditionBundle:
    """What the generator is conditioned on: first frame and category."""

    first_frame: np.ndarray  # (H, W, C) float32, frame 0 of the source clip
    category_label: int
    clip_id: str


@dataclass
class DatasetManifest:
    root: Path
    generation_seed: int
    geometry: ClipGeometry
    records: list[ClipRecord]
    version: int = MANIFEST_VERSION

    def split(self, name: str) -> list[ClipRecord]:
        return [r for r in self.records if r.split == name]

    def record(self, clip_id: str) -> ClipRecord:
        for r in self.records:
            if r.clip_id == clip_id:
                return r
        raise KeyError(clip_id)

    def load_clip(self, record: ClipRecord) -> VideoClip:
        tensors = tensorio.read_tensor_file(
            self.root / record.file,
            {k: record.offsets[k] for k in ("frames", "masks", "trajectories")},
        )
        return VideoClip(
            frames=tensors["frames"],
            masks=tensors["masks"],
            trajectories=tensors["trajectories"],
            fps=self.geometry.fps,
            scene=record.scene,
        )

    def load_frames(self, record: ClipRecord) -> np.ndarray:
        with open(self.root / record.file, "rb") as fh:
            return tensorio.read_record(fh, record.offsets["frames"])

    def condition(self, record: ClipRecord) -> ConditionBundle:
        with open(self.root / record.file, "rb") as fh:
            first = tensorio.read_record(fh, record.offsets["first_frame"])
        return ConditionBundle(
            first_frame=first,
            category_label=record.scene.category_label,
            clip_id=record.clip_id,
        )

    def save(self) -> None:
        payload = {
            "version": self.version,
            "generation_seed": self.generation_seed,
            "geometry": self.geometry.to_json(),
            "records": [r.to_json() for r in self.records],
        }
        path = self.root / "manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True, indent=1))
        os.replace(tmp, path)

    @staticmethod
    def load(root) -> "DatasetManifest":
        root = Path(root)
        payload = json.loads((root / "manifest.json").read_text())
        if payload["version"] != MANIFEST_VERSION:
            raise ConfigError(f"unsupported manifest version {payload['version']}")
        return DatasetManifest(
            root=root,
            generation_seed=payload["generation_seed"],
            geometry=ClipGeometry.from_json(payload["geometry"]),
            records=[ClipRecord.from_json(r) for r in payload["records"]],
        )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _clip_rng(seed: int, split_idx: int, clip_idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, split_idx, clip_idx]))


def _build_clip(args) -> tuple[str, str, Scene, dict[str, np.ndarray]]:
    config, seed, split_idx, clip_idx = args
    split = SPLITS[split_idx]
    rng = _clip_rng(seed, split_idx, clip_idx)
    scene = sample_scene(config, config.pools_for(split), rng)
    geo = config.geometry
    clip = sim.simulate(
        scene, geo.t, geo.fps, substeps=config.substeps, height=geo.h, width=geo.w
    )
    clip_id = f"{split}-{clip_idx:05d}"
    tensors = {
        "frames": clip.frames,
        "masks": clip.masks,
        "trajectories": clip.trajectories,
        "first_frame": clip.frames[0],
    }
    return clip_id, split, scene, tensors


def generate_corpus(
    config: CorpusConfig, seed: int, out_dir, workers: int | None = None
) -> DatasetManifest:
    """Sample, simulate, and write every clip; returns the saved manifest."""
    config.validate()
    root = Path(out_dir)
    (root / "clips").mkdir(parents=True, exist_ok=True)

    jobs = []
    for split_idx, split in enumerate(SPLITS):
        for clip_idx in range(config.counts.get(split, 0)):
            jobs.append((config, seed, split_idx, clip_idx))

    if workers is None:
        workers = int(os.environ.get("PHYSMASTER_THREADS", "0")) or (os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 8:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            built = list(pool.map(_build_clip, jobs, chunksize=16))
    else:
        built = [_build_clip(j) for j in jobs]

    records = []
    for clip_id, split, scene, tensors in built:
        rel = f"clips/{clip_id}.pmt"
        offsets = tensorio.write_tensor_file(root / rel, tensors)
        records.append(
            ClipRecord(clip_id=clip_id, split=split, file=rel, offsets=offsets, scene=scene)
        )

    manifest = DatasetManifest(
        root=root, generation_seed=seed, geometry=config.geometry, records=records
    )
    manifest.save()
    return manifest
