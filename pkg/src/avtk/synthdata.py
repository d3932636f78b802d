"""Deterministic synthetic audio-visual clips.

Three clip flavors: easy control scenes, "case1" (two visually similar
objects of the same class, exactly one sounding per frame) and "case2"
(sounding state flips on and off within the clip).  Ground truth marks a
pixel with an object's class only on frames where that object sounds;
silent objects are background.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import storage
from .rng import derive_seed, make_rng

PALETTE = [
    (0.90, 0.20, 0.20),
    (0.20, 0.85, 0.25),
    (0.25, 0.40, 0.95),
    (0.90, 0.80, 0.20),
    (0.80, 0.25, 0.85),
    (0.20, 0.85, 0.85),
    (0.95, 0.55, 0.20),
    (0.60, 0.60, 0.60),
]

SHAPES = ("disk", "square", "triangle")
CLIP_TYPES = ("easy", "case1", "case2")


class DataError(ValueError):
    pass


@dataclass
class ObjectSpec:
    class_id: int
    shape: str
    color: tuple
    center: tuple          # (row, col)
    radius: int

    def __post_init__(self):
        if self.radius < 2:
            raise DataError("object radius must be >= 2 px")
        if self.shape not in SHAPES:
            raise DataError(f"unknown shape {self.shape!r}")


@dataclass
class SceneSpec:
    canvas: tuple                  # (H, W)
    num_frames: int
    objects: list                  # [ObjectSpec]
    schedule: list                 # per object: list of T sounding flags
    audio_table: dict              # class_id -> base descriptor (list of floats)
    noise_level: float = 0.05
    pixel_noise: float = 0.05
    cue_strength: float = 0.15     # brightness boost on sounding objects
    render_seed: int = 0
    clip_type: str = "easy"

    def __post_init__(self):
        if self.objects and not any(any(row) for row in self.schedule):
            raise DataError("at least one frame must have a sounding object")

    def to_json(self):
        d = asdict(self)
        d["objects"] = [asdict(o) for o in self.objects]
        d["audio_table"] = {str(k): list(map(float, v)) for k, v in self.audio_table.items()}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["canvas"] = tuple(d["canvas"])
        d["objects"] = [ObjectSpec(class_id=o["class_id"], shape=o["shape"],
                                   color=tuple(o["color"]), center=tuple(o["center"]),
                                   radius=o["radius"]) for o in d["objects"]]
        d["audio_table"] = {int(k): np.asarray(v, dtype=np.float64)
                            for k, v in d["audio_table"].items()}
        return cls(**d)


@dataclass
class SyntheticSample:
    frames: np.ndarray   # (T, H, W, 3) float32
    audio: np.ndarray    # (T, D_a) float32
    gt: np.ndarray       # (T, H, W) int labels
    spec: SceneSpec


@dataclass
class DatasetConfig:
    canvas: int = 64
    num_frames: int = 4
    num_classes: int = 5          # background + 4 object classes
    audio_dim: int = 16
    noise_level: float = 0.05
    pixel_noise: float = 0.03
    cue_strength: float = 0.15
    radius_min: int = 9
    radius_max: int = 16
    # Hue jitter between the two same-class objects in a "case1" clip.  Wider
    # than the generic per-object jitter so the twins' patch features form two
    # distinct clusters (they stay the same class and clearly similar).
    twin_jitter: float = 0.08
    # Per-object brightness scale range. Each object's base color is scaled by
    # a random factor from this range (case1 twins share one factor), so the
    # absolute brightness of a sounding object overlaps the brightness of a
    # silent one and telling twins apart requires comparing them.
    brightness_range: tuple = (0.5, 1.05)


def class_audio_table(cfg: DatasetConfig, master_seed):
    """Unit-norm base descriptor per object class, shared across the dataset."""
    rng = make_rng(derive_seed(master_seed, 0xA0D10))
    table = {}
    for c in range(1, cfg.num_classes):
        v = rng.standard_normal(cfg.audio_dim)
        table[c] = v / np.linalg.norm(v)
    return table


def _shape_mask(shape, center, radius, h, w):
    yy, xx = np.mgrid[:h, :w]
    dy = yy - center[0]
    dx = xx - center[1]
    if shape == "disk":
        return dy * dy + dx * dx <= radius * radius
    if shape == "square":
        return np.maximum(np.abs(dy), np.abs(dx)) <= radius
    # upward triangle: width grows linearly from apex to base
    return (dy >= -radius) & (dy <= radius) & (np.abs(dx) <= (dy + radius) * 0.6)


def render(spec: SceneSpec):
    """Draw the scene back-to-front and synthesize per-frame audio descriptors."""
    h, w = spec.canvas
    t_len = spec.num_frames
    rng = make_rng(spec.render_seed)
    audio_dim = len(next(iter(spec.audio_table.values()))) if spec.audio_table else 1

    frames = np.full((t_len, h, w, 3), 0.12, dtype=np.float64)
    gt = np.zeros((t_len, h, w), dtype=np.int64)
    masks = [_shape_mask(o.shape, o.center, o.radius, h, w) for o in spec.objects]

    for t in range(t_len):
        for obj, mask, sched in zip(spec.objects, masks, spec.schedule):
            sounding = bool(sched[t])
            color = np.asarray(obj.color, dtype=np.float64)
            if sounding:
                color = color * (1.0 + spec.cue_strength)
            frames[t][mask] = color
            gt[t][mask] = obj.class_id if sounding else 0
    frames += rng.normal(0.0, spec.pixel_noise, size=frames.shape)

    audio = np.zeros((t_len, audio_dim), dtype=np.float64)
    for t in range(t_len):
        for obj, sched in zip(spec.objects, spec.schedule):
            if sched[t]:
                audio[t] += spec.audio_table[obj.class_id]
    audio += rng.normal(0.0, spec.noise_level, size=audio.shape)

    return SyntheticSample(frames=frames.astype(np.float32),
                           audio=audio.astype(np.float32), gt=gt, spec=spec)


def _random_center(rng, cfg, radius):
    lo = radius
    hi = cfg.canvas - radius
    return (int(rng.integers(lo, hi)), int(rng.integers(lo, hi)))


def _jitter_color(rng, base, amount=0.04):
    return tuple(float(np.clip(c + rng.normal(0.0, amount), 0.0, 1.0)) for c in base)


def _scaled_base(rng, cfg, class_id, scale=None):
    """Class base color under a random per-object brightness factor."""
    if scale is None:
        scale = float(rng.uniform(*cfg.brightness_range))
    base = PALETTE[(class_id - 1) % len(PALETTE)]
    return tuple(c * scale for c in base), scale


def _spec_common(cfg, render_seed, clip_type, objects, schedule, table):
    return SceneSpec(canvas=(cfg.canvas, cfg.canvas), num_frames=cfg.num_frames,
                     objects=objects, schedule=schedule, audio_table=table,
                     noise_level=cfg.noise_level, pixel_noise=cfg.pixel_noise,
                     cue_strength=cfg.cue_strength, render_seed=render_seed,
                     clip_type=clip_type)


def generate_easy(rng, cfg: DatasetConfig, table=None):
    """One or two distinct-class objects with constant sounding states."""
    table = table if table is not None else class_audio_table(cfg, int(rng.integers(1 << 31)))
    n_obj = int(rng.integers(1, 3))
    classes = rng.choice(np.arange(1, cfg.num_classes), size=n_obj, replace=False)
    objects, schedule = [], []
    for c in classes:
        r = int(rng.integers(cfg.radius_min, cfg.radius_max + 1))
        base, _ = _scaled_base(rng, cfg, int(c))
        objects.append(ObjectSpec(class_id=int(c), shape=str(rng.choice(SHAPES)),
                                  color=_jitter_color(rng, base),
                                  center=_random_center(rng, cfg, r), radius=r))
        schedule.append([bool(rng.random() < 0.7)] * cfg.num_frames)
    if not any(s[0] for s in schedule):
        schedule[0] = [True] * cfg.num_frames
    return _spec_common(cfg, int(rng.integers(1 << 62)), "easy", objects, schedule, table)


def generate_case1(rng, cfg: DatasetConfig, table=None):
    """Two same-class, same-shape, similar-color objects; exactly one of
    them sounds, the same one in every frame."""
    table = table if table is not None else class_audio_table(cfg, int(rng.integers(1 << 31)))
    c = int(rng.integers(1, cfg.num_classes))
    shape = str(rng.choice(SHAPES))
    # twins share one brightness factor: they must stay visually identical
    base, _ = _scaled_base(rng, cfg, c)
    r1 = int(rng.integers(cfg.radius_min, cfg.radius_max + 1))
    r2 = int(rng.integers(cfg.radius_min, cfg.radius_max + 1))
    # Place the twins near each other (partial overlap allowed, identity not):
    # the pair must land in shared groups so the in-group relevance weighting
    # can compare them; far-apart twins fall into unrelated groups and the
    # comparison never forms.
    center1 = _random_center(rng, cfg, max(r1, r2) + 2)
    for _ in range(64):
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.9 * (r1 + r2), 1.5 * (r1 + r2))
        center2 = (int(np.clip(center1[0] + dist * np.sin(ang), r2, cfg.canvas - r2)),
                   int(np.clip(center1[1] + dist * np.cos(ang), r2, cfg.canvas - r2)))
        gap = np.hypot(center2[0] - center1[0], center2[1] - center1[1])
        if 0.5 * (r1 + r2) <= gap <= 1.5 * (r1 + r2):
            break
    objects = [
        ObjectSpec(class_id=c, shape=shape,
                   color=_jitter_color(rng, base, cfg.twin_jitter),
                   center=center1, radius=r1),
        ObjectSpec(class_id=c, shape=shape,
                   color=_jitter_color(rng, base, cfg.twin_jitter),
                   center=center2, radius=r2),
    ]
    # The sounding twin is fixed for the whole clip.  A mid-clip switch would
    # leak its identity through the per-position brightness change over time;
    # keeping it constant forces a comparison between the two objects.
    which = int(rng.integers(0, 2))
    sched = np.zeros((2, cfg.num_frames), dtype=bool)
    sched[which, :] = True
    return _spec_common(cfg, int(rng.integers(1 << 62)), "case1", objects,
                        sched.tolist(), table)


def generate_case2(rng, cfg: DatasetConfig, table=None):
    """Sounding state switches: at least one on->off and one off->on transition."""
    if cfg.num_frames < 3:
        raise DataError("case2 needs at least 3 frames")
    table = table if table is not None else class_audio_table(cfg, int(rng.integers(1 << 31)))
    n_obj = int(rng.integers(1, 3))
    classes = rng.choice(np.arange(1, cfg.num_classes), size=n_obj, replace=False)
    objects, schedule = [], []
    for j, c in enumerate(classes):
        r = int(rng.integers(cfg.radius_min, cfg.radius_max + 1))
        base, _ = _scaled_base(rng, cfg, int(c))
        objects.append(ObjectSpec(class_id=int(c), shape=str(rng.choice(SHAPES)),
                                  color=_jitter_color(rng, base),
                                  center=_random_center(rng, cfg, r), radius=r))
        if j == 0:
            while True:
                row = rng.random(cfg.num_frames) < 0.5
                diff = np.diff(row.astype(int))
                if (diff == 1).any() and (diff == -1).any():
                    break
            schedule.append(row.tolist())
        else:
            schedule.append([bool(rng.random() < 0.5)] * cfg.num_frames)
    return _spec_common(cfg, int(rng.integers(1 << 62)), "case2", objects, schedule, table)


_GENERATORS = {"easy": generate_easy, "case1": generate_case1, "case2": generate_case2}


def _type_counts(n_clips, mix):
    if abs(sum(mix) - 1.0) > 1e-9:
        raise DataError(f"mix fractions must sum to 1, got {mix}")
    raw = [f * n_clips for f in mix]
    counts = [int(np.floor(r)) for r in raw]
    # largest remainder for the leftover clips
    rema = sorted(range(len(mix)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in range(n_clips - sum(counts)):
        counts[rema[i % len(mix)]] += 1
    return counts


def _stratified_splits(types, fracs=(0.70, 0.15, 0.15)):
    """70/15/15 split computed per clip type, so every split carries the same
    scenario mix (a clustered shuffle would otherwise starve a split of one
    type).  Largest-remainder rounding within each type; deterministic."""
    splits = {"train": [], "val": [], "test": []}
    names = list(splits)
    by_type = {}
    for i, t in enumerate(types):
        by_type.setdefault(t, []).append(i)
    for t in sorted(by_type):
        idx = by_type[t]
        raw = [f * len(idx) for f in fracs]
        counts = [int(np.floor(r)) for r in raw]
        order = sorted(range(3), key=lambda j: (-(raw[j] - counts[j]), j))
        for j in range(len(idx) - sum(counts)):
            counts[order[j % 3]] += 1
        pos = 0
        for name, cnt in zip(names, counts):
            splits[name] += idx[pos:pos + cnt]
            pos += cnt
    for name in names:
        splits[name].sort()
    return splits


def generate_dataset(master_seed, n_clips, mix=(0.4, 0.3, 0.3), cfg: DatasetConfig | None = None):
    """Clips with a deterministic 70/15/15 split, stratified by clip type.

    ``mix`` gives the (easy, case1, case2) fractions.  Each clip gets its own
    seed derived from the master seed, so generation is order-independent.
    Returns (samples, manifest dict).
    """
    if n_clips < 10:
        raise DataError(f"need at least 10 clips, got {n_clips}")
    cfg = cfg or DatasetConfig()
    counts = _type_counts(n_clips, mix)
    types = [t for t, c in zip(CLIP_TYPES, counts) for _ in range(c)]
    make_rng(derive_seed(master_seed, 0x5C0FF)).shuffle(types)
    table = class_audio_table(cfg, master_seed)

    samples = []
    for i, ctype in enumerate(types):
        rng = make_rng(derive_seed(master_seed, i))
        spec = _GENERATORS[ctype](rng, cfg, table)
        samples.append(render(spec))

    manifest = {
        "master_seed": int(master_seed),
        "n_clips": int(n_clips),
        "mix": list(mix),
        "types": types,
        "splits": _stratified_splits(types),
        "num_classes": cfg.num_classes,
        "audio_dim": cfg.audio_dim,
        "canvas": cfg.canvas,
        "num_frames": cfg.num_frames,
    }
    return samples, manifest


def save_dataset(directory, samples, manifest):
    os.makedirs(directory, exist_ok=True)
    for i, s in enumerate(samples):
        clip_dir = os.path.join(directory, f"clip_{i:04d}")
        os.makedirs(clip_dir, exist_ok=True)
        storage.write_tensor(os.path.join(clip_dir, "frames.avtk"), s.frames)
        storage.write_tensor(os.path.join(clip_dir, "audio.avtk"), s.audio)
        storage.write_tensor(os.path.join(clip_dir, "gt.avtk"), s.gt.astype(np.float32))
        with open(os.path.join(clip_dir, "spec.json"), "w") as fh:
            fh.write(s.spec.to_json())
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_manifest(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        return json.load(fh)


def load_clip(directory, index):
    clip_dir = os.path.join(directory, f"clip_{index:04d}")
    frames = storage.read_tensor(os.path.join(clip_dir, "frames.avtk"))
    audio = storage.read_tensor(os.path.join(clip_dir, "audio.avtk"))
    gt = storage.read_tensor(os.path.join(clip_dir, "gt.avtk")).astype(np.int64)
    with open(os.path.join(clip_dir, "spec.json")) as fh:
        spec = SceneSpec.from_json(fh.read())
    return SyntheticSample(frames=frames, audio=audio, gt=gt, spec=spec)


def load_dataset(directory, split=None):
    """Load (samples, types, indices) for one split, or everything."""
    manifest = load_manifest(directory)
    indices = manifest["splits"][split] if split else list(range(manifest["n_clips"]))
    samples = [load_clip(directory, i) for i in indices]
    types = [manifest["types"][i] for i in indices]
    return samples, types, indices
