"""Video datasets: synthetic phantoms and directory-based real scans.

Seeding of the synthetic sets is hierarchical: one base seed spawns
independent child sequences per split, and each split spawns one sequence
per video. Generating video 17 of the test split therefore never depends
on how many train videos were drawn before it, and regenerating any split
from the same base seed is bit-for-bit reproducible.

Real scans load from a directory holding a manifest.json that lists one
entry per video ({"id", "file"}), each file a (T, H, W) .npy stack of
Cartesian frames. Frames are normalized to [0, 1], resized to the grid's
Cartesian extent when needed, and resampled into polar coordinates.
Corrupt entries are skipped and recorded rather than failing the load.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, RejectedInputError
from .phantom import PhantomConfig, generate_video
from .polar import cartesian_to_polar

SPLITS = ("train", "val", "test")

SOURCES = ("synthetic_phantom", "echonet_format")


@dataclass(frozen=True)
class VideoDataset:
    """An ordered collection of (video_id, frames) pairs.

    frames: (T, n_r, n_gamma) float32 in [0, 1], T >= 2.
    skipped: (video_id, reason) pairs dropped during loading.
    """

    videos: tuple
    split: str
    source: str
    skipped: tuple = ()

    def __post_init__(self):
        if self.source not in SOURCES:
            raise RejectedInputError(
                f"unknown source {self.source!r}; expected one of {SOURCES}")
        ids = [vid for vid, _ in self.videos]
        if len(set(ids)) != len(ids):
            raise RejectedInputError("video ids must be unique")
        for vid, frames in self.videos:
            if frames.ndim != 3 or frames.shape[0] < 2:
                raise RejectedInputError(
                    f"video {vid}: need a (T>=2, n_r, n_gamma) stack, got "
                    f"{frames.shape}")
            if not np.all(np.isfinite(frames)):
                raise RejectedInputError(f"video {vid}: non-finite frames")
            lo, hi = float(frames.min()), float(frames.max())
            if lo < -1e-6 or hi > 1.0 + 1e-6:
                raise RejectedInputError(
                    f"video {vid}: frames outside [0, 1] ({lo:.3g}, {hi:.3g})")

    def __len__(self):
        return len(self.videos)

    def __iter__(self):
        return iter(self.videos)

    @property
    def n_frames(self):
        return sum(frames.shape[0] for _, frames in self.videos)


def split_seed(base_seed, split):
    if split not in SPLITS:
        raise RejectedInputError(
            f"unknown split {split!r}; expected one of {SPLITS}")
    root = np.random.SeedSequence(int(base_seed))
    return dict(zip(SPLITS, root.spawn(len(SPLITS))))[split]


def video_id(split, index):
    return f"{split}-{index:04d}"


def iter_split(spec, split, base_seed, n_videos, n_frames, cfg=None):
    """Yield (video_id, frames) lazily; frames is (n_frames, n_r, n_gamma)."""
    if n_videos < 1:
        raise RejectedInputError("n_videos must be positive")
    cfg = cfg or PhantomConfig()
    children = split_seed(base_seed, split).spawn(n_videos)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        yield video_id(split, i), generate_video(spec, n_frames, rng, cfg)


def synth_phantom_dataset(spec, split, base_seed, n_videos, n_frames,
                          cfg=None):
    """Materialize one phantom split as a VideoDataset."""
    videos = tuple(iter_split(spec, split, base_seed, n_videos, n_frames, cfg))
    return VideoDataset(videos=videos, split=split, source="synthetic_phantom")


def _normalize_stack(stack):
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim != 3:
        raise ValueError(f"expected a (T, H, W) stack, got {stack.shape}")
    if not np.all(np.isfinite(stack)):
        raise ValueError("stack contains non-finite values")
    lo, hi = float(stack.min()), float(stack.max())
    if hi > 1.0 + 1e-6 or lo < -1e-6:
        # assume raw intensity units; rescale to [0, 1]
        if hi == lo:
            return np.zeros_like(stack)
        stack = (stack - lo) / (hi - lo)
    return np.clip(stack, 0.0, 1.0)


def _resize_frame(frame, shape):
    if frame.shape == shape:
        return frame
    from skimage.transform import resize
    return resize(frame, shape, order=1, mode="edge",
                  anti_aliasing=frame.shape[0] > shape[0],
                  preserve_range=True)


def load_echonet_format(path, spec, split="test", limit=None):
    """Load a directory of Cartesian .npy video stacks into polar frames.

    Requires <path>/manifest.json: a list of {"id": str, "file": str}. Each
    stack is normalized, resized to the grid's Cartesian extent, and
    resampled to (T, n_r, n_gamma). Entries that fail to load are skipped
    with a reason. An empty manifest produces an empty dataset.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ConfigurationError(
            f"no manifest.json under {root}; cannot interpret the directory "
            f"as a video dataset")
    try:
        entries = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"manifest.json is not valid JSON: {exc}")
    if not isinstance(entries, list):
        raise ConfigurationError("manifest.json must hold a list of entries")
    if limit is not None:
        entries = entries[:int(limit)]
    cart_shape = (spec.cart_h, spec.cart_w)
    videos, skipped = [], []
    for entry in entries:
        vid = str(entry.get("id", entry.get("file", "?")))
        try:
            stack = np.load(root / entry["file"], allow_pickle=False)
            stack = _normalize_stack(stack)
            polar = np.empty((stack.shape[0], spec.n_r, spec.n_gamma),
                             dtype=np.float32)
            for t in range(stack.shape[0]):
                cart = _resize_frame(stack[t], cart_shape)
                polar[t] = cartesian_to_polar(cart, spec).astype(np.float32)
            if polar.shape[0] < 2:
                raise ValueError("videos need at least 2 frames")
            videos.append((vid, np.clip(polar, 0.0, 1.0)))
        except (KeyError, OSError, ValueError) as exc:
            skipped.append((vid, str(exc)))
    return VideoDataset(videos=tuple(videos), split=split,
                        source="echonet_format", skipped=tuple(skipped))


def save_videos(path, dataset, meta=None):
    """Write a VideoDataset as an .npz bundle plus a JSON metadata blob."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"video_{i:05d}": np.asarray(frames, dtype=np.float32)
              for i, (_, frames) in enumerate(dataset.videos)}
    meta = dict(meta or {})
    meta.update({"split": dataset.split, "source": dataset.source,
                 "ids": [vid for vid, _ in dataset.videos]})
    np.savez_compressed(path, meta=json.dumps(meta, sort_keys=True), **arrays)
    return path


def load_videos(path):
    """Inverse of save_videos; returns (VideoDataset, meta)."""
    path = Path(path)
    if not path.exists():
        raise RejectedInputError(f"dataset not found: {path}")
    with np.load(path, allow_pickle=False) as bundle:
        try:
            meta = json.loads(str(bundle["meta"]))
            ids = meta["ids"]
            videos = tuple(
                (vid, bundle[f"video_{i:05d}"].astype(np.float32))
                for i, vid in enumerate(ids))
        except KeyError as exc:
            raise RejectedInputError(f"{path} is not a video bundle: {exc}")
    dataset = VideoDataset(videos=videos, split=meta.get("split", "test"),
                           source=meta.get("source", "synthetic_phantom"))
    return dataset, meta
