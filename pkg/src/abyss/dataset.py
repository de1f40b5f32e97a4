"""Corpus ingestion: frame sampling, session-disjoint splits, patch pairs.

A corpus is a directory whose immediate subdirectories are sessions (one per
recording/trawl); each session holds still images and/or video files. Frames
are sampled at a uniform stride over the session's concatenated frame
sequence (sources sorted by name; a still contributes one frame, a video its
full frame count). Splitting assigns whole sessions to train or test so the
two sides never share a recording.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .imaging import ImageU8, bicubic_resize, decode_jpeg, encode_budget_jpeg, read_image

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}
VIDEO_EXTENSIONS = {".avi", ".mp4", ".mov", ".mkv"}

HR_SIZE = 256
LR_SIZE = 32
SCALE = HR_SIZE // LR_SIZE


@dataclass(frozen=True)
class FrameRecord:
    session_id: str
    source_path: str
    frame_index: int


@dataclass(frozen=True)
class SplitManifest:
    train: tuple[FrameRecord, ...]
    test: tuple[FrameRecord, ...]
    seed: int
    ratio: float

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ValueError(f"ratio must be in (0, 1), got {self.ratio}")
        train_sessions = {r.session_id for r in self.train}
        test_sessions = {r.session_id for r in self.test}
        overlap = train_sessions & test_sessions
        if overlap:
            raise ValueError(f"train/test share sessions: {sorted(overlap)}")


@dataclass(frozen=True)
class PatchPair:
    """Aligned training sample: 256x256 HR patch and its 32x32 LR counterpart."""

    hr: ImageU8
    lr: ImageU8
    degraded: bool

    def __post_init__(self):
        if (self.hr.width, self.hr.height) != (
            SCALE * self.lr.width,
            SCALE * self.lr.height,
        ):
            raise ValueError(
                f"hr dims {(self.hr.width, self.hr.height)} are not "
                f"{SCALE}x the lr dims {(self.lr.width, self.lr.height)}"
            )


def _video_frame_count(path: Path) -> int:
    cap = cv2.VideoCapture(str(path))
    try:
        if not cap.isOpened():
            raise IOError(f"cannot open video {path}")
        n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
    finally:
        cap.release()
    if n <= 0:
        raise IOError(f"no frames reported for video {path}")
    return n


def _image_readable(path: Path) -> bool:
    try:
        with Image.open(path) as img:
            img.verify()
        return True
    except Exception:
        return False


def sample_frames(
    corpus_root: str | Path, stride: int
) -> tuple[list[FrameRecord], list[str]]:
    """Record every stride-th frame of each session.

    The stride position runs over the session's concatenated frame sequence,
    so a directory of stills is thinned the same way a long video is. Returns
    (records, warnings); unreadable files are skipped and reported in the
    warnings list rather than failing the scan. An unreadable still keeps its
    slot in the sequence; an unreadable video is dropped entirely since its
    frame count is unknown.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    root = Path(corpus_root)
    if not root.is_dir():
        raise ValueError(f"corpus root {root} is not a directory")
    records: list[FrameRecord] = []
    warnings: list[str] = []
    for session_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        session_id = session_dir.name
        pos = 0
        for path in sorted(session_dir.rglob("*")):
            ext = path.suffix.lower()
            if ext in IMAGE_EXTENSIONS:
                if pos % stride == 0:
                    if _image_readable(path):
                        records.append(FrameRecord(session_id, str(path), 0))
                    else:
                        warnings.append(f"unreadable image skipped: {path}")
                pos += 1
            elif ext in VIDEO_EXTENSIONS:
                try:
                    n_frames = _video_frame_count(path)
                except IOError as exc:
                    warnings.append(f"unreadable video skipped: {exc}")
                    continue
                for local in range(n_frames):
                    if pos % stride == 0:
                        records.append(FrameRecord(session_id, str(path), local))
                    pos += 1
    return records, warnings


def split_by_session(
    records: list[FrameRecord], ratio: float, seed: int
) -> SplitManifest:
    """Seeded whole-session assignment: shuffle sessions, fill train until its
    frame count reaches ratio x total, rest to test. Never mixes a session."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    sessions = sorted({r.session_id for r in records})
    if len(sessions) < 2:
        raise ValueError(
            "need at least 2 sessions to split without leakage, "
            f"got {len(sessions)}"
        )
    counts = {s: 0 for s in sessions}
    for r in records:
        counts[r.session_id] += 1
    order = list(sessions)
    random.Random(seed).shuffle(order)
    total = len(records)
    train_sessions: set[str] = set()
    accumulated = 0
    for s in order:
        if accumulated >= ratio * total:
            break
        train_sessions.add(s)
        accumulated += counts[s]
    train = tuple(r for r in records if r.session_id in train_sessions)
    test = tuple(r for r in records if r.session_id not in train_sessions)
    return SplitManifest(train=train, test=test, seed=seed, ratio=ratio)


_HEADER_RE = re.compile(r"^#split seed=(-?\d+) ratio=([0-9.eE+-]+)$")


def save_manifest(manifest: SplitManifest, path: str | Path) -> None:
    """Write the auditable line format: a `#split` header, then one
    `session_id<TAB>source_path<TAB>frame_index` record per line under
    `#train` / `#test` section markers."""
    lines = [f"#split seed={manifest.seed} ratio={manifest.ratio!r}"]
    for name, side in (("#train", manifest.train), ("#test", manifest.test)):
        lines.append(name)
        for r in side:
            lines.append(f"{r.session_id}\t{r.source_path}\t{r.frame_index}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> SplitManifest:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise ValueError(f"manifest {path} is empty")
    m = _HEADER_RE.match(lines[0])
    if not m:
        raise ValueError(f"manifest {path} has no valid #split header")
    seed, ratio = int(m.group(1)), float(m.group(2))
    sides: dict[str, list[FrameRecord]] = {"#train": [], "#test": []}
    current: list[FrameRecord] | None = None
    for line in lines[1:]:
        if not line.strip():
            continue
        if line in sides:
            current = sides[line]
            continue
        if current is None:
            raise ValueError(f"record before section marker in {path}: {line!r}")
        session_id, source_path, idx = line.split("\t")
        current.append(FrameRecord(session_id, source_path, int(idx)))
    return SplitManifest(
        train=tuple(sides["#train"]), test=tuple(sides["#test"]), seed=seed, ratio=ratio
    )


@lru_cache(maxsize=256)
def _cached_frame(source_path: str, frame_index: int) -> ImageU8:
    path = Path(source_path)
    if path.suffix.lower() in VIDEO_EXTENSIONS:
        cap = cv2.VideoCapture(source_path)
        try:
            if not cap.isOpened():
                raise IOError(f"cannot open video {source_path}")
            cap.set(cv2.CAP_PROP_POS_FRAMES, frame_index)
            ok, frame = cap.read()
        finally:
            cap.release()
        if not ok:
            raise IOError(f"cannot read frame {frame_index} of {source_path}")
        return ImageU8(np.ascontiguousarray(frame[:, :, ::-1]))
    return read_image(path)


def load_frame(record: FrameRecord) -> ImageU8:
    """Decode the referenced frame as 8-bit RGB (small LRU cache behind it)."""
    return _cached_frame(record.source_path, record.frame_index)


def make_pair(
    hr_source: ImageU8, crop_seed: int, degrade: bool, budget: int = 1024
) -> PatchPair:
    """Cut a seeded random 256x256 crop and derive its 32x32 thumbnail.

    With degrade on, the thumbnail additionally passes through the budgeted
    JPEG round trip so training sees the representation the link delivers.
    """
    if hr_source.width < HR_SIZE or hr_source.height < HR_SIZE:
        raise ValueError(
            f"source {hr_source.width}x{hr_source.height} smaller than "
            f"{HR_SIZE}x{HR_SIZE}"
        )
    rng = np.random.default_rng(crop_seed)
    y0 = int(rng.integers(0, hr_source.height - HR_SIZE + 1))
    x0 = int(rng.integers(0, hr_source.width - HR_SIZE + 1))
    hr = ImageU8(hr_source.data[y0 : y0 + HR_SIZE, x0 : x0 + HR_SIZE])
    lr = bicubic_resize(hr, LR_SIZE, LR_SIZE)
    if degrade:
        lr = decode_jpeg(encode_budget_jpeg(lr, budget))
    return PatchPair(hr=hr, lr=lr, degraded=degrade)
