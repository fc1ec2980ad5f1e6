"""Domain types, on-disk interchange formats, frame pre-sampling, and the
planted-saliency synthetic dataset generator.

All array payloads are little-endian float32, row-major.  Generated data is
float32 from the start so that write -> read round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError

DATASET_FORMAT = "tsq-dataset-v1"
EMBEDDINGS_FORMAT = "tsq-embeddings-v1"

MANIFEST_NAME = "manifest.jsonl"
PAYLOAD_NAME = "payload.bin"
EMBEDDINGS_MANIFEST_NAME = "embeddings.json"
EMBEDDINGS_PAYLOAD_NAME = "embeddings.bin"


def _as_locked_f32(a, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise FormatError(f"{name}: non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FeatureSequence:
    """T x d matrix of per-frame visual features for one video."""

    frames: np.ndarray
    video_id: str

    def __post_init__(self):
        object.__setattr__(self, "frames", _as_locked_f32(self.frames, f"features[{self.video_id}]"))
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise ConfigError(f"features[{self.video_id}]: expected non-empty T x d matrix")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class ObjectScoreSequence:
    """T x C_o matrix of per-frame object probabilities, entries in [0, 1]."""

    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scores", _as_locked_f32(self.scores, "object scores"))
        if self.scores.ndim != 2:
            raise ConfigError("object scores: expected T x C_o matrix")
        if (self.scores < 0.0).any() or (self.scores > 1.0).any():
            raise FormatError("object scores: entries outside [0, 1]")

    @property
    def length(self) -> int:
        return self.scores.shape[0]

    @property
    def object_count(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class WordEmbeddingTable:
    """One embedding row per object name, C_o x D."""

    rows: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "rows", _as_locked_f32(self.rows, "word embeddings"))
        if self.rows.ndim != 2:
            raise ConfigError("word embeddings: expected C_o x D matrix")
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
            if len(self.names) != self.rows.shape[0]:
                raise ConfigError("word embeddings: name count does not match row count")

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class VideoRecord:
    """A single video: features, object scores, label, and (for synthetic
    data) the planted ground-truth salient frame indices."""

    features: FeatureSequence
    objects: ObjectScoreSequence
    label: int
    planted_salient: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.objects.length != self.features.length:
            raise ConfigError(
                f"video {self.video_id}: object scores cover {self.objects.length} frames, "
                f"features cover {self.features.length}"
            )
        if self.label < 0:
            raise ConfigError(f"video {self.video_id}: negative label")
        if self.planted_salient is not None:
            planted = tuple(sorted(int(i) for i in self.planted_salient))
            object.__setattr__(self, "planted_salient", planted)
            if planted and (planted[0] < 0 or planted[-1] >= self.features.length):
                raise ConfigError(f"video {self.video_id}: planted indices out of range")

    @property
    def video_id(self) -> str:
        return self.features.video_id

    @property
    def length(self) -> int:
        return self.features.length


@dataclass(frozen=True)
class TsqEmbeddingSet:
    """C x dim matrix of per-category query embeddings plus a modality tag."""

    embeddings: np.ndarray
    modality: str  # "visual" | "textual"

    def __post_init__(self):
        emb = np.ascontiguousarray(self.embeddings, dtype=np.float64)
        if not np.isfinite(emb).all():
            raise FormatError("query embeddings: non-finite entries")
        emb.flags.writeable = False
        object.__setattr__(self, "embeddings", emb)
        if emb.ndim != 2 or emb.shape[0] < 2:
            raise ConfigError("query embeddings: expected C x dim matrix with C >= 2")
        if self.modality not in ("visual", "textual"):
            raise ConfigError(f"unknown modality {self.modality!r}")

    @property
    def num_classes(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class SelectionBudget:
    """Pre-sample T frames, keep K of them."""

    presample_count: int
    select_count: int

    def __post_init__(self):
        if not (1 <= self.select_count <= self.presample_count):
            raise ConfigError(
                f"budget: need 1 <= K <= T, got K={self.select_count}, T={self.presample_count}"
            )


def presample_and_pad(raw_frame_count: int, target: int) -> list[int]:
    """Indices of the frames kept after uniform pre-sampling to `target`.

    Videos longer than `target` are sampled at floor(j * raw / target)
    (start-aligned); shorter ones are padded by cyclic repetition.
    """
    if raw_frame_count < 1:
        raise ConfigError("cannot pre-sample an empty video")
    if target < 1:
        raise ConfigError("pre-sample target must be >= 1")
    if raw_frame_count >= target:
        return [j * raw_frame_count // target for j in range(target)]
    return [j % raw_frame_count for j in range(target)]


# ---------------------------------------------------------------------------
# Synthetic planted-saliency data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    classes: int = 10
    frames: int = 16
    feature_dim: int = 16
    object_count: int = 16
    embed_dim: int = 12
    per_class: int = 40
    salient_per_video: int = 4
    noise: float = 0.5
    objects_per_class: int = 3
    object_boost: float = 1.75
    confuser_fraction: float = 0.5  # distractors drawn from other classes vs pure noise

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError("need at least 2 classes")
        for name in ("frames", "feature_dim", "object_count", "embed_dim", "per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not (1 <= self.salient_per_video <= self.frames):
            raise ConfigError("salient_per_video must be in [1, frames]")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.objects_per_class < 1:
            raise ConfigError("objects_per_class must be >= 1")
        if not (0.0 <= self.confuser_fraction <= 1.0):
            raise ConfigError("confuser_fraction must be in [0, 1]")


@dataclass
class Dataset:
    """Videos plus the textual side tables they were generated/exported with."""

    videos: list[VideoRecord]
    word_table: WordEmbeddingTable | None = None
    class_embeddings: np.ndarray | None = None
    class_names: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        return 1 + max((v.label for v in self.videos), default=-1)


@dataclass
class SyntheticDataset(Dataset):
    """Generated dataset; also carries the ground-truth class directions
    (generator internals, not serialized)."""

    class_directions: np.ndarray | None = None
    config: SynthConfig | None = None


def generate_synthetic_dataset(config: SynthConfig, seed: int) -> SyntheticDataset:
    """Deterministic planted-saliency dataset.

    Per class: a unit feature direction and a small object subset.  Each
    video plants `salient_per_video` frames on its class direction (plus
    noise) with object mass boosted on the class subset; remaining frames
    are drawn from other classes' directions or pure noise.
    """
    rng = np.random.default_rng(seed)
    C, T, d = config.classes, config.frames, config.feature_dim
    C_o, D = config.object_count, config.embed_dim
    k_star = config.salient_per_video
    sigma = config.noise
    n_obj = min(config.objects_per_class, C_o)

    directions = rng.standard_normal((C, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    word_rows = rng.standard_normal((C_o, D)) / np.sqrt(D)

    perm = rng.permutation(C_o)
    subsets = [[int(perm[(c * n_obj + j) % C_o]) for j in range(n_obj)] for c in range(C)]

    class_rows = np.stack([word_rows[subsets[c]].mean(axis=0) for c in range(C)])
    class_rows = class_rows + 0.05 * rng.standard_normal((C, D))

    object_names = [f"object_{o:03d}" for o in range(C_o)]
    class_names = [f"class_{c:03d}" for c in range(C)]

    videos: list[VideoRecord] = []
    for c in range(C):
        for v in range(config.per_class):
            salient = np.sort(rng.choice(T, size=k_star, replace=False))
            salient_set = set(int(i) for i in salient)

            # noise draws are scaled to ~unit norm so `sigma` reads as a
            # noise-to-signal ratio against the unit class directions
            frames = np.empty((T, d))
            logits = 0.5 * rng.standard_normal((T, C_o))
            for t in range(T):
                if t in salient_set:
                    frames[t] = directions[c] + sigma * rng.standard_normal(d) / np.sqrt(d)
                    logits[t, subsets[c]] += config.object_boost
                elif C > 1 and rng.random() < config.confuser_fraction:
                    other = int(rng.integers(C - 1))
                    other = other if other < c else other + 1
                    frames[t] = directions[other] + sigma * rng.standard_normal(d) / np.sqrt(d)
                    logits[t, subsets[other]] += config.object_boost
                else:
                    frames[t] = rng.standard_normal(d) / np.sqrt(d)

            shifted = logits - logits.max(axis=1, keepdims=True)
            expd = np.exp(shifted)
            scores = expd / expd.sum(axis=1, keepdims=True)

            videos.append(
                VideoRecord(
                    features=FeatureSequence(frames.astype(np.float32), f"synth-{c:03d}-{v:03d}"),
                    objects=ObjectScoreSequence(scores.astype(np.float32)),
                    label=c,
                    planted_salient=tuple(int(i) for i in salient),
                )
            )

    return SyntheticDataset(
        videos=videos,
        word_table=WordEmbeddingTable(word_rows.astype(np.float32), tuple(object_names)),
        class_embeddings=class_rows.astype(np.float32),
        class_names=class_names,
        class_directions=directions.astype(np.float32),
        config=config,
    )


def split_dataset(videos: list[VideoRecord], train_fraction: float, seed: int) -> tuple[list[VideoRecord], list[VideoRecord]]:
    """Deterministic per-class split into (train, heldout)."""
    if not (0.0 < train_fraction < 1.0):
        raise ConfigError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[VideoRecord]] = {}
    for vid in videos:
        by_class.setdefault(vid.label, []).append(vid)
    train: list[VideoRecord] = []
    heldout: list[VideoRecord] = []
    for label in sorted(by_class):
        group = by_class[label]
        order = rng.permutation(len(group))
        n_train = max(1, int(round(train_fraction * len(group))))
        n_train = min(n_train, len(group) - 1) if len(group) > 1 else 1
        for rank, idx in enumerate(order):
            (train if rank < n_train else heldout).append(group[idx])
    return train, heldout


# ---------------------------------------------------------------------------
# Interchange format: JSON-lines manifest + float32 payload
# ---------------------------------------------------------------------------

def write_manifest(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write a dataset directory: manifest.jsonl + payload.bin, plus the
    embedding table files when the dataset carries them."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dims = {(v.features.dim, v.objects.object_count) for v in dataset.videos}
    if len(dims) > 1:
        raise ConfigError(f"mixed feature/object dimensions across videos: {sorted(dims)}")
    d, c_o = dims.pop() if dims else (0, 0)

    has_embeddings = dataset.word_table is not None
    header = {
        "format": DATASET_FORMAT,
        "videos": len(dataset.videos),
        "d": d,
        "C_o": c_o,
        "classes": dataset.num_classes,
        "class_names": list(dataset.class_names),
        "payload": PAYLOAD_NAME,
        "embeddings": EMBEDDINGS_MANIFEST_NAME if has_embeddings else None,
    }

    lines = [json.dumps(header)]
    offset = 0
    chunks: list[bytes] = []
    for vid in dataset.videos:
        feat = vid.features.frames.astype("<f4").tobytes()
        obj = vid.objects.scores.astype("<f4").tobytes()
        lines.append(
            json.dumps(
                {
                    "id": vid.video_id,
                    "label": vid.label,
                    "T": vid.length,
                    "feat_offset": offset,
                    "feat_len": len(feat),
                    "obj_offset": offset + len(feat),
                    "obj_len": len(obj),
                    "planted": list(vid.planted_salient) if vid.planted_salient is not None else None,
                }
            )
        )
        chunks.append(feat)
        chunks.append(obj)
        offset += len(feat) + len(obj)

    (out / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
    (out / PAYLOAD_NAME).write_bytes(b"".join(chunks))

    if has_embeddings:
        write_embedding_table(
            out,
            dataset.word_table,
            dataset.class_embeddings,
            class_names=dataset.class_names,
        )
    return out


def read_manifest(path: str | Path) -> Dataset:
    """Read a dataset directory written by :func:`write_manifest`."""
    root = Path(path)
    manifest = root / MANIFEST_NAME if root.is_dir() else root
    if not manifest.exists():
        raise FormatError(f"no manifest at {manifest}")
    text = manifest.read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return Dataset(videos=[])

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise FormatError(f"malformed header: expected format {DATASET_FORMAT!r}")

    d = int(header["d"])
    c_o = int(header["C_o"])
    declared = int(header["videos"])
    records = lines[1:]
    if len(records) != declared:
        raise FormatError(f"header declares {declared} videos, manifest holds {len(records)}")

    payload = b""
    if declared:
        payload_path = manifest.parent / header.get("payload", PAYLOAD_NAME)
        if not payload_path.exists():
            raise FormatError(f"missing payload file {payload_path.name}")
        payload = payload_path.read_bytes()

    videos: list[VideoRecord] = []
    for line in records:
        try:
            rec = json.loads(line)
            rec_id = rec["id"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed record line: {exc}") from exc
        t = int(rec["T"])
        feat_off, feat_len = int(rec["feat_offset"]), int(rec["feat_len"])
        obj_off, obj_len = int(rec["obj_offset"]), int(rec["obj_len"])
        if feat_len != t * d * 4:
            raise FormatError(f"record {rec_id}: dimension mismatch, feature payload holds "
                              f"{feat_len // 4} floats for declared {t}x{d}")
        if obj_len != t * c_o * 4:
            raise FormatError(f"record {rec_id}: dimension mismatch, object payload holds "
                              f"{obj_len // 4} floats for declared {t}x{c_o}")
        if max(feat_off + feat_len, obj_off + obj_len) > len(payload):
            raise FormatError(f"record {rec_id}: payload truncated")
        frames = np.frombuffer(payload, dtype="<f4", count=t * d, offset=feat_off).reshape(t, d)
        scores = np.frombuffer(payload, dtype="<f4", count=t * c_o, offset=obj_off).reshape(t, c_o)
        if not np.isfinite(frames).all() or not np.isfinite(scores).all():
            raise FormatError(f"record {rec_id}: non-finite values in payload")
        planted = rec.get("planted")
        videos.append(
            VideoRecord(
                features=FeatureSequence(frames, rec_id),
                objects=ObjectScoreSequence(scores),
                label=int(rec["label"]),
                planted_salient=tuple(planted) if planted is not None else None,
            )
        )

    word_table = None
    class_rows = None
    if header.get("embeddings"):
        emb_path = manifest.parent / header["embeddings"]
        if emb_path.exists():
            word_table, class_rows, _names = read_embedding_table(manifest.parent)

    return Dataset(
        videos=videos,
        word_table=word_table,
        class_embeddings=class_rows,
        class_names=list(header.get("class_names", [])),
    )


def write_embedding_table(
    out_dir: str | Path,
    word_table: WordEmbeddingTable,
    class_rows: np.ndarray | None,
    class_names: list[str] | None = None,
) -> Path:
    """Embedding-table file: object rows first, then class-name rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    obj_rows = word_table.rows
    cls = np.zeros((0, word_table.dim), dtype=np.float32) if class_rows is None else np.asarray(class_rows, dtype=np.float32)
    if cls.size and cls.shape[1] != word_table.dim:
        raise ConfigError("class embedding dim differs from object embedding dim")
    names = list(word_table.names or [f"object_{i:03d}" for i in range(obj_rows.shape[0])])
    names += list(class_names or [f"class_{i:03d}" for i in range(cls.shape[0])])
    manifest = {
        "format": EMBEDDINGS_FORMAT,
        "rows": int(obj_rows.shape[0] + cls.shape[0]),
        "dim": int(word_table.dim),
        "object_rows": int(obj_rows.shape[0]),
        "class_rows": int(cls.shape[0]),
        "names": names,
        "payload": EMBEDDINGS_PAYLOAD_NAME,
    }
    (out / EMBEDDINGS_MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    payload = np.concatenate([obj_rows, cls], axis=0).astype("<f4").tobytes()
    (out / EMBEDDINGS_PAYLOAD_NAME).write_bytes(payload)
    return out / EMBEDDINGS_MANIFEST_NAME


def read_embedding_table(path: str | Path) -> tuple[WordEmbeddingTable, np.ndarray | None, list[str]]:
    """Returns (object word table, class rows or None, all names)."""
    root = Path(path)
    manifest = root / EMBEDDINGS_MANIFEST_NAME if root.is_dir() else root
    if not manifest.exists():
        raise FormatError(f"no embedding manifest at {manifest}")
    try:
        meta = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed embedding manifest: {exc}") from exc
    if meta.get("format") != EMBEDDINGS_FORMAT:
        raise FormatError(f"malformed embedding manifest: expected format {EMBEDDINGS_FORMAT!r}")
    rows, dim = int(meta["rows"]), int(meta["dim"])
    n_obj, n_cls = int(meta["object_rows"]), int(meta["class_rows"])
    if n_obj + n_cls != rows:
        raise FormatError("embedding manifest: object_rows + class_rows != rows")
    payload = (manifest.parent / meta.get("payload", EMBEDDINGS_PAYLOAD_NAME)).read_bytes()
    if len(payload) != rows * dim * 4:
        raise FormatError(f"embedding payload holds {len(payload) // 4} floats, expected {rows * dim}")
    table = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    names = list(meta.get("names", []))
    obj_names = tuple(names[:n_obj]) if names else None
    word = WordEmbeddingTable(table[:n_obj], obj_names)
    cls = table[n_obj:].copy() if n_cls else None
    return word, cls, names
