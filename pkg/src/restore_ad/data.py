"""Manifests, dataset repartitions, image loading and batch iteration.

A manifest is a CSV file with header ``id,path,label,split``. The split column
names the *pool* a record may be drawn from (``normal_train``,
``unlabeled_pool`` or ``test``); :func:`build_repartition` then samples the
normal training set, the unlabeled training set (at a requested anomaly
ratio) and a balanced test set from those pools.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

LABELS = ("normal", "abnormal")
RECORD_LABELS = ("normal", "abnormal", "unknown")
MANIFEST_SPLITS = ("normal_train", "unlabeled_pool", "test")
SPLITS = ("normal_train", "unlabeled_train", "test")
MANIFEST_HEADER = ("id", "path", "label", "split")


class DataError(ValueError):
    """Raised for malformed manifests, impossible repartitions and bad images."""


@dataclass(frozen=True)
class ImageRecord:
    id: str
    path: str
    label: str
    split: str
    # true label of an unlabeled_train record; never read by training code
    hidden_label: str | None = None

    def __post_init__(self):
        if self.label not in RECORD_LABELS:
            raise DataError(f"unknown label {self.label!r} for record {self.id!r}")
        if self.split not in SPLITS + MANIFEST_SPLITS:
            raise DataError(f"unknown split {self.split!r} for record {self.id!r}")
        if self.split == "normal_train" and self.label != "normal":
            raise DataError(f"record {self.id!r} in normal_train must be labeled normal")
        if self.split == "test" and self.label not in LABELS:
            raise DataError(f"test record {self.id!r} needs a normal/abnormal label")


@dataclass(frozen=True)
class SplitSizes:
    normal_train: int
    unlabeled: int
    test_normal: int
    test_abnormal: int


@dataclass
class DatasetRepartition:
    normal_train: list[ImageRecord]
    unlabeled_train: list[ImageRecord]
    test: list[ImageRecord]
    anomaly_ratio: float
    seed: int
    root: str = ""
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list[ImageRecord]:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def hidden_abnormal_count(self) -> int:
        return sum(r.hidden_label == "abnormal" for r in self.unlabeled_train)

    def summary(self) -> dict:
        n_u = len(self.unlabeled_train)
        n_abn = self.hidden_abnormal_count()
        return {
            "normal_train": len(self.normal_train),
            "unlabeled_train": n_u,
            "unlabeled_hidden_abnormal": n_abn,
            "hidden_anomaly_ratio": n_abn / n_u if n_u else 0.0,
            "test_normal": sum(r.label == "normal" for r in self.test),
            "test_abnormal": sum(r.label == "abnormal" for r in self.test),
            "anomaly_ratio": self.anomaly_ratio,
            "seed": self.seed,
        }

    def resolve(self, record: ImageRecord) -> Path:
        p = Path(record.path)
        if not p.is_absolute() and self.root:
            p = Path(self.root) / p
        return p

    def save(self, path: str | Path) -> None:
        payload = {
            "anomaly_ratio": self.anomaly_ratio,
            "seed": self.seed,
            "root": self.root,
            "meta": self.meta,
            "splits": {
                name: [asdict(r) for r in self.split(name)] for name in SPLITS
            },
        }
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetRepartition":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        splits = {name: [ImageRecord(**r) for r in payload["splits"][name]]
                  for name in SPLITS}
        rep = cls(anomaly_ratio=payload["anomaly_ratio"], seed=payload["seed"],
                  root=payload.get("root", ""), meta=payload.get("meta", {}), **splits)
        _check_disjoint(rep)
        return rep


def load_manifest(path: str | Path) -> list[ImageRecord]:
    """Parse a manifest CSV into records; relative paths stay relative."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    reader = csv.reader(text.splitlines())
    header = tuple(h.strip() for h in next(reader))
    if header != MANIFEST_HEADER:
        raise DataError(f"{path}:1: expected header {','.join(MANIFEST_HEADER)}, got {','.join(header)}")
    records, seen = [], set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        rid, rpath, label, split = (c.strip() for c in row)
        if not rid or not rpath:
            raise DataError(f"{path}:{lineno}: empty id or path")
        if label not in LABELS:
            raise DataError(f"{path}:{lineno}: unknown label {label!r}")
        if split not in MANIFEST_SPLITS:
            raise DataError(f"{path}:{lineno}: unknown split {split!r}")
        if rid in seen:
            raise DataError(f"{path}:{lineno}: duplicate id {rid!r}")
        seen.add(rid)
        records.append(ImageRecord(rid, rpath, label, split))
    return records


def write_manifest(records: Sequence[ImageRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in records:
            w.writerow([r.id, r.path, r.label, r.split])


def _take(pool: list[ImageRecord], n: int, rng: np.random.Generator, what: str) -> list[ImageRecord]:
    if n > len(pool):
        raise DataError(f"insufficient records for {what}: need {n}, have {len(pool)}")
    idx = rng.permutation(len(pool))[:n]
    return [pool[i] for i in sorted(idx)]


def build_repartition(records: Sequence[ImageRecord], anomaly_ratio: float,
                      sizes: SplitSizes, seed: int, root: str | Path = "") -> DatasetRepartition:
    """Sample T_n, T_u and T_test from the manifest pools.

    T_u holds exactly ``floor(anomaly_ratio * sizes.unlabeled)`` hidden-abnormal
    records; the rest are hidden-normal. Records lose their visible label when
    they enter T_u.
    """
    if not 0.0 <= anomaly_ratio <= 1.0:
        raise DataError(f"anomaly_ratio must be in [0, 1], got {anomaly_ratio}")
    for name, v in asdict(sizes).items():
        if v < 0:
            raise DataError(f"size {name} must be non-negative")
    pools: dict[tuple[str, str], list[ImageRecord]] = {}
    for r in records:
        pools.setdefault((r.split, r.label), []).append(r)
    for pool in pools.values():
        pool.sort(key=lambda r: r.id)

    rng = np.random.default_rng(seed)
    # floor with a small guard against representation error, e.g. 0.6*5 = 2.9999...
    n_abn = int(math.floor(anomaly_ratio * sizes.unlabeled + 1e-9))
    n_u_norm = sizes.unlabeled - n_abn

    normal_train = _take(pools.get(("normal_train", "normal"), []), sizes.normal_train,
                         rng, "normal_train")
    u_abn = _take(pools.get(("unlabeled_pool", "abnormal"), []), n_abn, rng,
                  "unlabeled abnormal")
    u_norm = _take(pools.get(("unlabeled_pool", "normal"), []), n_u_norm, rng,
                   "unlabeled normal")
    t_norm = _take(pools.get(("test", "normal"), []), sizes.test_normal, rng, "test normal")
    t_abn = _take(pools.get(("test", "abnormal"), []), sizes.test_abnormal, rng,
                  "test abnormal")

    unlabeled = [replace(r, label="unknown", split="unlabeled_train", hidden_label=r.label)
                 for r in u_abn + u_norm]
    unlabeled.sort(key=lambda r: r.id)
    rep = DatasetRepartition(
        normal_train=normal_train,
        unlabeled_train=unlabeled,
        test=sorted(t_norm + t_abn, key=lambda r: r.id),
        anomaly_ratio=float(anomaly_ratio),
        seed=int(seed),
        root=str(root),
        meta={"sizes": asdict(sizes)},
    )
    _check_disjoint(rep)
    return rep


def _check_disjoint(rep: DatasetRepartition) -> None:
    seen: dict[str, str] = {}
    for name in SPLITS:
        for r in rep.split(name):
            if r.id in seen:
                raise DataError(f"record {r.id!r} appears in {seen[r.id]} and {name}")
            seen[r.id] = name


def normalize(values: np.ndarray, max_value: float) -> np.ndarray:
    """Map intensities from [0, max_value] to [-1, 1]."""
    return (np.asarray(values, dtype=np.float64) / max_value) * 2.0 - 1.0


def denormalize(values: np.ndarray, max_value: float) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) + 1.0) / 2.0 * max_value


def _dtype_max(arr: np.ndarray) -> float:
    if np.issubdtype(arr.dtype, np.integer):
        return float(np.iinfo(arr.dtype).max)
    if arr.dtype == bool:
        return 1.0
    return 1.0


def load_image(path: str | Path, size: int) -> np.ndarray:
    """Read an image as a float32 ``(1, size, size)`` array in [-1, 1].

    RGB(A) is converted to luminance. The maximum of the storage type (255 for
    8-bit, 65535 for 16-bit) maps to 1 and zero maps to -1.
    """
    try:
        with Image.open(path) as im:
            im.load()
            if im.width == 0 or im.height == 0:
                raise DataError(f"zero-dimension image: {path}")
            if im.mode in ("RGB", "RGBA", "P", "LA", "CMYK", "YCbCr"):
                im = im.convert("L")
            arr = np.asarray(im)
    except DataError:
        raise
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    if arr.size == 0:
        raise DataError(f"zero-dimension image: {path}")
    max_value = _dtype_max(arr)
    if arr.shape != (size, size):
        resized = Image.fromarray(arr.astype(np.float32), mode="F").resize(
            (size, size), Image.BILINEAR)
        arr_f = np.asarray(resized, dtype=np.float64)
    else:
        arr_f = arr.astype(np.float64)
    out = np.clip(normalize(arr_f, max_value), -1.0, 1.0)
    return out.astype(np.float32)[None]


def load_split(rep: DatasetRepartition, split: str, size: int) -> tuple[np.ndarray, list[ImageRecord]]:
    records = rep.split(split)
    if not records:
        return np.zeros((0, 1, size, size), np.float32), []
    return np.stack([load_image(rep.resolve(r), size) for r in records]), list(records)


def batch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    """Visiting order for one pass over ``n`` items; a pure function of (seed, epoch)."""
    if not shuffle:
        return np.arange(n)
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    return rng.permutation(n)


def batch_slices(n: int, batch_size: int, seed: int, epoch: int,
                 shuffle: bool = True) -> list[np.ndarray]:
    if n <= 0:
        raise DataError("cannot batch an empty split")
    if batch_size < 1:
        raise DataError("batch_size must be positive")
    order = batch_order(n, seed, epoch, shuffle)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def batch_iter(rep: DatasetRepartition, split: str, batch_size: int, seed: int,
               epoch: int, size: int = 64, shuffle: bool = True) -> Iterator[np.ndarray]:
    """Yield ``(B, 1, size, size)`` arrays covering ``split`` once, last batch partial."""
    records = rep.split(split)
    for idx in batch_slices(len(records), batch_size, seed, epoch, shuffle):
        yield np.stack([load_image(rep.resolve(records[i]), size) for i in idx])


@dataclass
class BatchStream:
    """Endless epoch-by-epoch stream over an in-memory array.

    The cursor ``(epoch, position)`` is the whole state, so a stream can be
    checkpointed and resumed exactly.
    """
    data: np.ndarray
    batch_size: int
    seed: int
    epoch: int = 0
    position: int = 0

    def next(self) -> np.ndarray:
        n = len(self.data)
        slices = batch_slices(n, self.batch_size, self.seed, self.epoch)
        idx = slices[self.position]
        self.position += 1
        if self.position >= len(slices):
            self.epoch += 1
            self.position = 0
        return self.data[idx]

    def cursor(self) -> dict:
        return {"epoch": self.epoch, "position": self.position}

    def restore(self, cursor: dict) -> None:
        self.epoch = int(cursor["epoch"])
        self.position = int(cursor["position"])
