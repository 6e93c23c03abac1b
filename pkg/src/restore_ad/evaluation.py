"""Anomaly scores, heatmaps and ranking metrics.

The anomaly score of an image is the discrepancy between it and its
restoration. AUC is the Mann-Whitney statistic with ties counted as one half.
AP is the step-wise area under the precision-recall curve with abnormal as the
positive class; tied scores form a single threshold, so a tie group enters the
curve as one step (the same convention scikit-learn uses).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image
from scipy.stats import rankdata

from .data import DatasetRepartition, ImageRecord, load_split

AP_TIE_RULE = "tie groups share one threshold (single precision-recall step)"


def _as_np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def heatmap(x, x_prime) -> np.ndarray:
    """Per-pixel |x' - x| averaged over channels; ``(H, W)``, values in [0, 2]."""
    x, x_prime = _as_np(x), _as_np(x_prime)
    if x.shape != x_prime.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_prime.shape}")
    diff = np.abs(x_prime.astype(np.float64) - x.astype(np.float64))
    return diff.mean(axis=0) if diff.ndim == 3 else diff


def anomaly_score(x, x_prime, mode: str = "mean", topk_fraction: float = 0.05) -> float:
    hm = heatmap(x, x_prime)
    if mode == "mean":
        return float(hm.mean())
    if mode == "max":
        return float(hm.max())
    if mode == "topk_mean":
        flat = np.sort(hm.ravel())[::-1]
        k = max(1, int(round(topk_fraction * flat.size)))
        return float(flat[:k].mean())
    raise ValueError(f"unknown score mode {mode!r}")


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D and equally long")
    y = y.astype(bool)
    return s, y


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(score_abnormal > score_normal) + 0.5 P(tie), via average ranks."""
    s, y = _check_binary(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def ap(scores: Sequence[float], labels: Sequence[int]) -> float:
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("AP needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    # last index of each tie group is where the threshold takes effect
    ends = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = tp[ends].astype(np.float64)
    precision = tp / (ends + 1)
    recall = tp / n_pos
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


@dataclass
class ScoreReport:
    entries: list[tuple[str, float, str]]
    auc: float
    ap: float
    config_fingerprint: str = ""
    checkpoint_iteration: int = -1
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_entries(cls, entries, **kw) -> "ScoreReport":
        scores = [e[1] for e in entries]
        labels = [e[2] == "abnormal" for e in entries]
        return cls(entries=list(entries), auc=auc(scores, labels), ap=ap(scores, labels), **kw)

    def summary(self) -> dict:
        return {
            "auc": self.auc,
            "ap": self.ap,
            "n": len(self.entries),
            "n_abnormal": sum(e[2] == "abnormal" for e in self.entries),
            "config_fingerprint": self.config_fingerprint,
            "checkpoint_iteration": self.checkpoint_iteration,
            "ap_tie_rule": AP_TIE_RULE,
            **self.meta,
        }

    def to_text(self) -> str:
        buf = io.StringIO()
        for k, v in self.summary().items():
            buf.write(f"# {k}: {json.dumps(v)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "score", "label"])
        for rid, score, label in self.entries:
            w.writerow([rid, repr(float(score)), label])
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ScoreReport":
        header, rows = {}, []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.startswith("# "):
                k, v = line[2:].split(": ", 1)
                header[k] = json.loads(v)
            elif line and line != "id,score,label":
                rows.append(line)
        entries = [(r[0], float(r[1]), r[2]) for r in csv.reader(rows)]
        known = {"auc", "ap", "n", "n_abnormal", "config_fingerprint", "checkpoint_iteration",
                 "ap_tie_rule"}
        return cls(entries=entries, auc=header["auc"], ap=header["ap"],
                   config_fingerprint=header.get("config_fingerprint", ""),
                   checkpoint_iteration=header.get("checkpoint_iteration", -1),
                   meta={k: v for k, v in header.items() if k not in known})


@torch.no_grad()
def restore(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Inference-mode restorations (delta = 1, no randomness) of an image stack."""
    out = []
    for i in range(0, len(images), batch_size):
        x = torch.from_numpy(np.asarray(images[i:i + batch_size], np.float32))
        out.append(model(x, mode="infer").numpy())
    return np.concatenate(out) if out else np.zeros_like(images)


def score_images(model, images: np.ndarray, mode: str = "mean", topk_fraction: float = 0.05,
                 batch_size: int = 64) -> np.ndarray:
    restored = restore(model, images, batch_size)
    return np.array([anomaly_score(x, xp, mode, topk_fraction) for x, xp in zip(images, restored)])


def evaluate(model, records: Sequence[ImageRecord] | DatasetRepartition, eval_config=None,
             images: np.ndarray | None = None, config_fingerprint: str = "",
             checkpoint_iteration: int = -1) -> ScoreReport:
    """Score every test record; abnormal is the positive class."""
    from .config import EvalConfig

    ec = eval_config or EvalConfig()
    if isinstance(records, DatasetRepartition):
        images, records = load_split(records, "test", model.config.input_size)
    records = list(records)
    if not records:
        raise ValueError("empty test split")
    if images is None:
        raise ValueError("images are required when passing bare records")
    scores = score_images(model, images, ec.score_mode, ec.topk_fraction, ec.batch_size)
    entries = [(r.id, float(s), r.label) for r, s in zip(records, scores)]
    return ScoreReport.from_entries(entries, config_fingerprint=config_fingerprint,
                                    checkpoint_iteration=checkpoint_iteration,
                                    meta={"score_mode": ec.score_mode})


def export_heatmap(hm: np.ndarray, out_dir: str | Path, image_id: str) -> Path:
    """Write ``<id>_heat.png`` (per-image min-max scaled) plus raw ``.npy`` and ``.json`` sidecars."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = float(hm.min()), float(hm.max())
    scaled = np.zeros_like(hm) if hi == lo else (hm - lo) / (hi - lo)
    png = out / f"{image_id}_heat.png"
    Image.fromarray(np.round(scaled * 255).astype(np.uint8), mode="L").save(png)
    np.save(out / f"{image_id}_heat.npy", hm.astype(np.float32))
    (out / f"{image_id}_heat.json").write_text(
        json.dumps({"id": image_id, "min": lo, "max": hi}) + "\n", encoding="utf-8")
    return png
