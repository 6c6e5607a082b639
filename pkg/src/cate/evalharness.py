"""Evaluation: answer accounting, retrieval over embedding galleries, rank
correlation, and result files that carry enough provenance to reproduce."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .encoders import Embedding
from .errors import ConfigError, DataError
from .models import ABSTAIN, select_answer
from .questions import Question


@dataclass
class AnswerRecord:
    question_id: str
    class_label: str
    correct_index: int
    predicted: Optional[int]  # None means the model abstained
    scores: Optional[list[float]] = None


def evaluate_selector(selector, questions: Sequence[Question]) -> list[AnswerRecord]:
    """Run a fitted selector over questions, keeping raw option scores."""
    qs = list(questions)
    if not qs:
        raise DataError("nothing to evaluate")
    scores = selector.decision_function(qs)
    records = []
    for q, row in zip(qs, scores):
        pick = select_answer(row, tie_eps=selector.tie_eps)
        records.append(
            AnswerRecord(
                question_id=q.question_id,
                class_label=q.class_label,
                correct_index=q.correct_index,
                predicted=pick,
                scores=[float(s) for s in row],
            )
        )
    return records


def accuracy(records: Sequence[AnswerRecord]) -> float:
    """Fraction answered correctly; abstentions count as wrong."""
    if not records:
        raise DataError("accuracy undefined for zero records")
    hits = sum(
        1 for r in records if r.predicted is not ABSTAIN and int(r.predicted) == r.correct_index
    )
    return hits / len(records)


def abstain_rate(records: Sequence[AnswerRecord]) -> float:
    if not records:
        raise DataError("abstain rate undefined for zero records")
    return sum(1 for r in records if r.predicted is ABSTAIN) / len(records)


def classwise_report(records: Sequence[AnswerRecord]) -> dict:
    """Accuracy and abstention split by the correct option's class label."""
    if not records:
        raise DataError("classwise report undefined for zero records")
    per_class: dict[str, list[AnswerRecord]] = {}
    for r in records:
        per_class.setdefault(r.class_label, []).append(r)
    report = {
        "overall": {
            "n": len(records),
            "accuracy": accuracy(records),
            "abstain_rate": abstain_rate(records),
        },
        "per_class": {},
    }
    for label in sorted(per_class):
        rs = per_class[label]
        report["per_class"][label] = {
            "n": len(rs),
            "accuracy": accuracy(rs),
            "abstain_rate": abstain_rate(rs),
        }
    return report


# ---------------------------------------------------------------------------
# Nearest-neighbour retrieval


class RetrievalIndex:
    """Cosine retrieval over a fixed gallery.

    Ties are broken by gallery insertion order (earlier wins), and queries can
    exclude a gallery entry by id so a clip never retrieves itself.
    """

    def __init__(
        self,
        embeddings: Sequence[Embedding] | np.ndarray,
        ids: Sequence[str],
        labels: Optional[Sequence[str]] = None,
    ):
        if isinstance(embeddings, np.ndarray):
            mat = np.asarray(embeddings, dtype=np.float64)
        else:
            mat = np.stack([e.numpy().astype(np.float64) for e in embeddings])
        if mat.ndim != 2 or mat.shape[0] == 0:
            raise DataError("retrieval gallery must be a non-empty (N, d) matrix")
        if len(ids) != mat.shape[0]:
            raise DataError("gallery ids and embeddings disagree in length")
        if len(set(ids)) != len(ids):
            raise DataError("gallery ids must be unique")
        if labels is not None and len(labels) != mat.shape[0]:
            raise DataError("gallery labels and embeddings disagree in length")
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        if (norms == 0).any():
            raise DataError("gallery contains a zero embedding")
        self.matrix = mat / norms
        self.ids = list(ids)
        self.labels = list(labels) if labels is not None else None
        self._row_of = {cid: i for i, cid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def query(
        self, embedding: Embedding | np.ndarray, k: int, exclude_id: Optional[str] = None
    ) -> list[tuple[str, float]]:
        """Top-k (id, cosine) pairs, best first."""
        if k <= 0:
            raise ConfigError(f"k must be positive, got {k}")
        q = embedding.numpy() if isinstance(embedding, Embedding) else np.asarray(embedding)
        q = q.astype(np.float64).reshape(-1)
        if q.shape[0] != self.matrix.shape[1]:
            raise DataError("query dimension does not match gallery")
        nq = np.linalg.norm(q)
        if nq == 0:
            raise DataError("cannot query with a zero embedding")
        sims = self.matrix @ (q / nq)
        available = len(self.ids) - (1 if exclude_id in self._row_of else 0)
        if k > available:
            raise DataError(f"asked for top-{k} but gallery has only {available} candidates")
        order = np.argsort(-sims, kind="stable")
        out = []
        for row in order:
            if exclude_id is not None and self.ids[row] == exclude_id:
                continue
            out.append((self.ids[row], float(sims[row])))
            if len(out) == k:
                break
        return out


def retrieval_topk_accuracy(
    index: RetrievalIndex,
    queries: Sequence[Embedding] | np.ndarray,
    query_ids: Sequence[str],
    query_labels: Sequence[str],
    k: int,
) -> float:
    """Fraction of queries whose top-k neighbours include their class label.

    Each query excludes its own id from the gallery.
    """
    if index.labels is None:
        raise ConfigError("retrieval gallery was built without labels")
    if isinstance(queries, np.ndarray):
        rows = [queries[i] for i in range(queries.shape[0])]
    else:
        rows = list(queries)
    if not rows:
        raise DataError("no retrieval queries")
    if not (len(rows) == len(query_ids) == len(query_labels)):
        raise DataError("queries, ids and labels disagree in length")
    label_of = dict(zip(index.ids, index.labels))
    hits = 0
    for emb, qid, qlabel in zip(rows, query_ids, query_labels):
        top = index.query(emb, k, exclude_id=qid)
        if any(label_of[cid] == qlabel for cid, _ in top):
            hits += 1
    return hits / len(rows)


# ---------------------------------------------------------------------------
# Rank correlation


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sv = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties, in float64."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("spearman needs two equal-length 1-D sequences")
    if len(x) < 2:
        raise DataError("spearman needs at least two points")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise DataError("spearman inputs must be finite")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.linalg.norm(rx) * np.linalg.norm(ry)
    if denom == 0:
        raise DataError("spearman undefined when an input is constant")
    return float(rx @ ry / denom)


# ---------------------------------------------------------------------------
# Result files


def config_hash(config: dict) -> str:
    """Short stable digest of a JSON-serializable config."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def write_results(path: Path | str, metrics: dict, config: dict, seed: int) -> dict:
    """Metrics + the config they came from + its hash, as pretty JSON.

    Metric keys land at the top level of the file next to config_hash and
    seed, so downstream readers see e.g. {"overall": ..., "per_class": ...,
    "config_hash": ..., "seed": ...}.
    """
    reserved = {"config", "config_hash", "seed"}
    clash = reserved & set(metrics)
    if clash:
        raise ConfigError(f"metric keys collide with reserved fields: {sorted(clash)}")
    payload = {
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        **metrics,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return payload


def write_answer_records(path: Path | str, records: Sequence[AnswerRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def plot_classwise_accuracy(report: dict, path: Path | str) -> None:
    """Bar chart of per-class accuracy with the overall value as a line."""
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    per_class = report.get("per_class", {})
    if not per_class:
        raise DataError("report has no per-class entries to plot")
    labels = list(per_class)
    values = [per_class[l]["accuracy"] for l in labels]
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(labels)), 4))
    ax.bar(range(len(labels)), values, color="#4878cf")
    ax.axhline(report["overall"]["accuracy"], color="#d65f5f", linestyle="--", label="overall")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
