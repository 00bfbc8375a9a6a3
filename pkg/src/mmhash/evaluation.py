"""Average precision over full Hamming rankings, and the ablation grid."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ._fileutil import atomic_write
from .codes import CodeIndex, binarize_rows
from .config import TrainConfig
from .exceptions import RelevantCountMismatch, WidthMismatch, ZeroQueries
from .model import ModelParams, forward_batch

# row order of the ablation grid
ABLATION_VARIANTS = ("text_only", "vision_only", "concat_only", "full")


def relevance(query_labels, item_labels) -> int:
    """1 when the two label sets intersect."""
    return int(np.any(np.logical_and(query_labels, item_labels)))


def average_precision(ranked_relevance, total_relevant: int) -> float:
    """Mean of precision@p over the positions p holding a relevant item.

    Returns 0.0 when ``total_relevant`` is 0.
    """
    rel = np.asarray(ranked_relevance, dtype=bool)
    hits = int(rel.sum())
    if hits != total_relevant:
        raise RelevantCountMismatch(f"ranking holds {hits} relevant items, expected {total_relevant}")
    if total_relevant == 0:
        return 0.0
    positions = np.flatnonzero(rel) + 1
    return float(np.sum(np.arange(1, hits + 1) / positions) / total_relevant)


@dataclass
class EvalResult:
    map: float
    per_query_ap: list
    query_ids: list
    num_queries: int
    retrieval_size: int
    k: int
    excluded_ids: list = field(default_factory=list)

    def summary(self) -> str:
        return (
            f"map={self.map:.6f} queries={self.num_queries} excluded={len(self.excluded_ids)} "
            f"retrieval={self.retrieval_size} bits={self.k}"
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["query_id", "ap"])
        scored = dict(zip(self.query_ids, self.per_query_ap))
        for qid in sorted(set(self.query_ids) | set(self.excluded_ids)):
            w.writerow([qid, repr(scored[qid]) if qid in scored else ""])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with atomic_write(path, "w") as fh:
            fh.write(self.to_csv())


def mean_average_precision(queries: CodeIndex, query_labels, index: CodeIndex, db_labels) -> EvalResult:
    """mAP of every query in ``queries`` ranked against ``index``.

    ``query_labels`` and ``db_labels`` are multi-hot rows parallel to
    ``queries`` and ``index``. Queries with no relevant item are left out of
    the mean and listed in ``excluded_ids``.
    """
    if queries.k != index.k:
        raise WidthMismatch(f"query codes have {queries.k} bits, database has {index.k}")
    q_lab = np.asarray(query_labels, dtype=np.float64)
    db_lab = np.asarray(db_labels, dtype=np.float64)
    if len(q_lab) != len(queries) or len(db_lab) != len(index):
        raise ValueError("label rows must parallel the code indexes")
    aps, kept, excluded = [], [], []
    for pos, (qid, code) in enumerate(queries):
        order, _ = index.ranking(code)
        rel = db_lab[order] @ q_lab[pos] > 0
        total = int(rel.sum())
        if total == 0:
            excluded.append(qid)
            continue
        aps.append(average_precision(rel, total))
        kept.append(qid)
    if not aps:
        raise ZeroQueries("no query has a relevant item in the database")
    return EvalResult(
        map=float(np.mean(aps)), per_query_ap=aps, query_ids=kept, num_queries=len(queries),
        retrieval_size=len(index), k=index.k, excluded_ids=excluded,
    )


def relaxed_codes(params: ModelParams, vision, text, variant: str = "full", chunk: int = 4096) -> np.ndarray:
    """Forward pass in row chunks; returns the ``(n, k)`` tanh outputs."""
    out = np.empty((len(vision), params.code_bits))
    for s in range(0, len(vision), chunk):
        out[s:s + chunk] = forward_batch(vision[s:s + chunk], text[s:s + chunk], params, variant).h
    return out


def encode_items(params: ModelParams, vision, text, ids, variant: str = "full") -> CodeIndex:
    """Binary codes for the rows ``ids`` of the embedding matrices."""
    ids = np.asarray(ids, dtype=np.int64)
    h = relaxed_codes(params, vision[ids], text[ids], variant)
    return CodeIndex(ids, binarize_rows(h), params.code_bits)


def evaluate_split(dataset, params: ModelParams, variant: str = "full") -> EvalResult:
    """Encode the query and retrieval splits and score them."""
    man = dataset.manifest
    queries = encode_items(params, dataset.vision, dataset.text, man.query_ids, variant)
    db = encode_items(params, dataset.vision, dataset.text, man.retrieval_ids, variant)
    return mean_average_precision(queries, dataset.labels[man.query_ids], db, dataset.labels[man.retrieval_ids])


@dataclass
class AblationReport:
    bits: list
    variants: tuple
    cells: dict  # (variant, bits) -> mAP

    def row(self, variant: str) -> list:
        return [self.cells[variant, k] for k in self.bits]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["variant", *(f"{k} bits" for k in self.bits)])
        for v in self.variants:
            w.writerow([v, *(f"{x:.6f}" for x in self.row(v))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with atomic_write(path, "w") as fh:
            fh.write(self.to_csv())


def ablation_report(dataset, config: TrainConfig, bit_list) -> AblationReport:
    """Train and score every variant at every code width, all from one seed."""
    from .trainer import train

    bits = [int(k) for k in bit_list]
    cells = {}
    for variant in ABLATION_VARIANTS:
        for k in bits:
            cfg = config.replace(variant=variant, code_bits=k)
            params, _ = train(dataset, cfg)
            cells[variant, k] = evaluate_split(dataset, params, variant).map
    return AblationReport(bits=bits, variants=ABLATION_VARIANTS, cells=cells)
