"""Certification driver, TSV records, certified-accuracy tables and reports."""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..model import DMAE, NumericError
from ..numerics import ConfidenceParams, RngStream
from ..smoothing import ABSTAIN, CertificationError, CertResult, SmoothedClassifier, certify
from .checkpoint import load_checkpoint
from .config import RunConfig
from .data import Dataset, load_dataset
from .train import model_from_checkpoint

log = logging.getLogger(__name__)

TSV_HEADER = "idx\tlabel\tpredict\tradius\tcorrect\ttime"


def model_base_classifier(model: DMAE):
    """Wrap a model as a base classifier: float64 image batch -> argmax classes."""
    model.eval()
    dtype = next(model.parameters()).dtype

    def base(batch: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            logits = model.logits(torch.as_tensor(batch, dtype=dtype))
        return logits.argmax(dim=-1).numpy()

    return base


def select_indices(n: int, stride: int = 1, max_examples: int = -1) -> list[int]:
    """Every ``stride``-th index, truncated to the first ``max_examples``."""
    idx = list(range(0, n, stride))
    return idx if max_examples < 0 else idx[:max_examples]


_NUMERIC = (ArithmeticError, NumericError)


def certify_dataset(base, ds: Dataset, sigma: float, cp: ConfidenceParams, seed: int, batch: int = 1000,
                    stride: int = 1, max_examples: int = -1, workers: int = 1) -> list[CertResult]:
    """Certify the selected examples; example ``i`` uses stream ``(seed, child(i))``.

    A numeric failure on one example is recorded as an abstention with its
    ``error`` field set; other exceptions propagate.
    """
    sc = SmoothedClassifier(base, sigma, ds.num_classes)
    root = RngStream(seed)

    def one(i: int) -> CertResult:
        x = ds.images[i].astype(np.float64)
        label = int(ds.labels[i])
        try:
            return certify(sc, x, cp, batch, root.child(i), label=label, example_id=i)
        except CertificationError as exc:
            if not isinstance(exc.__cause__, _NUMERIC):
                raise
            log.warning("%s", exc)
            return CertResult(i, label, ABSTAIN, 0.0, False, 0.0, error=str(exc))

    chosen = select_indices(len(ds), stride, max_examples)
    if workers <= 1:
        return [one(i) for i in chosen]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, chosen))  # map preserves input order


def format_row(r: CertResult) -> str:
    return f"{r.example_id}\t{r.label}\t{r.prediction}\t{r.radius:.4f}\t{int(r.correct)}\t{r.seconds:.4f}"


def write_tsv(records: list[CertResult], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(TSV_HEADER + "\n")
        for r in records:
            fh.write(format_row(r) + "\n")


def read_tsv(path) -> list[CertResult]:
    rows = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != TSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            idx, label, pred, radius, correct, secs = line.rstrip("\n").split("\t")
            rows.append(CertResult(int(idx), int(label), int(pred), float(radius), correct == "1", float(secs)))
    return rows


def run_certify(cfg: RunConfig, dataset: Dataset | None = None, model: DMAE | None = None,
                out_path=None) -> list[CertResult]:
    """Certify the test split with a trained checkpoint and stream rows to TSV."""
    ds = dataset if dataset is not None else load_dataset(cfg.data.test)
    if model is None:
        model = model_from_checkpoint(load_checkpoint(cfg.checkpoint.init_from))
    c = cfg.certify
    records = certify_dataset(model_base_classifier(model), ds, c.sigma, c.confidence(), cfg.seed,
                              batch=c.batch, stride=c.stride, max_examples=c.max_examples, workers=c.workers)
    out = Path(out_path) if out_path is not None else Path(cfg.checkpoint.out_dir) / c.output
    write_tsv(records, out)
    return records


@dataclass
class CertTable:
    radii: list
    accuracy: dict = field(default_factory=dict)  # sigma -> list of certified accuracies
    counts: dict = field(default_factory=dict)  # sigma -> number of records

    def rows(self):
        for sigma in sorted(self.accuracy):
            for r, a in zip(self.radii, self.accuracy[sigma]):
                yield sigma, r, a


def certified_accuracy(records: list[CertResult], radii, sigma: float | None = None) -> CertTable:
    """Fraction of records that are correct with radius >= r, for each r.

    Abstentions count as not certified. An empty record list yields an
    explicit all-zero table with count 0.
    """
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("radii must be nonempty")
    key = sigma if sigma is not None else 0.0
    if not records:
        return CertTable(radii, {key: [0.0] * len(radii)}, {key: 0})
    correct = np.array([r.correct and r.prediction != ABSTAIN for r in records])
    rad = np.array([r.radius for r in records])
    acc = [float(np.mean(correct & (rad >= r))) for r in radii]
    return CertTable(radii, {key: acc}, {key: len(records)})


def merge_tables(tables: list[CertTable]) -> CertTable:
    merged = CertTable(list(tables[0].radii))
    for t in tables:
        if list(t.radii) != merged.radii:
            raise ValueError("tables use different radius grids")
        merged.accuracy.update(t.accuracy)
        merged.counts.update(t.counts)
    return merged


def format_table(table: CertTable) -> str:
    head = "sigma".ljust(8) + "".join(f"r={r:<8.3g}" for r in table.radii) + "n"
    lines = [head]
    for sigma in sorted(table.accuracy):
        cells = "".join(f"{100 * a:<10.1f}" for a in table.accuracy[sigma])
        lines.append(f"{sigma:<8.3g}{cells}{table.counts.get(sigma, 0)}")
    return "\n".join(lines)


def table_csv(table: CertTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sigma", "radius", "certified_accuracy"])
    for sigma, r, a in table.rows():
        w.writerow([f"{sigma:g}", f"{r:g}", f"{a:.6f}"])
    return buf.getvalue()


def run_report(cfg: RunConfig, out_dir=None) -> CertTable:
    tables = [certified_accuracy(read_tsv(inp.path), cfg.report.radii, sigma=inp.sigma)
              for inp in cfg.report.inputs]
    table = merge_tables(tables)
    out = Path(out_dir or cfg.checkpoint.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cfg.report.output}.txt").write_text(format_table(table) + "\n")
    (out / f"{cfg.report.output}.csv").write_text(table_csv(table))
    return table
