"""CSV artefacts: coherence histograms, GAAS curves and transfer-accuracy grids.

Every CSV starts with a ``# schema: <name>/<version>`` comment line followed
by a header row.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diversity import coherence_per_example, input_gradients
from .gaas import GaasReport
from .models import Ensemble

SCHEMA_VERSION = 1


@dataclass
class CoherenceReport:
    name: str
    values: np.ndarray
    edges: np.ndarray
    counts: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.values))


def coherence_report(ens: Ensemble, images, labels, bins: int = 20, name: str = "", chunk: int = 250) -> CoherenceReport:
    """Coherence of the members' input gradients for every input, plus a histogram on [-1, 1]."""
    if len(ens) < 2:
        raise ValueError(f"coherence needs an ensemble of at least 2 members, got {len(ens)}")
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    values = np.concatenate([
        coherence_per_example(input_gradients(ens, images[s:s + chunk], labels[s:s + chunk]))
        for s in range(0, images.shape[0], chunk)
    ])
    counts, edges = np.histogram(values, bins=bins, range=(-1.0, 1.0))
    return CoherenceReport(name, values, edges, counts)


def _table(schema: str, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {schema}/{SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return f"{x:.10g}"


def coherence_csv(report: CoherenceReport) -> str:
    return _table("divtrain.coherence", ["input_id", "coherence"],
                  ((i, _num(v)) for i, v in enumerate(report.values)))


def coherence_hist_csv(report: CoherenceReport) -> str:
    rows = ((_num(lo), _num(hi), int(c)) for lo, hi, c in zip(report.edges[:-1], report.edges[1:], report.counts))
    return _table("divtrain.coherence_hist", ["bin_left", "bin_right", "count"], rows)


def gaas_csv(report: GaasReport) -> str:
    return _table("divtrain.gaas", ["input_id", "epsilon", "order", "success_count"],
                  ((i, _num(e), k, c) for i, e, k, c in report.records))


def gaas_summary_csv(report: GaasReport) -> str:
    return _table("divtrain.gaas_summary", ["epsilon", "order", "j", "probability"],
                  ((_num(e), k, j, _num(p)) for e, k, j, p in report.summary_rows()))


def attack_csv(clean_accuracy: float, rows) -> str:
    """One row per (attack, epsilon) with the target's accuracy in percent, 1 decimal."""
    body = [("clean", _num(0.0), f"{clean_accuracy:.1f}")]
    body += [(kind, _num(eps), f"{acc:.1f}") for kind, eps, acc in rows]
    return _table("divtrain.attack", ["attack", "epsilon", "target_accuracy"], body)


def read_csv(path) -> list[dict[str, str]]:
    """Rows of a CSV written by this module, skipping the schema comment."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
