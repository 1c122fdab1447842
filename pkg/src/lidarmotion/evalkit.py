"""End-point-error metrics, the zero and mean baselines, and report rendering.

Errors are in metres per interval. Dataset aggregates are cell-weighted: the
full error is the mean over every cell of every frame, the dynamic error the
mean over every dynamic cell of every frame.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datapipe.assemble import MODES, PriorStack
from .motion_gt import MotionMap


def _check_pred(pred, gt: MotionMap) -> np.ndarray:
    pred = np.asarray(pred.vectors if isinstance(pred, MotionMap) else pred, dtype=np.float64)
    if pred.shape != gt.vectors.shape:
        raise ValueError(f"prediction {pred.shape} does not match ground truth {gt.vectors.shape}")
    return pred


def epe(pred, gt: MotionMap) -> Tuple[float, Optional[float]]:
    """(full, dynamic) mean end-point error of one frame; dynamic is None without dynamic cells."""
    err = np.hypot(*(_check_pred(pred, gt) - gt.vectors))
    dyn = float(err[gt.dynamic].mean()) if gt.has_motion else None
    return float(err.mean()), dyn


@dataclass
class EpeAccumulator:
    """Cell-weighted running sums over a dataset."""

    sum_full: float = 0.0
    n_cells: int = 0
    sum_dynamic: float = 0.0
    n_dynamic: int = 0
    n_frames: int = 0

    def add(self, pred, gt: MotionMap) -> None:
        err = np.hypot(*(_check_pred(pred, gt) - gt.vectors))
        self.sum_full += float(err.sum())
        self.n_cells += err.size
        self.sum_dynamic += float(err[gt.dynamic].sum())
        self.n_dynamic += int(gt.dynamic.sum())
        self.n_frames += 1

    def result(self) -> Tuple[float, Optional[float]]:
        if self.n_frames == 0:
            raise ValueError("no frames evaluated")
        full = self.sum_full / self.n_cells
        dyn = self.sum_dynamic / self.n_dynamic if self.n_dynamic else None
        return full, dyn


def _constant_epe(gts: Sequence[MotionMap], vec) -> EpeAccumulator:
    gts = list(gts)
    if not gts:
        raise ValueError("empty dataset")
    acc = EpeAccumulator()
    v = np.asarray(vec, dtype=np.float64).reshape(2, 1, 1)
    for gt in gts:
        acc.add(np.broadcast_to(v, gt.vectors.shape), gt)
    return acc


def baseline_zero(gts: Sequence[MotionMap]) -> Tuple[float, Optional[float]]:
    """error@zero: every prediction is the zero vector."""
    return _constant_epe(gts, (0.0, 0.0)).result()


def train_mean(gts: Sequence[MotionMap]) -> np.ndarray:
    """Mean GT vector over the dynamic cells of a training split (zero if none)."""
    total = np.zeros(2)
    count = 0
    for gt in gts:
        total += gt.vectors[:, gt.dynamic].sum(axis=1)
        count += int(gt.dynamic.sum())
    return total / count if count else total


def baseline_mean(gts: Sequence[MotionMap], mean) -> Tuple[float, Optional[float]]:
    """error@mean: the constant ``mean`` vector predicted at every cell."""
    return _constant_epe(gts, mean).result()


@dataclass
class EvalRow:
    name: str
    epe_full: float
    epe_dynamic: Optional[float]
    n_frames: int
    n_dynamic_cells: int

    def __post_init__(self):
        if self.epe_full < 0 or (self.epe_dynamic is not None and self.epe_dynamic < 0):
            raise ValueError("end-point errors cannot be negative")


@dataclass
class EvalReport:
    rows: List[EvalRow] = field(default_factory=list)

    def add(self, row: EvalRow) -> None:
        self.rows.append(row)

    def row(self, name: str) -> EvalRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)


def _row(name: str, acc: EpeAccumulator) -> EvalRow:
    full, dyn = acc.result()
    return EvalRow(name, full, dyn, acc.n_frames, acc.n_dynamic)


def baseline_rows(gts: Sequence[MotionMap], mean) -> List[EvalRow]:
    return [_row("error@zero", _constant_epe(gts, (0.0, 0.0))), _row("error@mean", _constant_epe(gts, mean))]


def evaluate_model(
    net,
    dataset: Sequence[Tuple[PriorStack, MotionMap]],
    mode: str,
    name: Optional[str] = None,
    batch_size: int = 4,
) -> EvalRow:
    """Run ``net`` in inference mode over (stack, GT) pairs assembled in ``mode``."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if net.config.in_channels != MODES[mode]:
        raise ValueError(f"mode mismatch: network takes {net.config.in_channels} channels, mode {mode} has {MODES[mode]}")
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    for stack, _ in dataset:
        if stack.mode != mode:
            raise ValueError(f"mode mismatch: stack assembled as {stack.mode}, evaluating {mode}")
    acc = EpeAccumulator()
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start:start + batch_size]
        x = np.stack([s.tensor for s, _ in chunk]).astype(net.dtype)
        pred = net.predict(x)
        for p, (_, gt) in zip(pred, chunk):
            acc.add(p, gt)
    return _row(name or mode, acc)


# --- rendering --------------------------------------------------------------

def _fmt(v: Optional[float]) -> str:
    return "-" if v is None else f"{v:.4f}"


def render_text(report: EvalReport) -> str:
    header = ("name", "full", "dynamic", "frames", "dyn_cells")
    body = [(r.name, _fmt(r.epe_full), _fmt(r.epe_dynamic), str(r.n_frames), str(r.n_dynamic_cells)) for r in report.rows]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def render_json(report: EvalReport) -> str:
    return json.dumps({"rows": [asdict(r) for r in report.rows]}, indent=2) + "\n"


def render_report(report: EvalReport) -> Tuple[str, str]:
    """Text table (4 decimals) and JSON document of the same rows."""
    return render_text(report), render_json(report)


def parse_report(text: str) -> EvalReport:
    doc = json.loads(text)
    return EvalReport([EvalRow(**r) for r in doc["rows"]])

