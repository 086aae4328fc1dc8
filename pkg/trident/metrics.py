"""
Binary detection metrics with drone as the positive class. Reports carry
percentages; ratios with a zero denominator are reported as 0 and named
in `flags` instead of raising.
"""
import dataclasses
import json
import logging
from typing import Dict, List, Optional

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import pandas

from luna import create_folder_for_file
from trident.core_types import PresenceFlag

logger = logging.getLogger(__name__)

CLASS_ORDER = (PresenceFlag.PRESENT, PresenceFlag.ABSENT)
METRIC_KEYS = ('accuracy', 'precision', 'recall', 'f1', 'macro_f1')


@dataclasses.dataclass
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: 'ConfusionMatrix'):
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def add(self, label, predicted):
        if label:
            if predicted:
                self.tp += 1
            else:
                self.fn += 1
        elif predicted:
            self.fp += 1
        else:
            self.tn += 1

    @classmethod
    def from_predictions(cls, labels, predicted):
        labels = np.asarray(labels).astype(bool)
        predicted = np.asarray(predicted).astype(bool)
        return cls(tp=int(np.sum(labels & predicted)), fp=int(np.sum(~labels & predicted)),
                   tn=int(np.sum(~labels & ~predicted)), fn=int(np.sum(labels & ~predicted)))

    @classmethod
    def from_rates(cls, tpr, tnr, positives, negatives):
        """Rebuilds counts from published rates and class sizes."""
        tp = int(round(tpr * positives))
        tn = int(round(tnr * negatives))
        return cls(tp=tp, fp=negatives - tn, tn=tn, fn=positives - tp)

    def as_table(self) -> pandas.DataFrame:
        """Rows are true classes, columns predicted classes, drone first."""
        return pandas.DataFrame([[self.tp, self.fn], [self.fp, self.tn]],
                                index=['true_drone', 'true_no_drone'],
                                columns=['pred_drone', 'pred_no_drone'])


@dataclasses.dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    macro_f1: float
    confusion: ConfusionMatrix
    per_class: Dict[str, Dict[str, float]]
    rates: Dict[str, float]
    flags: List[str] = dataclasses.field(default_factory=list)
    detection_time_ms: Optional[float] = None
    slices: Dict[str, 'MetricsReport'] = dataclasses.field(default_factory=dict)

    @property
    def degenerate(self):
        return bool(self.flags)

    def to_dict(self, include_timing=False):
        d = {key: round(getattr(self, key), 6) for key in METRIC_KEYS}
        d['confusion'] = dataclasses.asdict(self.confusion)
        d['per_class'] = {c: {k: round(v, 6) for k, v in m.items()} for c, m in self.per_class.items()}
        d['rates'] = {k: round(v, 6) for k, v in self.rates.items()}
        d['class_index'] = {flag.token: flag.class_index for flag in CLASS_ORDER}
        d['flags'] = list(self.flags)
        d['detection_time_ms'] = (round(self.detection_time_ms, 4)
                                  if include_timing and self.detection_time_ms is not None else None)
        d['slices'] = {name: s.to_dict(include_timing) for name, s in self.slices.items()}
        return d


def _ratio(num, den, flag, flags):
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def _f1(precision, recall, flag, flags):
    if precision + recall == 0:
        flags.append(flag)
        return 0.0
    return 2 * precision * recall / (precision + recall)


def metrics_from_confusion(cm: ConfusionMatrix) -> MetricsReport:
    flags = []
    accuracy = _ratio(cm.tp + cm.tn, cm.total, 'empty', flags)
    precision = _ratio(cm.tp, cm.tp + cm.fp, 'precision_undefined', flags)
    recall = _ratio(cm.tp, cm.tp + cm.fn, 'recall_undefined', flags)
    f1 = _f1(precision, recall, 'f1_undefined', flags)
    # the negative class read as its own positive
    neg_precision = _ratio(cm.tn, cm.tn + cm.fn, 'no_drone_precision_undefined', flags)
    neg_recall = _ratio(cm.tn, cm.tn + cm.fp, 'no_drone_recall_undefined', flags)
    neg_f1 = _f1(neg_precision, neg_recall, 'no_drone_f1_undefined', flags)
    rates = {
        'tpr': 100 * recall,
        'tnr': 100 * neg_recall,
        'fpr': 100 * _ratio(cm.fp, cm.fp + cm.tn, 'fpr_undefined', []),
        'fnr': 100 * _ratio(cm.fn, cm.fn + cm.tp, 'fnr_undefined', []),
    }
    return MetricsReport(
        accuracy=100 * accuracy,
        precision=100 * precision,
        recall=100 * recall,
        f1=100 * f1,
        macro_f1=100 * (f1 + neg_f1) / 2,
        confusion=dataclasses.replace(cm),
        per_class={
            'drone': {'precision': 100 * precision, 'recall': 100 * recall, 'f1': 100 * f1},
            'no_drone': {'precision': 100 * neg_precision, 'recall': 100 * neg_recall, 'f1': 100 * neg_f1},
        },
        rates=rates,
        flags=flags,
    )


def report_to_text(report: MetricsReport, title='overall', include_timing=False) -> str:
    lines = []

    def section(name, r):
        lines.append(f'[{name}]')
        for key in METRIC_KEYS:
            lines.append(f'{key}: {getattr(r, key):.2f}')
        for key, value in r.rates.items():
            lines.append(f'{key}: {value:.2f}')
        cm = r.confusion
        lines.append(f'tp: {cm.tp}')
        lines.append(f'fp: {cm.fp}')
        lines.append(f'tn: {cm.tn}')
        lines.append(f'fn: {cm.fn}')
        lines.append(f'total: {cm.total}')
        lines.append(f'flags: {",".join(r.flags) if r.flags else "none"}')
        if include_timing and r.detection_time_ms is not None:
            lines.append(f'detection_time_ms: {r.detection_time_ms:.3f}')
        lines.append('')

    section(title, report)
    for name, sub in report.slices.items():
        section(f'{title}/{name}', sub)
    return '\n'.join(lines)


def write_json(doc, path):
    create_folder_for_file(path)
    with open(path, 'w', encoding='utf8') as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def write_confusion_csv(cm: ConfusionMatrix, path):
    create_folder_for_file(path)
    cm.as_table().to_csv(path)
    return path


def export_confusion_png(cm: ConfusionMatrix, path, title=''):
    """Row-normalized heat map in percent, drone row and column first."""
    counts = cm.as_table().values.astype(np.float64)
    rows = counts.sum(axis=1, keepdims=True)
    percent = np.divide(100 * counts, rows, out=np.zeros_like(counts), where=rows > 0)
    fig, ax = plt.subplots(figsize=(3.2, 3.0))
    ax.imshow(percent, cmap='Blues', vmin=0, vmax=100)
    for i in range(2):
        for j in range(2):
            ax.text(j, i, f'{percent[i, j]:.1f}', ha='center', va='center',
                    color='white' if percent[i, j] > 50 else 'black')
    ax.set_xticks([0, 1])
    ax.set_xticklabels(['drone', 'no drone'])
    ax.set_yticks([0, 1])
    ax.set_yticklabels(['drone', 'no drone'])
    ax.set_xlabel('predicted')
    ax.set_ylabel('true')
    if title:
        ax.set_title(title)
    fig.tight_layout()
    create_folder_for_file(path)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
