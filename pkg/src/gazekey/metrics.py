"""Confusion-count rates shared by the session, click and SPACE evaluations."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Rates:
    tp: int
    fp: int
    fn: int
    tn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    accuracy: float = 0.0
    # names of rates whose denominator was zero (reported as 0.0)
    undefined: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "precision": self.precision, "recall": self.recall,
                "accuracy": self.accuracy, "undefined": list(self.undefined)}


def rates(tp, fp, fn, tn=0) -> Rates:
    """Precision TP/(TP+FP), recall TP/(TP+FN), accuracy (TP+TN)/total."""
    tp, fp, fn, tn = (int(x) for x in (tp, fp, fn, tn))
    if min(tp, fp, fn, tn) < 0:
        raise ValueError("counts must be non-negative")
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    p = ratio(tp, tp + fp, "precision")
    r = ratio(tp, tp + fn, "recall")
    a = ratio(tp + tn, tp + fp + fn + tn, "accuracy")
    return Rates(tp, fp, fn, tn, p, r, a, tuple(undefined))
