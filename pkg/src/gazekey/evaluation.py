"""Dataset evaluation: session, click, top-K, SPACE and word accounting."""

from __future__ import annotations

import csv
import json
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .clicks import click_metrics
from .errors import MissingGroundTruth
from .metrics import Rates, rates
from .pipeline import PipelineConfig, run_pipeline
from .session import segments_from_labels, session_metrics
from .text import SCENARIOS, load_dictionary, render_keys

MAX_K = 5
REPORT_FORMAT = "gazekey-eval"


def space_confusion(predicted, truth) -> Rates:
    """SPACE-vs-character confusion over aligned keystroke flags."""
    p = np.asarray(predicted, dtype=bool)
    y = np.asarray(truth, dtype=bool)
    if p.shape != y.shape:
        raise ValueError("prediction and truth flags differ in length")
    return rates(int((p & y).sum()), int((p & ~y).sum()), int((~p & y).sum()), int((~p & ~y).sum()))


@dataclass
class EvalReport:
    """Aggregated accounting over a labeled dataset.

    ``topk[scenario][k - 1]`` holds character accuracy at K = k over the
    keystrokes matched to a detected fixation; ``topk_counts`` keeps the
    hits behind each rate.  ``word_length`` maps length to
    ``[correct, total]`` (correct = true word within the attempt budget);
    ``passcode_attempts`` maps the 1-based rank of the true PIN (or
    ``"miss"``) to a count.
    """

    seed: int
    config: str
    n_traces: int
    sessions: Rates
    clicks: Rates
    space: Rates
    topk_counts: dict[str, list[int]] = field(default_factory=dict)
    topk_totals: dict[str, int] = field(default_factory=dict)
    word_length: dict[int, list[int]] = field(default_factory=dict)
    passcode_attempts: dict[str, int] = field(default_factory=dict)
    texts: list[dict] = field(default_factory=list)

    @property
    def topk(self) -> dict[str, list[float]]:
        return {sc: [h / self.topk_totals[sc] if self.topk_totals[sc] else 0.0 for h in hits]
                for sc, hits in self.topk_counts.items()}

    @property
    def word_accuracy(self) -> dict[int, float]:
        return {n: c / t for n, (c, t) in sorted(self.word_length.items()) if t}

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "header": {"seed": self.seed, "config": self.config, "n_traces": self.n_traces},
            "sessions": self.sessions.as_dict(),
            "clicks": self.clicks.as_dict(),
            "space_confusion": self.space.as_dict(),
            "topk": self.topk,
            "topk_counts": self.topk_counts,
            "topk_totals": self.topk_totals,
            "word_length": {str(n): ct for n, ct in sorted(self.word_length.items())},
            "passcode_attempts": self.passcode_attempts,
            "texts": self.texts,
        }

    @classmethod
    def from_dict(cls, d) -> EvalReport:
        if d.get("format") != REPORT_FORMAT:
            raise ValueError("not an evaluation report")

        def r(x):
            return Rates(x["tp"], x["fp"], x["fn"], x["tn"], x["precision"], x["recall"],
                         x["accuracy"], tuple(x["undefined"]))

        h = d["header"]
        return cls(h["seed"], h["config"], h["n_traces"], r(d["sessions"]), r(d["clicks"]),
                   r(d["space_confusion"]), {k: list(v) for k, v in d["topk_counts"].items()},
                   dict(d["topk_totals"]), {int(n): list(ct) for n, ct in d["word_length"].items()},
                   dict(d["passcode_attempts"]), list(d["texts"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text) -> EvalReport:
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        return isinstance(other, EvalReport) and self.to_dict() == other.to_dict()

    def write(self, out_dir) -> list[str]:
        """Write report.json, CSV tables and PNG figures; return the paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []

        def table(name, header, rows):
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
            paths.append(path)

        path = os.path.join(out_dir, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps() + "\n")
        paths.append(path)
        table("rates.csv", ["stage", "tp", "fp", "fn", "tn", "precision", "recall", "accuracy"],
              [[name, r.tp, r.fp, r.fn, r.tn, r.precision, r.recall, r.accuracy]
               for name, r in (("sessions", self.sessions), ("clicks", self.clicks),
                               ("space", self.space))])
        table("topk.csv", ["scenario", "k", "accuracy", "hits", "total"],
              [[sc, k + 1, acc[k], self.topk_counts[sc][k], self.topk_totals[sc]]
               for sc, acc in self.topk.items() for k in range(MAX_K)])
        s = self.space
        table("space_confusion.csv", ["predicted", "true_space", "true_character"],
              [["SPACE", s.tp, s.fp], ["character", s.fn, s.tn]])
        table("word_length.csv", ["length", "correct", "total", "accuracy"],
              [[n, c, t, c / t if t else 0.0] for n, (c, t) in sorted(self.word_length.items())])
        table("passcode_attempts.csv", ["attempt", "count"], sorted(self.passcode_attempts.items()))
        paths += plot_report(self, out_dir)
        return paths


def plot_report(report: EvalReport, out_dir) -> list[str]:
    """Accuracy-vs-K curves and the SPACE confusion heatmap as PNG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ks = np.arange(1, MAX_K + 1)
    for sc, acc in report.topk.items():
        ax.plot(ks, acc, marker="o", label=sc)
    ax.set_xlabel("K")
    ax.set_ylabel("character accuracy")
    ax.set_xticks(ks)
    ax.set_ylim(0, 1.02)
    if report.topk:
        ax.legend(loc="lower right")
    fig.tight_layout()
    path = os.path.join(out_dir, "accuracy_vs_k.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    s = report.space
    cells = np.array([[s.tp, s.fp], [s.fn, s.tn]])
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.imshow(cells, cmap="Blues")
    for (i, j), v in np.ndenumerate(cells):
        ax.text(j, i, str(v), ha="center", va="center",
                color="white" if v > cells.max() / 2 else "black")
    ax.set_xticks([0, 1], ["SPACE", "character"])
    ax.set_yticks([0, 1], ["SPACE", "character"])
    ax.set_xlabel("true keystroke")
    ax.set_ylabel("predicted")
    fig.tight_layout()
    path = os.path.join(out_dir, "space_confusion.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def _truth_words(keys, idx):
    """(word, first event, last event + 1) for each space-delimited word.

    ``idx[j]`` is the event matched to true keystroke j, or None.
    """
    words, cur = [], []
    for j, key in enumerate(list(keys) + ["SPACE"]):
        if key == "SPACE":
            if cur:
                word = render_keys([keys[i] for i in cur])
                ev = [idx[i] for i in cur]
                if word.isalpha() and all(e is not None for e in ev):
                    words.append((word, ev[0], ev[-1] + 1))
                elif word.isalpha():
                    words.append((word, None, None))
            cur = []
        elif key not in ("SHIFT", "NUM", "ABC", "SYM", "RETURN"):
            cur.append(j)
    return words


def evaluate(traces, config: PipelineConfig | None = None, *, model=None, dictionary=None,
             results=None) -> EvalReport:
    """Run the pipeline over labeled traces and fold the outcomes together.

    ``results`` may supply precomputed :class:`PipelineResult` objects (one
    per trace), which lets hand-built predictions be scored directly.
    """
    config = config or PipelineConfig()
    traces = list(traces)
    for i, tr in enumerate(traces):
        if tr.labels is None or tr.keystrokes is None:
            raise MissingGroundTruth(f"trace {i} lacks session labels or keystrokes")
    if results is None:
        dictionary = dictionary or load_dictionary(config.dict_path or None)
        results = [run_pipeline(tr, config, model=model, dictionary=dictionary) for tr in traces]

    sess = np.zeros(4, dtype=int)
    clk = np.zeros(3, dtype=int)
    sp = np.zeros(4, dtype=int)
    hits: dict[str, list[int]] = {}
    totals: Counter = Counter()
    words: dict[int, list[int]] = {}
    attempts: Counter = Counter()
    texts = []
    for tr, res in zip(traces, results):
        r = session_metrics(res.segmentation, tr.labels)
        sess += [r.tp, r.fp, r.fn, r.tn]
        cm = click_metrics(res.events, tr.keystrokes, config.tol_ms)
        clk += [cm.rates.tp, cm.rates.fp, cm.rates.fn]
        truth_spans = [(a, b) for a, b, lab in segments_from_labels(tr.labels, tr.t) if lab == "typing"]
        for s in res.sessions:
            keys = [k for k in tr.keystrokes if s.span[0] <= k.t <= s.span[1]]
            pairs = click_metrics(s.events, keys, config.tol_ms).pairs
            idx = [None] * len(keys)
            for ei, kj in pairs:
                idx[kj] = ei
            rec = s.recovered
            sc = rec.scenario
            row = hits.setdefault(sc, [0] * MAX_K)
            for kj, ei in enumerate(idx):
                if ei is None:
                    continue
                totals[sc] += 1
                ranked = s.posteriors[ei].top_keys(MAX_K)
                for k in range(MAX_K):
                    row[k] += keys[kj].key in ranked[:k + 1]
            truth_text = render_keys(k.key for k in keys)
            texts.append({"span": list(s.span), "scenario": sc, "truth": truth_text,
                          "recovered": rec.text,
                          "truth_span": next(([a, b] for a, b in truth_spans
                                              if a <= s.span[1] and s.span[0] <= b), None)})
            if sc == "message":
                bounds = set(rec.diagnostics.get("boundaries", ()))
                for kj, ei in enumerate(idx):
                    if ei is None or keys[kj].key in ("SHIFT", "NUM", "ABC", "SYM"):
                        continue
                    pred, true = ei in bounds, keys[kj].key == "SPACE"
                    sp[0 if pred and true else 1 if pred else 2 if true else 3] += 1
                spans = {t.span: t for t in rec.words}
                for word, a, b in _truth_words([k.key for k in keys], idx):
                    ct = words.setdefault(len(word), [0, 0])
                    ct[1] += 1
                    tok = spans.get((a, b))
                    ct[0] += bool(tok is not None and word in tok.guesses[:config.max_attempts])
            elif sc == "passcode":
                truth_pin = "".join(k.key for k in keys if k.key.isdigit())
                rank = next((g.rank for g in rec.passcodes if g.digits == truth_pin), None)
                attempts[str(rank) if rank is not None else "miss"] += 1
    return EvalReport(
        seed=config.seed, config=config.dumps(), n_traces=len(traces),
        sessions=rates(*sess), clicks=rates(clk[0], clk[1], clk[2]), space=rates(*sp),
        topk_counts={sc: hits[sc] for sc in SCENARIOS if sc in hits},
        topk_totals={sc: totals[sc] for sc in SCENARIOS if sc in hits},
        word_length=dict(sorted(words.items())), passcode_attempts=dict(sorted(attempts.items())),
        texts=texts)
