"""Command-line entry point.

Exit status is 0 on success, 2 for bad input or usage and 3 when a
pipeline stage fails.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import os
import sys

import numpy as np

from . import __version__, clicks
from .decode import KeyPosterior, sigma_from_policy
from .errors import GazeKeyError, InputError, PipelineError
from .keyboard import locate_keyboard, resolve_layout
from .pipeline import (PipelineConfig, choose_layout, drop_stray_edges, find_sessions, load_config,
                       resolve_threshold, run_pipeline)
from .trace import load_trace, save_keystrokes, save_trace

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE = 0, 2, 3

# flag -> config key
CONFIG_FLAGS = {
    "window": int, "threshold": str, "sigma": str, "k": int, "tol_ms": float, "dict_path": str,
    "layout": str, "model_path": str, "sessions": str, "seed": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _config_args(p):
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--config", metavar="PATH", help="key=value config file; flags override it")
    g.add_argument("--window", type=int, help="stability window in frames")
    g.add_argument("--threshold", help="saccade threshold, or 'estimate'")
    g.add_argument("--sigma", help="gaze noise: number in key pitches or 'quarter-pitch'")
    g.add_argument("-k", "--k", type=int, help="candidates kept per keystroke")
    g.add_argument("--tol-ms", dest="tol_ms", type=float, help="click matching tolerance")
    g.add_argument("--dict", dest="dict_path", metavar="PATH", help="word list, one per line")
    g.add_argument("--layout", help="auto, qwerty, numberspace, pin or a layout CSV")
    g.add_argument("--model", dest="model_path", metavar="PATH", help="session model checkpoint")
    g.add_argument("--sessions", choices=("model", "labels", "all"), help="how typing spans are found")
    g.add_argument("--seed", type=int, help="seed recorded with the run")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    over = {k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k, None) is not None}
    for item in args.set:
        if "=" not in item:
            raise InputError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        over[k.strip()] = v.strip()
    return cfg.with_overrides(over)


def _trace_args(p):
    p.add_argument("--trace", default="-", metavar="PATH", help="trace CSV ('-' for stdin)")
    p.add_argument("--keys", metavar="PATH", help="keystroke sidecar CSV")


def _load(args):
    return load_trace(args.trace, args.keys)


def _write_json(obj, out=None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=float)
    if out and out != "-":
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _csv_out(out=None):
    if out and out != "-":
        return open(out, "w", encoding="utf-8", newline="")
    return sys.stdout


def _sessions_and_events(trace, cfg):
    seg = find_sessions(trace, cfg)
    spans = seg.typing_spans
    if not spans:
        return seg, []
    stab = clicks.stability(trace, cfg.window)
    thr = resolve_threshold(stab, spans, cfg)
    per = []
    for span in spans:
        ev = [e for e in clicks.segment_keystrokes(stab, thr, span, trace, min_fixation_ms=cfg.min_fixation_ms)
              if len(e)]
        per.append((span, ev))
    return seg, per


# ---------------------------------------------------------------------------
# subcommands


def cmd_analyze(args):
    cfg = _config(args)
    res = run_pipeline(_load(args), cfg)
    doc = res.to_dict()
    doc["text"] = res.text
    doc["config"] = cfg.dumps()
    _write_json(doc, args.out)


def cmd_segment(args):
    cfg = _config(args)
    trace = _load(args)
    if args.spans:
        with open(args.spans, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            spans = [(float(r["start_ms"]), float(r["end_ms"])) for r in rows]
        except (KeyError, ValueError):
            raise InputError("spans file needs start_ms,end_ms columns") from None
        stab = clicks.stability(trace, cfg.window)
        thr = resolve_threshold(stab, spans, cfg)
        per = [(s, [e for e in clicks.segment_keystrokes(stab, thr, s, trace,
                                                         min_fixation_ms=cfg.min_fixation_ms) if len(e)])
               for s in spans]
    else:
        _, per = _sessions_and_events(trace, cfg)
    fh = _csv_out(args.out)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["start_ms", "end_ms"])
    for _, events in per:
        for e in events:
            w.writerow([repr(e.start_t), repr(e.end_t)])
    if fh is not sys.stdout:
        fh.close()


def cmd_locate(args):
    cfg = _config(args)
    _, per = _sessions_and_events(_load(args), cfg)
    out = []
    sigma = sigma_from_policy(cfg.sigma)
    for span, events in per:
        events = drop_stray_edges(events, 2 * cfg.pin_pitch_deg)
        if not events:
            continue
        layout = choose_layout(events, cfg)
        vecs = [e.vectors() for e in events]
        if layout == "pin":
            frame = locate_keyboard(vecs, layout, upright=True, sigma=sigma,
                                    fixed_scale=float(np.tan(np.radians(cfg.pin_pitch_deg))))
        else:
            frame = locate_keyboard(vecs, layout, sigma=sigma)
        out.append({"span": list(span), "layout": layout, "keyboard": frame.to_dict()})
    _write_json({"sessions": out}, args.out)


def cmd_decode(args):
    cfg = _config(args)
    res = run_pipeline(_load(args), cfg)
    fh = _csv_out(args.out)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["idx"] + [f"{c}{j}" for j in range(1, cfg.k + 1) for c in ("k", "p")])
    idx = 0
    for s in res.sessions:
        for p in s.posteriors:
            row = [idx]
            for key, prob in p.topk(cfg.k):
                row += [key, repr(prob)]
            w.writerow(row)
            idx += 1
    if fh is not sys.stdout:
        fh.close()


def read_topk(source, layout="qwerty") -> list[KeyPosterior]:
    """Posteriors rebuilt from a decode CSV; unlisted keys get probability 0.

    Rows may mix the letter and number layers, so unless ``layout`` is the
    PIN pad the key set is the union of both.
    """
    lay = resolve_layout(layout)
    if lay.name == "pin":
        names = lay.names
    else:
        names = tuple(dict.fromkeys(resolve_layout("qwerty").names + resolve_layout("numberspace").names))
    fh = sys.stdin if source == "-" else open(source, encoding="utf-8", newline="")
    try:
        rows = list(csv.reader(fh))
    finally:
        if fh is not sys.stdin:
            fh.close()
    if not rows or not rows[0] or rows[0][0] != "idx":
        raise InputError("top-K table needs an idx,k1,p1,... header")
    k = (len(rows[0]) - 1) // 2
    posts = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        probs = np.zeros(len(names))
        for key, p in zip(row[1::2], row[2::2]):
            if key not in names:
                raise InputError(f"line {ln}: unknown key {key!r}")
            probs[names.index(key)] = float(p)
        posts.append(KeyPosterior(int(row[0]), names, probs, k, lay.name))
    return posts


def cmd_recover(args):
    from .text import load_dictionary, recover_text

    cfg = _config(args)
    if args.topk:
        layout = "qwerty" if cfg.layout == "auto" else cfg.layout
        posts = read_topk(args.topk, layout)
        rec = recover_text(posts, load_dictionary(cfg.dict_path or None), layout=layout, k=cfg.k,
                           max_attempts=cfg.max_attempts, max_guesses=cfg.max_guesses)
        _write_json({"recovered": [rec.to_dict()], "text": rec.text}, args.out)
        return
    res = run_pipeline(_load(args), cfg)
    _write_json({"recovered": [s.recovered.to_dict() for s in res.sessions], "text": res.text}, args.out)


def _trace_files(path):
    if os.path.isdir(path):
        files = sorted(f for f in glob.glob(os.path.join(path, "*.csv")) if not f.endswith(".keys.csv"))
    else:
        files = [path]
    if not files:
        raise InputError(f"no trace CSV files under {path}")
    out = []
    for f in files:
        side = f[:-4] + ".keys.csv"
        out.append(load_trace(f, side if os.path.exists(side) else None))
    return out


def cmd_train(args):
    from .session import (TrainConfig, classify_sessions, save_model, session_metrics, split_traces,
                          train_session_model)
    from .synth import session_dataset

    if args.data:
        traces = _trace_files(args.data)
    else:
        traces = session_dataset(args.synthetic, args.seed)
    train, held = split_traces(traces, args.holdout, args.seed) if args.holdout > 0 else (traces, [])
    cfg = TrainConfig(hidden=args.hidden, epochs=args.epochs, seed=args.seed)
    model = train_session_model(
        train, cfg, log=(lambda ep, loss: print(f"epoch {ep:3d} loss {loss:.4f}", file=sys.stderr))
        if args.verbose else None)
    save_model(model, args.out)
    summary = {"model": args.out, "train_traces": len(train), "heldout_traces": len(held)}
    if held:
        tp = fp = fn = tn = 0
        for tr in held:
            r = session_metrics(classify_sessions(model, tr), tr.labels)
            tp, fp, fn, tn = tp + r.tp, fp + r.fp, fn + r.fn, tn + r.tn
        summary["heldout_frame_accuracy"] = (tp + tn) / max(1, tp + fp + fn + tn)
    _write_json(summary)


def cmd_synth(args):
    from .synth import DistractorSpec, SceneConfig, TypingSpec, TypistProfile, compose_scenario

    profile = TypistProfile.noiseless() if args.noiseless else TypistProfile()
    over = {}
    if args.noise is not None:
        over["noise_deg"] = args.noise
    if args.micro_prob is not None:
        over["micro_prob"] = args.micro_prob
    if over:
        import dataclasses

        profile = dataclasses.replace(profile, **over)
    scene = SceneConfig(roll_deg=args.roll, camera_yaw=args.camera_yaw, camera_pitch=args.camera_pitch)
    text = args.text.encode("utf-8").decode("unicode_escape") if args.escapes else args.text
    segs = [DistractorSpec(args.lead_ms), TypingSpec(text, args.layout, press_return=args.press_return),
            DistractorSpec(args.trail_ms)]
    trace = compose_scenario([s for s in segs if not isinstance(s, DistractorSpec) or s.duration_ms > 0],
                             args.seed, profile=profile, scene=scene)
    save_trace(trace, args.out)
    keys = args.keys
    if keys is None and args.out != "-":
        keys = args.out[:-4] + ".keys.csv" if args.out.endswith(".csv") else args.out + ".keys.csv"
    if keys:
        save_keystrokes(trace.keystrokes, keys)


def cmd_eval(args):
    from .evaluation import evaluate
    from .synth import session_dataset

    cfg = _config(args)
    if args.data:
        traces = _trace_files(args.data)
    else:
        traces = session_dataset(args.synthetic, cfg.seed)
    report = evaluate(traces, cfg)
    if args.out:
        report.write(args.out)
    sys.stdout.write(report.dumps() + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gazekey", description="Keystroke inference from gaze traces.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    a = sub.add_parser("analyze", help="full pipeline, JSON report on stdout")
    _trace_args(a)
    _config_args(a)
    a.add_argument("--out", help="write the report here instead of stdout")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("segment", help="fixation list as CSV start_ms,end_ms")
    _trace_args(s)
    _config_args(s)
    s.add_argument("--spans", metavar="PATH", help="typing spans CSV start_ms,end_ms (skips the session model)")
    s.add_argument("--out")
    s.set_defaults(func=cmd_segment)

    lo = sub.add_parser("locate", help="keyboard frame per typing session, JSON")
    _trace_args(lo)
    _config_args(lo)
    lo.add_argument("--out")
    lo.set_defaults(func=cmd_locate)

    d = sub.add_parser("decode", help="top-K table as CSV idx,k1,p1,...")
    _trace_args(d)
    _config_args(d)
    d.add_argument("--out")
    d.set_defaults(func=cmd_decode)

    r = sub.add_parser("recover", help="recovered text report, JSON")
    _trace_args(r)
    _config_args(r)
    r.add_argument("--topk", metavar="PATH", help="decode CSV to recover from instead of a trace")
    r.add_argument("--out")
    r.set_defaults(func=cmd_recover)

    t = sub.add_parser("train", help="train the session classifier")
    t.add_argument("--data", metavar="DIR", help="labeled trace CSVs (default: synthetic)")
    t.add_argument("--synthetic", type=int, default=30, metavar="N", help="synthetic traces to generate")
    t.add_argument("--holdout", type=float, default=0.0, help="held-out fraction to score")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, metavar="PATH")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    y = sub.add_parser("synth", help="synthetic trace plus keystroke sidecar")
    y.add_argument("--text", required=True)
    y.add_argument("--layout", default="qwerty")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--noise", type=float, help="gaze noise in degrees")
    y.add_argument("--micro-prob", type=float, help="chance of a corrective micro-saccade")
    y.add_argument("--noiseless", action="store_true", help="zero noise, no micro-saccades")
    y.add_argument("--roll", type=float, default=0.0, help="keyboard roll in degrees")
    y.add_argument("--camera-yaw", type=float, default=0.0)
    y.add_argument("--camera-pitch", type=float, default=0.0)
    y.add_argument("--lead-ms", type=float, default=5000.0, help="distractor activity before typing")
    y.add_argument("--trail-ms", type=float, default=5000.0, help="distractor activity after typing")
    y.add_argument("--press-return", action="store_true")
    y.add_argument("--escapes", action="store_true", help="interpret backslash escapes in --text")
    y.add_argument("--out", default="-", help="trace CSV ('-' for stdout)")
    y.add_argument("--keys", metavar="PATH", help="keystroke sidecar (default: <out>.keys.csv)")
    y.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="evaluation report over a labeled dataset")
    e.add_argument("--data", metavar="DIR", help="directory of trace CSVs with .keys.csv sidecars")
    e.add_argument("--synthetic", type=int, default=10, metavar="N", help="synthetic traces when --data is absent")
    _config_args(e)
    e.add_argument("--out", metavar="DIR", help="write report.json, CSV tables and PNG figures here")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except BrokenPipeError:
        return EXIT_OK
    except PipelineError as exc:
        print(f"gazekey: pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except (GazeKeyError, OSError, ValueError) as exc:
        print(f"gazekey: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
