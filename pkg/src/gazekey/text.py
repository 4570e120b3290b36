"""Recover typed text from per-keystroke key posteriors.

Messages go through three steps.  BACKSPACE readings are either applied as
typo corrections or discarded.  The keystroke sequence is then split into
words at positions where SPACE is among the top candidates.  Finally, each
segment is matched against a frequency-ordered dictionary.  A word matches
if every one of its letters is among the top candidates at the
corresponding keystroke.  Passwords and URLs skip the dictionary and come
out as per-keystroke candidate lattices.  PINs are handed to the passcode
ranker.
"""

from __future__ import annotations

import heapq
import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .decode import DEFAULT_K, KeyPosterior, kbest_products, rank_passcodes
from .errors import InputError

SCENARIOS = ("message", "password", "url_email", "passcode")
KEY_CHARS = {"SPACE": " ", "RETURN": "\n", "BACKSPACE": "\b"}
MODIFIERS = ("SHIFT", "NUM", "ABC", "SYM")
URL_SUFFIXES = (".com", ".edu", ".net", ".us")


def key_char(key) -> str:
    return KEY_CHARS.get(key, key if len(key) == 1 else "")


def render_keys(keys) -> str:
    """Text a key-name sequence produces: toggles vanish, BACKSPACE deletes."""
    out = []
    for key in keys:
        if key == "BACKSPACE":
            if out:
                out.pop()
        elif key not in MODIFIERS:
            out.append(key_char(key))
    return "".join(out).rstrip("\n")


class Dictionary:
    """Frequency-ordered word list with optional run-collapsed variants.

    Matching is a lattice intersection done per word length on uint8 code
    arrays, so a full scan of 10k words costs a few array lookups.
    """

    def __init__(self, words, variants=None):
        words = [w.strip() for w in words if w.strip()]
        bad = [w for w in words if not re.fullmatch(r"[a-z]+", w)]
        if bad:
            raise InputError(f"dictionary words must be lowercase ASCII: {bad[0]!r}")
        self.words = tuple(dict.fromkeys(words))
        self._rank = {w: i for i, w in enumerate(self.words)}
        # variant spelling -> ranks of the words it stands for
        self.variants: dict[str, tuple[int, ...]] = dict(variants or {})
        self.max_len = max((len(w) for w in self.words), default=0)
        entries: dict[int, list[tuple[str, int]]] = {}
        for w, r in self._rank.items():
            entries.setdefault(len(w), []).append((w, r))
        for v, ranks in self.variants.items():
            for r in ranks:
                entries.setdefault(len(v), []).append((v, r))
        self._by_len = {}
        for n, items in entries.items():
            codes = np.frombuffer("".join(w for w, _ in items).encode("ascii"), dtype=np.uint8).reshape(-1, n)
            self._by_len[n] = (codes, np.array([r for _, r in items]))

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._rank or word in self.variants

    def rank(self, word) -> int | None:
        return self._rank.get(word)

    def resolve(self, spelling) -> list[str]:
        """Dictionary words a spelling stands for, most frequent first."""
        ranks = set(self.variants.get(spelling, ()))
        if spelling in self._rank:
            ranks.add(self._rank[spelling])
        return [self.words[r] for r in sorted(ranks)]

    def match(self, table) -> list[tuple[int, float, str]]:
        """Words allowed by a (L, 256) per-position probability table.

        A character is allowed where its table entry is positive.  Returns
        (rank, log-probability, spelling) per matching word, best spelling
        per word, in rank order.
        """
        n = len(table)
        if n not in self._by_len:
            return []
        codes, ranks = self._by_len[n]
        vals = table[np.arange(n)[None, :], codes]
        ok = np.all(vals > 0, axis=1)
        if not ok.any():
            return []
        logp = np.log(vals[ok]).sum(axis=1)
        best: dict[int, tuple[float, str]] = {}
        for r, lp, c in zip(ranks[ok], logp, codes[ok]):
            r = int(r)
            if r not in best or lp > best[r][0]:
                best[r] = (float(lp), c.tobytes().decode("ascii"))
        return [(r, lp, sp) for r, (lp, sp) in sorted(best.items())]


def collapse_runs(word) -> str:
    return re.sub(r"(.)\1+", r"\1", word)


def expand_identical_keystrokes(d: Dictionary) -> Dictionary:
    """Add run-collapsed spellings ("beter" -> "better") that resolve to the original."""
    variants: dict[str, set[int]] = {v: set(r) for v, r in d.variants.items()}
    for w in d.words:
        v = collapse_runs(w)
        if v != w:
            variants.setdefault(v, set()).add(d.rank(w))
    return Dictionary(d.words, {v: tuple(sorted(r)) for v, r in variants.items()})


def load_dictionary(path=None, *, variants=True) -> Dictionary:
    """Load a one-word-per-line list (default: the bundled 10k English words)."""
    if path is None:
        text = resources.files("gazekey").joinpath("data/words.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    d = Dictionary(text.split())
    return expand_identical_keystrokes(d) if variants else d


# ---------------------------------------------------------------------------
# Scenario


def top1_string(posteriors) -> str:
    return "".join(key_char(p.best) for p in posteriors)


def classify_scenario(posteriors, layout=None, k=DEFAULT_K) -> str:
    """Rule-based scenario: passcode, url_email, password or message."""
    posteriors = list(posteriors)
    if not posteriors:
        raise InputError("need at least one keystroke")
    name = layout if isinstance(layout, str) or layout is None else layout.name
    if name == "pin" or all(p.layout == "pin" for p in posteriors):
        return "passcode"
    tops = [p.top_keys(k) for p in posteriors]
    top1 = top1_string(posteriors).rstrip("\n")
    if any("@" in t for t in tops) or top1.endswith(URL_SUFFIXES):
        return "url_email"
    if not any("SPACE" in t for t in tops) and re.search(r"[^a-z]", top1.replace("\n", "")):
        return "password"
    return "message"


# ---------------------------------------------------------------------------
# Message decoding


def _prob_table(posteriors, k=DEFAULT_K) -> np.ndarray:
    """(L, 256) probability of each lowercase letter among each keystroke's top-k."""
    table = np.zeros((len(posteriors), 256))
    for i, p in enumerate(posteriors):
        for key, prob in p.topk(k):
            # zero-mass keys only pad the top-k list; they are not candidates
            if len(key) == 1 and "a" <= key <= "z" and prob > 0:
                table[i, ord(key)] = prob
    return table


def word_matches(posteriors, dictionary: Dictionary, k=DEFAULT_K):
    if not posteriors or len(posteriors) > dictionary.max_len:
        return []
    return dictionary.match(_prob_table(posteriors, k))


def infer_words(posteriors, dictionary: Dictionary, max_attempts=5, k=DEFAULT_K) -> list[str]:
    """Dictionary words consistent with the top-k sets, most frequent first."""
    return [dictionary.words[r] for r, _, _ in word_matches(posteriors, dictionary, k)][:max_attempts]


def _spans(posteriors):
    """Provisional word spans between keystrokes whose top-1 is SPACE."""
    spans, start = [], 0
    for i, p in enumerate(posteriors):
        if p.best == "SPACE":
            spans.append((start, i))
            start = i + 1
    spans.append((start, len(posteriors)))
    return spans


def infer_typo_corrections(posteriors, dictionary: Dictionary, k=DEFAULT_K) -> list[KeyPosterior]:
    """Apply or discard each BACKSPACE reading in the top-k.

    A BACKSPACE at i removes itself and keystroke i-1 when that leaves a
    dictionary word for the surrounding span.  It is skipped when the word
    already reads fine without the deletion, unless BACKSPACE is the top-1
    key.  Unused BACKSPACE readings are zeroed.
    """
    seq = list(posteriors)
    i = 0
    while i < len(seq):
        p = seq[i]
        if "BACKSPACE" not in p.top_keys(k):
            i += 1
            continue
        span = next(((s, e) for s, e in _spans(seq) if s <= i < e), None)
        if span is None:
            seq[i] = p.without("BACKSPACE")
            i += 1
            continue
        a, b = span
        deleted = seq[a:i - 1] + seq[i + 1:b] if i - 1 >= a else None
        kept = seq[a:i] + [p.without("BACKSPACE")] + seq[i + 1:b]
        apply = (deleted is not None and bool(word_matches(deleted, dictionary, k))
                 and (p.best == "BACKSPACE" or not word_matches(kept, dictionary, k)))
        if apply:
            seq = seq[:i - 1] + seq[i + 1:]
            i -= 1
        else:
            seq[i] = p.without("BACKSPACE")
            i += 1
    return [p.renumbered(j) for j, p in enumerate(seq)]


@dataclass(frozen=True)
class SegmentationCandidate:
    """Space positions chosen among the candidates, and the word segments."""

    boundaries: tuple[int, ...]
    segments: tuple[tuple[int, int], ...]
    unknown: tuple[bool, ...]
    log_likelihood: float

    @property
    def n_unknown(self) -> int:
        return sum(self.unknown)


def literal_run(posteriors) -> str | None:
    """Top-1 string when every keystroke reads as a digit or symbol, else None.

    Numbers and punctuation typed inside a message are kept verbatim
    rather than forced onto dictionary words.
    """
    chars = [p.best for p in posteriors]
    if chars and all(len(c) == 1 and not c.isalpha() for c in chars):
        return "".join(chars)
    return None


def _segment_score(posteriors, a, b, dictionary, k):
    """(is_unknown, log-likelihood) for keystrokes [a, b)."""
    seg = posteriors[a:b]
    top1 = float(sum(np.log(max(p.topk(1)[0][1], 1e-300)) for p in seg))
    if literal_run(seg) is not None:
        return False, top1
    m = word_matches(seg, dictionary, k)
    if m:
        return False, max(lp for _, lp, _ in m)
    return True, top1


def segment_sentence(posteriors, dictionary: Dictionary, k=DEFAULT_K, n_best=5) -> list[SegmentationCandidate]:
    """Best segmentations at SPACE-candidate positions, best first.

    Ranked by fewest unknown segments, then fewest keystrokes inside
    unknown segments, then highest likelihood.  Unknown segments are only
    used where no dictionary-backed split exists.
    """
    seq = list(posteriors)
    n = len(seq)
    if n == 0:
        return []
    cands = [i for i, p in enumerate(seq) if "SPACE" in p.top_keys(k)]
    space_lp = {i: math.log(max(seq[i].prob("SPACE"), 1e-300)) for i in cands}
    # nodes are segment starts: 0 and one past every candidate space
    starts = [0] + [c + 1 for c in cands]
    ends = cands + [n]
    best: dict[int, list] = {0: [((0, 0, 0.0), (), ())]}
    cache = {}
    for end in sorted(set(ends)):
        node = end + 1 if end < n else None
        options = []
        for a in starts:
            if a >= end or a not in best:
                continue
            key = (a, end)
            if key not in cache:
                cache[key] = _segment_score(seq, a, end, dictionary, k)
            unk, lp = cache[key]
            extra = space_lp[end] if end < n else 0.0
            for (u, ul, neg), bnd, segs in best[a]:
                cost = (u + unk, ul + (end - a if unk else 0), neg - lp - extra)
                options.append((cost, bnd + ((end,) if end < n else ()), segs + ((a, end, unk),)))
        if not options:
            continue
        top = heapq.nsmallest(n_best, options, key=lambda o: (o[0], o[1]))
        if node is None:
            best["end"] = top
        else:
            best[node] = top
    if "end" not in best:
        return []
    out = []
    for (u, ul, neg), bnd, segs in best["end"]:
        out.append(SegmentationCandidate(bnd, tuple((a, b) for a, b, _ in segs),
                                         tuple(unk for _, _, unk in segs), -neg))
    return out


# ---------------------------------------------------------------------------
# Results


@dataclass(frozen=True)
class Token:
    """One recovered unit.

    ``guesses`` is the attempt order (dictionary rank for words, posterior
    order for lattice positions); ``best`` is the single most likely reading.
    """

    kind: str
    span: tuple[int, int]
    guesses: tuple[str, ...] = ()
    best: str = ""
    n_matches: int = 0

    def attempts(self, truth) -> int | None:
        """1-based attempt at which ``truth`` is guessed, or None."""
        try:
            return self.guesses.index(truth) + 1
        except ValueError:
            return None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "span": list(self.span), "guesses": list(self.guesses),
                "best": self.best, "n_matches": self.n_matches}


@dataclass(frozen=True)
class RecoveredText:
    scenario: str
    tokens: tuple[Token, ...] = ()
    passcodes: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def text(self) -> str:
        if self.scenario == "passcode":
            return self.passcodes[0].digits if self.passcodes else ""
        if self.scenario == "message":
            return " ".join(t.best for t in self.tokens)
        # toggles stay in the lattice but render as nothing
        return "".join(t.best for t in self.tokens if t.best not in MODIFIERS)

    @property
    def words(self) -> list[Token]:
        return [t for t in self.tokens if t.kind == "word"]

    @property
    def lattice_size(self) -> int:
        """Number of strings in the per-keystroke candidate lattice."""
        return math.prod(len(t.guesses) for t in self.tokens) if self.tokens else 0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "text": self.text,
            "tokens": [t.to_dict() for t in self.tokens],
            "passcodes": [{"digits": g.digits, "probability": g.probability, "residual": g.residual,
                           "rank": g.rank} for g in self.passcodes],
            "diagnostics": self.diagnostics,
        }


def _strip_modifiers(posteriors):
    """Drop toggles, a trailing RETURN and SPACE readings at either end."""
    seq = [p for p in posteriors if p.best not in MODIFIERS]
    if seq and seq[-1].best == "RETURN":
        seq = seq[:-1]
    a, b = 0, len(seq)
    while a < b and seq[a].best == "SPACE":
        a += 1
    while b > a and seq[b - 1].best == "SPACE":
        b -= 1
    return seq[a:b]


def _best_word(matches, dictionary):
    lp_max = max(lp for _, lp, _ in matches)
    # ties between spellings go to the more frequent word
    r = min(r for r, lp, _ in matches if lp >= lp_max - 1e-12)
    return dictionary.words[r]


def recover_message(posteriors, dictionary: Dictionary, k=DEFAULT_K, max_attempts=5) -> RecoveredText:
    """Typo inference, segmentation and word ranking.

    Token spans and ``diagnostics["boundaries"]`` refer to the posteriors'
    own ``index`` values, i.e. fixation numbers within the session.
    """
    seq = infer_typo_corrections(_strip_modifiers(posteriors), dictionary, k)
    cands = segment_sentence(seq, dictionary, k)
    diag = {"keystrokes": len(seq), "segmentations": len(cands)}
    if not cands:
        return RecoveredText("message", (), (), diag)
    chosen = cands[0]
    diag["boundaries"] = [seq[b].index for b in chosen.boundaries]
    tokens = []
    for (a, b), unk in zip(chosen.segments, chosen.unknown):
        seg = seq[a:b]
        span = (seq[a].index, seq[b - 1].index + 1)
        if unk:
            tokens.append(Token("unknown", span, (), "".join(key_char(p.best) for p in seg)))
            continue
        lit = literal_run(seg)
        if lit is not None:
            tokens.append(Token("literal", span, (lit,), lit, 1))
            continue
        m = word_matches(seg, dictionary, k)
        guesses = tuple(dictionary.words[r] for r, _, _ in m[:max_attempts])
        tokens.append(Token("word", span, guesses, _best_word(m, dictionary), len(m)))
    return RecoveredText("message", tuple(tokens), (), diag)


def recover_lattice(posteriors, scenario, k=DEFAULT_K) -> RecoveredText:
    tokens = []
    for p in posteriors:
        cands = tuple(key_char(c) or c for c in p.top_keys(k))
        tokens.append(Token("literal", (p.index, p.index + 1), cands, cands[0], len(cands)))
    return RecoveredText(scenario, tuple(tokens), (), {"keystrokes": len(tokens)})


def recover_passcode(posteriors, pin_points=None, max_guesses=10, sigma=None) -> RecoveredText:
    if pin_points is not None:
        guesses = rank_passcodes(pin_points, "pin", max_guesses, sigma)
    else:
        from .decode import PasscodeGuess

        digits = [i for i, name in enumerate(posteriors[0].keys) if name.isdigit()]
        rows = [p.probs[digits] for p in posteriors]
        names = [posteriors[0].keys[i] for i in digits]
        guesses = [PasscodeGuess("".join(names[j] for j in idx), prob, float("nan"), r + 1)
                   for r, (prob, idx) in enumerate(kbest_products(rows, max_guesses))]
    return RecoveredText("passcode", (), tuple(guesses), {"keystrokes": len(posteriors)})


def recover_text(posteriors, dictionary: Dictionary | None = None, *, scenario=None, layout=None,
                 k=DEFAULT_K, max_attempts=5, pin_points=None, max_guesses=10, sigma=None) -> RecoveredText:
    """Classify the scenario (unless given) and route to the matching decoder."""
    posteriors = list(posteriors)
    if not posteriors:
        return RecoveredText(scenario or "message")
    scenario = scenario or classify_scenario(posteriors, layout, k)
    if scenario not in SCENARIOS:
        raise InputError(f"unknown scenario {scenario!r}")
    if scenario == "passcode":
        return recover_passcode(posteriors, pin_points, max_guesses, sigma)
    if scenario in ("password", "url_email"):
        return recover_lattice(posteriors, scenario, k)
    return recover_message(posteriors, dictionary or load_dictionary(), k, max_attempts)
