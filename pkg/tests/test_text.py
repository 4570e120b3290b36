import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazekey.decode import KeyPosterior
from gazekey.errors import InputError
from gazekey.keyboard import resolve_layout
from gazekey.text import (Dictionary, classify_scenario, collapse_runs, expand_identical_keystrokes,
                          infer_typo_corrections, infer_words, recover_text, render_keys,
                          segment_sentence)


def post(i, probs, layout="qwerty"):
    lay = resolve_layout(layout)
    if isinstance(probs, str):
        probs = {probs: 0.9}
    p = np.zeros(len(lay))
    for key, v in probs.items():
        p[lay.index(key)] = v
    return KeyPosterior(i, lay.names, p, 5, lay.name)


def seq(spec, layout="qwerty"):
    return [post(i, s, layout) for i, s in enumerate(spec)]


def word(text):
    return [{"SPACE" if c == " " else c: 0.9} for c in text]


def test_render_keys():
    assert render_keys(["c", "a", "t", "t", "BACKSPACE"]) == "cat"
    assert render_keys(["SHIFT", "h", "i", "NUM", "!", "RETURN"]) == "hi!"


def test_backspace_correction(dictionary):
    spec = word("catt") + [{"BACKSPACE": 0.8, "n": 0.1}]
    out = infer_typo_corrections(seq(spec), dictionary)
    assert "".join(p.best for p in out) == "cat"
    assert recover_text(seq(spec), dictionary, scenario="message").text == "cat"


def test_backspace_reading_discarded_when_unneeded(dictionary):
    spec = word("ca") + [{"t": 0.6, "BACKSPACE": 0.3}]
    out = infer_typo_corrections(seq(spec), dictionary)
    assert [p.best for p in out] == ["c", "a", "t"]
    assert out[-1].prob("BACKSPACE") == 0.0


@pytest.mark.parametrize("typed,meant", [("beter", "better"), ("wek", "week")])
def test_identical_keystrokes(dictionary, typed, meant):
    assert dictionary.resolve(typed) == [meant]
    assert recover_text(seq(word(typed)), dictionary).text == meant


def test_variant_expansion():
    d = expand_identical_keystrokes(Dictionary(["better", "week", "cat"]))
    assert d.resolve("beter") == ["better"] and d.resolve("wek") == ["week"]
    assert "cat" not in d.variants
    assert collapse_runs("bookkeeper") == "bokeper"


def test_dictionary_rejects_non_ascii():
    with pytest.raises(InputError):
        Dictionary(["Hello"])


def test_infer_words(dictionary):
    assert infer_words(seq(word("hello")), dictionary) == ["hello"]
    spec = [{"t": 0.5, "w": 0.4}] + word("here")
    assert infer_words(seq(spec), dictionary) == ["there", "where"]
    assert infer_words(seq([{"q": 0.9}] * 4), dictionary) == []


def test_segment_the_cat(dictionary):
    cands = segment_sentence(seq(word("the cat")), dictionary)
    assert set(cands[0].boundaries) == {3}
    assert cands[0].n_unknown == 0


def test_false_space_rejected(dictionary):
    spec = word("he") + [{"l": 0.7, "SPACE": 0.2}] + word("lo")
    cands = segment_sentence(seq(spec), dictionary)
    assert cands[0].boundaries == ()


def test_out_of_candidates_word_is_one_unknown_segment(dictionary):
    spec = [{c: 0.9, "q": 0.05} for c in "internationalism"]
    spec[5] = {"q": 0.5, "w": 0.2, "a": 0.1, "s": 0.1, "z": 0.05}
    cands = segment_sentence(seq(spec), dictionary)
    assert cands[0].segments == ((0, 16),) and cands[0].unknown == (True,)


@pytest.mark.parametrize("n", range(8, 13))
def test_password_lattice_size(n):
    spec = [{"a": 0.3, "b": 0.2, "c": 0.15, "d": 0.1, "e": 0.05, "f": 0.01}] * n
    posts = [post(i, s) for i, s in enumerate(spec)]
    rec = recover_text(posts, scenario="password")
    assert rec.lattice_size == 5 ** n


def test_scenarios():
    assert classify_scenario(seq([{"1": 0.9}, {"@": 0.8}, {"2": 0.9}], "numberspace")) == "url_email"
    assert classify_scenario(seq(["1", "2", "3", "4"], "pin")) == "passcode"
    assert classify_scenario(seq(word("hi there"))) == "message"


def test_password_and_empty():
    rec = recover_text(seq([{"x": 0.5, "z": 0.4}, {"SHIFT": 0.9}, {"k": 0.9}]), scenario="password")
    assert rec.scenario == "password" and rec.tokens[0].guesses[0] == "x"
    assert recover_text([]).text == ""


def test_unknown_scenario_rejected():
    with pytest.raises(InputError):
        recover_text(seq(word("hi")), scenario="poem")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["the", "cat", "dog", "and", "we", "walk", "home"]), min_size=1, max_size=5))
def test_exact_posteriors_recover_sentence(dictionary, words):
    text = " ".join(words)
    assert recover_text(seq(word(text)), dictionary).text == text
