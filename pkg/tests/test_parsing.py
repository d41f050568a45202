import pytest
from hypothesis import given
from hypothesis import strategies as st

from thinkgrpo.parsing import (
    DictMatcher,
    MatchUnavailable,
    NullMatcher,
    ProviderMatcher,
    count_tags,
    match_choice,
    parse_output,
    resolve_choice,
)

OPTS = (("A", "wait"), ("B", "call emergency services"), ("C", "open a window"))


@pytest.mark.parametrize(
    "text,counts",
    [
        ("<think>a</think><answer>B</answer>", (1, 1, 1, 1)),
        ("<think><think>x</think><answer>B</answer>", (2, 1, 1, 1)),
        ("", (0, 0, 0, 0)),
        ("</answer></answer>", (0, 0, 0, 2)),
    ],
)
def test_count_tags(text, counts):
    assert count_tags(text).as_tuple() == counts


def test_parse_well_formed():
    p = parse_output("<think>r</think>\n<answer>A</answer>")
    assert p.well_formed and p.think_text == "r" and p.answer_text == "A"


@pytest.mark.parametrize(
    "text",
    [
        "<answer>A</answer><think>r</think>",
        "junk <think>r</think><answer>A</answer>",
        "<think>r</think><answer>A</answer> trailing",
        "<think>r</think><answer>A",
        "<think>r<think></think><answer>A</answer>",
        "<think>r</think><answer>A</answer><answer>B</answer>",
        "",
    ],
)
def test_parse_malformed(text):
    p = parse_output(text)
    assert not p.well_formed
    assert p.think_text is None and p.answer_text is None


@pytest.mark.parametrize(
    "answer,expected",
    [
        ("B", "B"),
        ("b", "B"),
        ("(c)", "C"),
        ("The answer is (C).", "C"),
        ("Answer: A", "A"),
        ("B. because it is safe", "B"),
        ("I choose option A", "A"),
        ("call emergency services", "B"),
        ("you should call emergency services now", "B"),
        ("Wait", "A"),
        ("both A and B", None),
        ("A or C", None),
        ("something else entirely", None),
        ("", None),
        ("a window", "C"),
    ],
)
def test_match_choice(answer, expected):
    assert match_choice(answer, OPTS) == expected


def test_letter_outside_options_is_ignored():
    assert match_choice("F", OPTS) is None


def test_containment_must_be_unique():
    opts = (("A", "go left"), ("B", "go right"))
    assert match_choice("go", opts) is None


def test_fallback_matchers():
    assert NullMatcher().match("anything", OPTS) is None
    m = DictMatcher({"foo": "A"})
    assert resolve_choice("foo", OPTS, m) == "A"
    assert resolve_choice("bar", OPTS, m) is None
    # rule hits never consult the fallback
    assert resolve_choice("B", OPTS, DictMatcher({"B": "C"})) == "B"
    # results outside the option set are dropped
    assert resolve_choice("foo", OPTS, DictMatcher({"foo": "Z"})) is None


class _Reply:
    def __init__(self, reply=None, exc=None):
        self.reply, self.exc = reply, exc

    def generate(self, prompt):
        if self.exc:
            raise self.exc
        return self.reply


def test_provider_matcher():
    assert resolve_choice("foo", OPTS, ProviderMatcher(_Reply(" c. "))) == "C"
    assert resolve_choice("foo", OPTS, ProviderMatcher(_Reply("NONE"))) is None
    with pytest.raises(MatchUnavailable):
        resolve_choice("foo", OPTS, ProviderMatcher(_Reply(exc=TimeoutError("down"))))


_inner = st.text(alphabet="abc xyz.\n", max_size=20)


@given(_inner, _inner, st.sampled_from(["", " ", "\n  "]))
def test_well_formed_outputs_have_one_of_each_tag(think, answer, gap):
    text = f"{gap}<think>{think}</think>{gap}<answer>{answer}</answer>{gap}"
    p = parse_output(text)
    assert p.well_formed
    assert p.think_text == think and p.answer_text == answer
    assert count_tags(text).as_tuple() == (1, 1, 1, 1)


@given(st.lists(st.sampled_from(["<think>", "</think>", "<answer>", "</answer>", "x", " "]), max_size=12))
def test_parse_never_raises_and_implies_tag_counts(pieces):
    text = "".join(pieces)
    p = parse_output(text)
    if p.well_formed:
        assert count_tags(text).as_tuple() == (1, 1, 1, 1)
