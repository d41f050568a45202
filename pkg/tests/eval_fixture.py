"""Hand-built 20-record evaluation fixture with known per-bin outcomes."""

from thinkgrpo.evaluation import EvalRecord, SampleResult

LETTERS = "ABCD"


def transcript(n_words, choice):
    return f"<think>{' '.join(['w'] * n_words)}</think><answer>{choice}</answer>"


def sample(choice, gold):
    if choice is None:
        return SampleResult("no tags at all", False, None, False)
    return SampleResult(transcript(1, choice), True, choice, choice == gold)


def record(i, n_words, greedy_correct, votes, gold="A"):
    wrong = "B" if gold != "B" else "C"
    g = greedy_correct and gold or wrong
    greedy = SampleResult(transcript(n_words, g), True, g, g == gold)
    return EvalRecord(f"r{i:02d}", gold, greedy, [sample(v, gold) for v in votes])


# Think lengths 1..20 give quintile cut points 4, 8, 12, 16, so bin b holds
# lengths 4b-3..4b. Greedy correctness is arranged so bin b has 5-b hits.
GREEDY = [True] * 4 + [True, True, True, False] + [True, True, False, False] \
    + [True, False, False, False] + [False] * 4

VOTES = [
    ["A", "A", "B", "A", "C", "A", "B", "A"],  # majority A, pass
    ["A", "B", "A", "B"],                      # tie, lowest letter A
    [None, None],                              # no answer
    ["B", "C", "A"],                           # pass only
    ["B", "B"],                                # neither
    [None, "A"],                               # majority A (None ignored)
    ["C", "C", "A", "A", "B"],                 # tie A/C -> A
    ["D"],
    ["A"],
    ["B", "B", "B", "A"],
    ["C", "B", "C", "B", "A", "A", "A"],
    [None, None, "B"],
    ["A", "A"],
    ["D", "C", "B"],
    ["B", "A", "A", "C", "C"],                 # tie A/C -> A
    ["C"],
    [None],
    ["A", "B", "C", "D"],                      # four-way tie -> A
    ["B", "A"],                                # tie -> A
    ["C", "D", "D"],
]

RECORDS = [record(i, i + 1, GREEDY[i], VOTES[i]) for i in range(20)]

# Expected values, worked out by hand from the lists above.
MAJORITY = ["A", "A", None, "A", "B", "A", "A", "D", "A", "B",
            "A", "B", "A", "B", "A", "C", None, "A", "A", "D"]
PASS1 = [True, True, False, True, False, True, True, False, True, True,
         True, False, True, False, True, False, False, True, True, False]
BIN_TABLE = [(1, 4, 4, 4), (2, 8, 4, 3), (3, 12, 4, 2), (4, 16, 4, 1), (5, None, 4, 0)]
