"""Hand-scored reward fixtures shared by the unit and acceptance tests.

Every expected value below was worked out by hand from the reward
definitions; none of them is produced by the library.
"""

from thinkgrpo.tasks import TaskInstance

NUM_TASK = TaskInstance(
    "num-1", "", "which option is the largest number ?",
    (("A", "3"), ("B", "17"), ("C", "5")), "B",
)
CHOICE_TASK = TaskInstance(
    "choice-1", "you see smoke in the hall .", "what should you do ?",
    (("A", "wait"), ("B", "leave the building"), ("C", "open a window")), "B",
)
TASKS = {t.id: t for t in (NUM_TASK, CHOICE_TASK)}


def words(n):
    return " ".join(["step"] * n)


def wrap(think, answer):
    return f"<think>{think}</think><answer>{answer}</answer>"


# (name, stage, task id, text, r_tag, r_format, r_accuracy, r_len, total)
CASES = [
    # stage 1: acc + format + 0.5 * tag, numeric comparison
    ("s1 perfect", 1, "num-1", wrap("compare", "17"), 1.0, 1.0, 1.0, 0.0, 2.5),
    ("s1 wrong number", 1, "num-1", wrap("x", "3"), 1.0, 1.0, 0.0, 0.0, 1.5),
    ("s1 leading zero", 1, "num-1", wrap("x", "017"), 1.0, 1.0, 1.0, 0.0, 2.5),
    ("s1 decimal form", 1, "num-1", wrap("x", "17.0"), 1.0, 1.0, 1.0, 0.0, 2.5),
    ("s1 plus sign", 1, "num-1", wrap("x", "+17"), 1.0, 1.0, 1.0, 0.0, 2.5),
    ("s1 letter on numeric", 1, "num-1", wrap("x", "B"), 1.0, 1.0, 0.0, 0.0, 1.5),
    ("s1 spelled number", 1, "num-1", wrap("x", "seventeen"), 1.0, 1.0, 0.0, 0.0, 1.5),
    ("s1 no think close", 1, "num-1", "<think>x<answer>17</answer>", 0.75, 0.0, 0.0, 0.0, 0.375),
    ("s1 bare answer", 1, "num-1", "17", 0.0, 0.0, 0.0, 0.0, 0.0),
    ("s1 no answer close", 1, "num-1", "<think>x</think><answer>17", 0.75, 0.0, 0.0, 0.0, 0.375),
    ("s1 doubled think open", 1, "num-1", "<think><think>x</think><answer>17</answer>",
     0.75, 0.0, 0.0, 0.0, 0.375),
    ("s1 reversed blocks", 1, "num-1", "<answer>17</answer><think>x</think>", 1.0, 0.0, 0.0, 0.0, 0.5),
    ("s1 leading junk", 1, "num-1", "junk " + wrap("x", "17"), 1.0, 0.0, 0.0, 0.0, 0.5),
    ("s1 whitespace padding", 1, "num-1", "  <think>x</think>\n<answer> 17 </answer>  ",
     1.0, 1.0, 1.0, 0.0, 2.5),
    ("s1 empty think", 1, "num-1", wrap("", "17"), 1.0, 1.0, 1.0, 0.0, 2.5),
    ("s1 junk between blocks", 1, "num-1", "<think>x</think> more <answer>17</answer>",
     1.0, 0.0, 0.0, 0.0, 0.5),
    ("s1 only closers", 1, "num-1", "</think></think></think>", 0.0, 0.0, 0.0, 0.0, 0.0),
    ("s1 doubled answer close", 1, "num-1", wrap("x", "17") + "</answer>", 0.75, 0.0, 0.0, 0.0, 0.375),
    ("s1 empty text", 1, "num-1", "", 0.0, 0.0, 0.0, 0.0, 0.0),
    ("s1 letter on choice task", 1, "choice-1", wrap("x", "B"), 1.0, 1.0, 1.0, 0.0, 2.5),
    ("s1 wrong letter on choice task", 1, "choice-1", wrap("x", "C"), 1.0, 1.0, 0.0, 0.0, 1.5),
    # stage 2: acc + 0.8 * format + 0.5 * len, option matching
    ("s2 perfect 250 words", 2, "choice-1", wrap(words(250), "B"), 0.0, 1.0, 1.0, 1.0, 2.3),
    ("s2 125 words", 2, "choice-1", wrap(words(125), "B"), 0.0, 1.0, 1.0, 0.5, 2.05),
    ("s2 500 words capped", 2, "choice-1", wrap(words(500), "B"), 0.0, 1.0, 1.0, 1.0, 2.3),
    ("s2 empty think", 2, "choice-1", wrap("", "B"), 0.0, 1.0, 1.0, 0.0, 1.8),
    ("s2 long but wrong", 2, "choice-1", wrap(words(250), "A"), 0.0, 1.0, 0.0, 1.0, 1.3),
    ("s2 malformed wrong", 2, "choice-1", "leave the building", 0.0, 0.0, 0.0, 0.0, 0.0),
    ("s2 malformed long", 2, "choice-1", words(300) + " B", 0.0, 0.0, 0.0, 0.0, 0.0),
    ("s2 parenthesised letter", 2, "choice-1", wrap("x", "(B)"), 0.0, 1.0, 1.0, 0.004, 1.802),
    ("s2 lead-in", 2, "choice-1", wrap("x", "The answer is B"), 0.0, 1.0, 1.0, 0.004, 1.802),
    ("s2 option text", 2, "choice-1", wrap("x", "leave the building"), 0.0, 1.0, 1.0, 0.004, 1.802),
    ("s2 lower case letter", 2, "choice-1", wrap("x", "b."), 0.0, 1.0, 1.0, 0.004, 1.802),
    ("s2 two letters", 2, "choice-1", wrap("x", "A or B"), 0.0, 1.0, 0.0, 0.004, 0.802),
    ("s2 choose wrong", 2, "choice-1", wrap("x", "I choose option C"), 0.0, 1.0, 0.0, 0.004, 0.802),
    ("s2 contained word", 2, "choice-1", wrap("x", "leave"), 0.0, 1.0, 1.0, 0.004, 1.802),
    ("s2 contained wrong", 2, "choice-1", wrap("x", "window"), 0.0, 1.0, 0.0, 0.004, 0.802),
    ("s2 number by text", 2, "num-1", wrap("x", "17"), 0.0, 1.0, 1.0, 0.004, 1.802),
    ("s2 unmatched text", 2, "choice-1", wrap("two words", "call someone"), 0.0, 1.0, 0.0, 0.008, 0.804),
]
