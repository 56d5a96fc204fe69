"""Regenerate src/robustbench/data/mini_corpus.jsonl.

Ten small tasks in the HumanEval record shape.  Half keep the whole
function in the prompt (so the code transforms have bodies to rewrite)
with an empty reference solution; the other half are standard
signature-plus-docstring prompts completed by canonical_solution.  No task
splits a body across prompt and solution: a half-tabbed, half-spaced body
would be a TabError after indentation transforms.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from robustbench.corpus import Task, load_corpus, save_corpus, validate_task

TASKS = []


def add(task_id, prompt, entry_point, canonical_solution, test):
    TASKS.append(Task(task_id, prompt, entry_point, canonical_solution, test))


add(
    "MiniEval/0",
    '''from typing import List


def has_close_elements(numbers: List[float], threshold: float) -> bool:
    """ Check if in given list of numbers, are any two numbers closer to each other than
    given threshold.
    >>> has_close_elements([1.0, 2.0, 3.0], 0.5)
    False
    >>> has_close_elements([1.0, 2.8, 3.0, 4.0, 5.0, 2.0], 0.3)
    True
    """
''',
    "has_close_elements",
    """    for idx, elem in enumerate(numbers):
        for idx2, elem2 in enumerate(numbers):
            if idx != idx2:
                distance = abs(elem - elem2)
                if distance < threshold:
                    return True

    return False
""",
    """

METADATA = {
    'author': 'jt',
    'dataset': 'test'
}


def check(candidate):
    assert candidate([1.0, 2.0, 3.9, 4.0, 5.0, 2.2], 0.3) == True
    assert candidate([1.0, 2.0, 3.9, 4.0, 5.0, 2.2], 0.05) == False
    assert candidate([1.0, 2.0, 5.9, 4.0, 5.0], 0.95) == True
    assert candidate([1.0, 2.0, 5.9, 4.0, 5.0], 0.8) == False
    assert candidate([1.0, 2.0, 3.0, 4.0, 5.0, 2.0], 0.1) == True
    assert candidate([1.1, 2.2, 3.1, 4.1, 5.1], 1.0) == True
    assert candidate([1.1, 2.2, 3.1, 4.1, 5.1], 0.5) == False

""",
)

add(
    "MiniEval/1",
    '''def rolling_max(numbers):
    """
    From a given list of integers, generate a list of rolling maximum element found until given moment in the sequence.
    >>> rolling_max([1, 2, 3, 2, 3, 4, 2])
    [1, 2, 3, 3, 3, 4, 4]
    """
    running_max = None
    result = []

    for n in numbers:
        if running_max is None:
            running_max = n
        else:
            running_max = max(running_max, n)
        result.append(running_max)
    return result
''',
    "rolling_max",
    "",
    """

def check(candidate):
    assert candidate([]) == []
    assert candidate([1, 2, 3, 4]) == [1, 2, 3, 4]
    assert candidate([4, 3, 2, 1]) == [4, 4, 4, 4]
    assert candidate([1, 2, 3, 2, 3, 4, 2]) == [1, 2, 3, 3, 3, 4, 4]

""",
)

add(
    "MiniEval/2",
    '''def truncate_number(number: float) -> float:
    """ Given a positive floating point number, it can be decomposed into
    and integer part (largest integer smaller than given number) and decimals
    (leftover part always smaller than 1).

    Return the decimal part of the number.
    >>> truncate_number(3.5)
    0.5
    """
''',
    "truncate_number",
    "    return number % 1.0\n",
    """

def check(candidate):
    assert candidate(3.5) == 0.5
    assert abs(candidate(1.33) - 0.33) < 1e-6
    assert abs(candidate(123.456) - 0.456) < 1e-6

""",
)

add(
    "MiniEval/3",
    '''def count_even(values):
    """
    Count how many numbers in the given list are even.
    >>> count_even([1, 2, 3, 4])
    2
    """
    total = 0
    for v in values:
        if v % 2 == 0:
            total = total + 1
    return total
''',
    "count_even",
    "",
    """

def check(candidate):
    assert candidate([]) == 0
    assert candidate([1, 3, 5]) == 0
    assert candidate([2, 4, 6]) == 3
    assert candidate([1, 2, 3, 4]) == 2

""",
)

add(
    "MiniEval/4",
    '''def string_reverse(text: str) -> str:
    """ Return the given text with its characters in reverse order.
    >>> string_reverse('abc')
    'cba'
    """
''',
    "string_reverse",
    "    return text[::-1]\n",
    """

def check(candidate):
    assert candidate('abc') == 'cba'
    assert candidate('') == ''
    assert candidate('ab') == 'ba'
    assert candidate('racecar') == 'racecar'

""",
)

add(
    "MiniEval/5",
    '''def clamp_values(numbers, low, high):
    """
    Replace each number smaller than low with low and each number larger than high with high.
    >>> clamp_values([1, 5, 9], 2, 8)
    [2, 5, 8]
    """
    result = []
    for n in numbers:
        if n < low:
            result.append(low)
        elif n > high:
            result.append(high)
        else:
            result.append(n)
    return result
''',
    "clamp_values",
    "",
    """

def check(candidate):
    assert candidate([1, 5, 9], 2, 8) == [2, 5, 8]
    assert candidate([], 0, 1) == []
    assert candidate([-5, 0, 5], -1, 1) == [-1, 0, 1]
    assert candidate([3], 1, 9) == [3]

""",
)

add(
    "MiniEval/6",
    '''def sum_positive(numbers: list) -> int:
    """ Compute the sum of the positive numbers in the given list.
    >>> sum_positive([1, -2, 3])
    4
    """
''',
    "sum_positive",
    """    total = 0
    for n in numbers:
        if n > 0:
            total = total + n
    return total
""",
    """

def check(candidate):
    assert candidate([1, -2, 3]) == 4
    assert candidate([]) == 0
    assert candidate([-1, -2]) == 0
    assert candidate([5, 5]) == 10

""",
)

add(
    "MiniEval/7",
    '''def first_index_of(items, target):
    """
    Find the position of the first occurrence of target in the items list, or -1 when target is absent.
    >>> first_index_of([3, 7, 9], 7)
    1
    """
    index = 0
    while index < len(items):
        if items[index] == target:
            return index
        index += 1
    return -1
''',
    "first_index_of",
    "",
    """

def check(candidate):
    assert candidate([3, 7, 9], 7) == 1
    assert candidate([], 3) == -1
    assert candidate([1, 1], 1) == 0
    assert candidate([5], 9) == -1

""",
)

add(
    "MiniEval/8",
    '''def scale_values(numbers, factor):
    """ Multiply every number in the given list by the factor and return the scaled list.
    >>> scale_values([1, 2], 3)
    [3, 6]
    """
''',
    "scale_values",
    "    return [n * factor for n in numbers]\n",
    """

def check(candidate):
    assert candidate([1, 2], 3) == [3, 6]
    assert candidate([], 5) == []
    assert candidate([0, -1], 2) == [0, -2]

""",
)

add(
    "MiniEval/9",
    '''def longest_word(words):
    """
    From a given list of words, generate the word with the maximum length, keeping the first on ties.
    >>> longest_word(['hi', 'alpha', 'beta'])
    'alpha'
    """
    best = ''
    for word in words:
        if len(word) > len(best):
            best = word
    return best
''',
    "longest_word",
    "",
    """

def check(candidate):
    assert candidate(['hi', 'alpha', 'beta']) == 'alpha'
    assert candidate([]) == ''
    assert candidate(['aa', 'bb']) == 'aa'
    assert candidate(['x', 'yy', 'zz']) == 'yy'

""",
)


def main():
    out = Path(__file__).resolve().parents[1] / "src" / "robustbench" / "data" / "mini_corpus.jsonl"
    for task in TASKS:
        validate_task(task)
        program = task.prompt + task.canonical_solution + "\n" + task.test
        program += f"\ncheck({task.entry_point})\n"
        exec(compile(program, task.task_id, "exec"), {})  # reference solutions must pass
    save_corpus(TASKS, out)
    assert load_corpus(out, validate=True) == TASKS
    print(f"wrote {len(TASKS)} tasks to {out}")


if __name__ == "__main__":
    main()
