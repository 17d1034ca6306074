from __future__ import annotations

import itertools

import numpy as np
import pytest


def brute_force_lcs(doc, target):
    """Lexicographically smallest document positions of a longest common subsequence.

    Enumerates document subsets from largest to smallest, each size in
    lexicographic order, and returns the first whose symbols form a
    subsequence of ``target``.
    """
    def is_subseq(seq, of):
        it = iter(of)
        return all(any(x == y for y in it) for x in seq)

    for size in range(min(len(doc), len(target)), 0, -1):
        for combo in itertools.combinations(range(len(doc)), size):
            if is_subseq([doc[i] for i in combo], target):
                return list(combo)
    return []


def brute_force_su4_units(words):
    """Unigrams plus every ordered pair with at most four words between them."""
    units = [("u", w) for w in words]
    for i in range(len(words)):
        for j in range(i + 1, len(words)):
            if j - i - 1 <= 4:
                units.append(("b", words[i], words[j]))
    return units


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
