"""Brute-force reference computations used by the tests.

Nothing here imports the statistics or solver code under test; each oracle
recomputes its quantity from first principles (tree enumeration, augmented
least squares, exhaustive averages over the cube).
"""

import itertools
from collections import defaultdict
from fractions import Fraction

import numpy as np


def enumerate_trees(instance):
    """Every full derivation tree with its exact probability.

    Yields ``(prob, label, levels)`` where ``levels[l]`` is the level-``l``
    sequence (``levels[0] == (label,)``, ``levels[L]`` the sentence) and
    ``prob`` is a ``Fraction``.
    """
    p = instance.params
    rules = instance.rules
    for label in range(p.V):
        yield from _expand(rules, p, Fraction(1, p.V), [(label,)])


def _expand(rules, p, prob, levels):
    l = len(levels) - 1
    if l == p.L:
        yield prob, levels[0][0], tuple(levels)
        return
    seq = levels[-1]
    for choice in itertools.product(range(p.m), repeat=len(seq)):
        nxt = tuple(t for sym, c in zip(seq, choice) for t in rules[l][sym][c])
        yield from _expand(rules, p, prob * Fraction(1, p.m ** len(seq)), levels + [nxt])


def first_patch_table(instance, level):
    """``{patch: (p_patch, q_vector)}`` for the first level-``level`` patch, by enumeration.

    Only the chain of first symbols matters for the first patch, so paths are
    enumerated over the first symbol of each level (``V * m**level`` paths).
    Exact rational arithmetic; converted to float at the end.
    """
    p = instance.params
    joint = defaultdict(lambda: [Fraction(0)] * p.V)
    for label in range(p.V):
        for choice in itertools.product(range(p.m), repeat=level):
            sym = label
            prob = Fraction(1, p.V)
            for l in range(level - 1):
                sym = instance.rules[l][sym][choice[l]][0]
                prob *= Fraction(1, p.m)
            patch = tuple(instance.rules[level - 1][sym][choice[level - 1]])
            joint[patch][label] += prob * Fraction(1, p.m)
    out = {}
    for patch, row in joint.items():
        tot = sum(row)
        out[patch] = (float(tot), np.array([float(r / tot) for r in row]))
    return out


def first_patch_table_from_trees(instance, level):
    """Same as :func:`first_patch_table` but from full derivation trees."""
    p = instance.params
    joint = defaultdict(lambda: [Fraction(0)] * p.V)
    for prob, label, levels in enumerate_trees(instance):
        joint[tuple(levels[level][: p.s])][label] += prob
    out = {}
    for patch, row in joint.items():
        tot = sum(row)
        out[patch] = (float(tot), np.array([float(r / tot) for r in row]))
    return out


def ridge_lstsq(X, Y, lam, weights=None):
    """Ridge minimizer via least squares on the augmented system ``[sqrt(w) X; sqrt(lam) I]``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, D = X.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float) / np.sum(weights)
    A = np.vstack([np.sqrt(w)[:, None] * X, np.sqrt(lam) * np.eye(D)])
    B = np.vstack([np.sqrt(w)[:, None] * Y, np.zeros((D, Y.shape[1]))])
    sol, *_ = np.linalg.lstsq(A, B, rcond=None)
    return sol.T


def cube(d):
    return np.array(list(itertools.product([1.0, -1.0], repeat=d)))


def fourier_coefficient(f_values, x, S):
    """Exhaustive ``E[f(x) chi_S(x)]`` over the uniform cube."""
    chi = np.prod(x[:, sorted(S)], axis=1) if S else np.ones(len(x))
    return float(np.mean(f_values * chi))
