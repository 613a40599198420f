import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import first_patch_table, first_patch_table_from_trees
from rhmlab.errors import UnknownPatchError
from rhmlab.grammar import RhmInstance, RhmParams, encode_patches, generate, sample_instance
from rhmlab.oracle import (
    audit_assumptions,
    compute_stats,
    cond_label_given_patch,
    patch_probabilities,
    signal_bound,
    transition_matrices,
)
from rhmlab.rng import make_rng


@st.composite
def instances(draw):
    s = draw(st.integers(2, 3))
    V = draw(st.integers(2, 5))
    m = draw(st.integers(1, min(V ** (s - 1), 5)))
    L = draw(st.integers(1, 4))
    return sample_instance(RhmParams(L, s, V, m, draw(st.integers(0, 2**64 - 1))))


# ---------------------------------------------------------------------------
# transition matrices


@given(instances())
def test_transition_matrices_doubly_stochastic(inst):
    for P in transition_matrices(inst):
        assert np.all(P >= 0)
        assert np.allclose(P.sum(axis=1), 1, atol=1e-12, rtol=0)
        assert np.allclose(P.sum(axis=0), 1, atol=1e-12, rtol=0)


def test_m1_rows_are_one_hot():
    inst = sample_instance(RhmParams(3, 2, 5, 1, seed=2))
    for P in transition_matrices(inst):
        assert np.all(np.sort(P, axis=1)[:, -1] == 1.0)
        assert np.all((P == 0) | (P == 1))


def test_transition_entries_match_rule_counts():
    inst = sample_instance(RhmParams(2, 2, 2, 2, seed=4))
    for l, P in enumerate(transition_matrices(inst)):
        counts = np.zeros((2, 2))
        for nu in range(2):
            for patch in inst.rules[l][nu]:
                counts[nu, patch[0]] += 1
        assert np.array_equal(P, counts / 2)


@given(instances())
def test_probability_conservation(inst):
    stats = compute_stats(inst)
    for pref in stats.prefix + [stats.prefix[-1] @ stats.P[-1]]:
        assert np.allclose(pref.sum(axis=0), 1, atol=1e-12, rtol=0)


# ---------------------------------------------------------------------------
# conditional label vectors


def test_level_one_is_one_hot():
    inst = sample_instance(RhmParams(3, 2, 6, 3, seed=1))
    stats = compute_stats(inst)
    q1 = cond_label_given_patch(inst, stats, 1)
    for patch, q in q1.items():
        assert np.array_equal(q, np.eye(6)[inst.decode_map[0][patch]])
    assert abs(stats.rho_emp[0] - math.sqrt(2)) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_q_matches_tree_enumeration(seed):
    inst = sample_instance(RhmParams(2, 2, 3, 2, seed=seed))
    stats = compute_stats(inst)
    for level in (1, 2):
        table = first_patch_table_from_trees(inst, level)
        q = cond_label_given_patch(inst, stats, level)
        p = patch_probabilities(inst, stats, level)
        assert set(table) == set(q)
        for patch, (pp, qq) in table.items():
            assert np.max(np.abs(q[patch] - qq)) <= 1e-12
            assert abs(p[patch] - pp) <= 1e-12


@given(instances())
def test_q_matches_chain_enumeration(inst):
    stats = compute_stats(inst)
    p = inst.params
    for level in range(1, p.L + 1):
        if p.V * p.m**level > 20_000:
            break
        table = first_patch_table(inst, level)
        for patch, (pp, qq) in table.items():
            assert np.max(np.abs(stats.q_of(level, patch) - qq)) <= 1e-12
            assert abs(stats.p_of(level, patch) - pp) <= 1e-12


def test_q_matches_monte_carlo():
    inst = sample_instance(RhmParams(2, 2, 3, 2, seed=0))
    stats = compute_stats(inst)
    data = generate(inst, 1_000_000, make_rng(7), keep_intermediates=False)
    codes = encode_patches(data.tokens[:, :2], 3)
    for patch, q in cond_label_given_patch(inst, stats, 2).items():
        sel = data.labels[codes == int(encode_patches(np.array(patch), 3))]
        freq = np.bincount(sel, minlength=3) / len(sel)
        assert np.max(np.abs(freq - q)) <= 5e-3


@given(instances())
def test_q_is_simplex_and_synonyms_equal(inst):
    stats = compute_stats(inst)
    for level in range(1, inst.params.L + 1):
        q = stats.q[level - 1]
        assert np.all(q >= 0)
        assert np.allclose(q.sum(axis=-1), 1, atol=1e-12, rtol=0)
        for nu in range(inst.params.V):
            for i in range(inst.params.m):
                assert np.array_equal(q[nu, i], q[nu, 0])


def test_unknown_patch():
    inst = sample_instance(RhmParams(2, 2, 4, 1, seed=0))
    stats = compute_stats(inst)
    used = set(inst.decode_map[0])
    missing = next((a, b) for a in range(4) for b in range(4) if (a, b) not in used)
    with pytest.raises(UnknownPatchError):
        stats.q_of(1, missing)
    with pytest.raises(UnknownPatchError):
        cond_label_given_patch(inst, stats, 3)


# ---------------------------------------------------------------------------
# patch probabilities and kappa


@given(instances())
def test_uniform_patch_probabilities(inst):
    p = inst.params
    stats = compute_stats(inst)
    for level in range(1, p.L + 1):
        probs = patch_probabilities(inst, stats, level)
        assert abs(sum(probs.values()) - 1) <= 1e-12
        assert all(abs(v - 1 / (p.m * p.V)) <= 1e-15 for v in probs.values())
    assert stats.kappa == 1.0


def _skewed_instance():
    # symbol 0 opens every rule of symbols 0 and 1, so the first-token chain is not uniform
    rules = (
        (((0, 0), (0, 1)), ((0, 2), (1, 0)), ((2, 1), (2, 2))),
        (((0, 0), (1, 1)), ((1, 0), (0, 1)), ((2, 0), (2, 2))),
    )
    return RhmInstance(RhmParams(2, 2, 3, 2, 0), rules)


def test_nonuniform_patch_probabilities_match_monte_carlo():
    inst = _skewed_instance()
    stats = compute_stats(inst)
    n = 1_000_000
    data = generate(inst, n, make_rng(3))
    codes = encode_patches(data.tokens[:, :2], 3)
    probs = patch_probabilities(inst, stats, 2)
    assert abs(sum(probs.values()) - 1) <= 1e-12
    assert len(set(np.round(list(probs.values()), 12))) > 1
    for patch, pp in probs.items():
        freq = np.mean(codes == int(encode_patches(np.array(patch), 3)))
        assert abs(freq - pp) <= 3 * math.sqrt(pp * (1 - pp) / n) + 1e-12
    # enumeration agrees too
    for patch, (pp, qq) in first_patch_table(inst, 2).items():
        assert abs(probs[patch] - pp) <= 1e-12
    assert stats.kappa > 1


# ---------------------------------------------------------------------------
# invariance under relabeling


def _relabel(inst, perms):
    # perms[l] permutes the level-l alphabet, l = 0..L
    new = []
    for l, lvl in enumerate(inst.rules):
        pa, ch = perms[l], perms[l + 1]
        rows = [None] * inst.params.V
        for nu, patches in enumerate(lvl):
            rows[pa[nu]] = tuple(tuple(int(ch[t]) for t in patch) for patch in patches)
        new.append(tuple(rows))
    return RhmInstance(inst.params, tuple(new))


@given(instances(), st.integers(0, 2**32))
def test_relabeling_invariance(inst, seed):
    rng = make_rng(seed)
    p = inst.params
    perms = [rng.permutation(p.V) for _ in range(p.L + 1)]
    other = _relabel(inst, perms)
    a, b = compute_stats(inst), compute_stats(other)
    assert a.kappa == b.kappa
    assert np.allclose(a.rho_emp, b.rho_emp, atol=1e-12, rtol=0)
    assert sorted(np.round(a.p_patch[-1].ravel(), 12)) == sorted(np.round(b.p_patch[-1].ravel(), 12))


# ---------------------------------------------------------------------------
# audit


def test_audit_report():
    inst = sample_instance(RhmParams(3, 2, 8, 2, seed=5))
    rep = audit_assumptions(inst)
    assert rep.kappa == 1.0
    assert rep.levels[0].rho_emp == pytest.approx(math.sqrt(2), abs=1e-12)
    assert rep.levels[0].bound == 1.0 and rep.levels[0].passed
    assert rep.synonym_q_equal
    d = json.loads(rep.to_json())
    assert set(d) >= {"kappa", "levels", "K_rho_emp"}
    assert [lv["l"] for lv in d["levels"]] == [1, 2, 3]
    assert set(d["levels"][0]) == {"l", "rho_emp", "bound", "pass"}
    assert "kappa" in rep.table()
    K = min(r * 2 ** (l / 2) for l, r in enumerate(compute_stats(inst).rho_emp, start=1))
    assert rep.K_rho_emp == pytest.approx(K, abs=1e-15)


def test_signal_bound_values():
    assert signal_bound(24, 1) == 1.0
    assert signal_bound(24, 3) == pytest.approx(1 / 480)


def test_single_symbol_audit_serializes():
    inst = sample_instance(RhmParams(2, 2, 1, 1, seed=0))
    d = json.loads(audit_assumptions(inst).to_json())
    assert d["kappa"] == 1.0
