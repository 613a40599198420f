"""Exact statistics of an RHM instance along the first-patch chain.

``P[l-1]`` is the level-``l`` transition matrix: ``P_l[nu, mu]`` is the
probability that the first level-``l`` token is ``mu`` given the first
level-``(l-1)`` token is ``nu``. With the uniform label prior the conditional
label distribution given the first level-``l`` patch depends only on the
patch's parent ``nu`` and is the normalised column ``nu`` of
``P_1 ... P_{l-1}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownPatchError
from .grammar import RhmInstance, encode_patches


def transition_matrices(instance: RhmInstance) -> list[np.ndarray]:
    """``[P_1, ..., P_L]`` with ``P_l[nu, mu] = #{rules of nu starting with mu} / m``."""
    p = instance.params
    out = []
    for l in range(p.L):
        first = instance.rule_array[l][:, :, 0]  # (V, m)
        P = np.zeros((p.V, p.V))
        np.add.at(P, (np.repeat(np.arange(p.V), p.m), first.ravel()), 1.0)
        out.append(P / p.m)
    return out


@dataclass(frozen=True)
class TransitionStats:
    """Exact first-patch statistics.

    Attributes
    ----------
    P : ``L`` transition matrices.
    pi : ``L + 1`` marginals of the first token, ``pi[0]`` uniform.
    prefix : ``prefix[l-1] = P_1 ... P_{l-1}`` (identity for ``l = 1``).
    q : ``q[l-1]`` is a ``(V, m, V)`` array; ``q[l-1][nu, i]`` is the label
        distribution given the first level-``l`` patch is ``rules[l-1][nu][i]``.
    p_patch : ``p_patch[l-1][nu, i]``, probability of that first patch.
    kappa, rho_emp, K_rho_emp : see :func:`compute_stats`.
    """

    P: list
    pi: list
    prefix: list
    q: list
    p_patch: list
    kappa: float
    rho_emp: list
    K_rho_emp: float
    _codes: np.ndarray = field(repr=False)

    def q_of(self, level: int, patch) -> np.ndarray:
        """Conditional label vector of a single level-``level`` patch (tuple or code)."""
        nu, i = self._locate(level, patch)
        return self.q[level - 1][nu, i]

    def p_of(self, level: int, patch) -> float:
        nu, i = self._locate(level, patch)
        return float(self.p_patch[level - 1][nu, i])

    def _locate(self, level: int, patch) -> tuple[int, int]:
        V = self.P[0].shape[0]
        code = int(patch) if np.isscalar(patch) else int(encode_patches(np.asarray(patch), V))
        hit = np.argwhere(self._codes[level - 1] == code)
        if hit.size == 0:
            raise UnknownPatchError(f"patch {patch} is not in the level-{level} patch set")
        return int(hit[0, 0]), int(hit[0, 1])


def _label_given_parent(prefix: np.ndarray) -> np.ndarray:
    # Bayes with uniform labels: column nu of the prefix product, normalised.
    col = prefix.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = prefix / col[None, :]
    return np.where(col[None, :] > 0, out, 0.0)


def compute_stats(instance: RhmInstance) -> TransitionStats:
    """All exact first-patch statistics of ``instance``.

    ``kappa`` is ``max_{l, mu} 1 / (p_mu |P_l|)``; ``rho_emp[l-1]`` is the
    minimum distance between conditional label vectors of non-synonym level-``l``
    patches; ``K_rho_emp = min_l rho_emp[l-1] * m**(l/2)``.
    """
    p = instance.params
    V, m = p.V, p.m
    P = transition_matrices(instance)
    pi = [np.full(V, 1.0 / V)]
    for Pl in P:
        pi.append(pi[-1] @ Pl)
    prefix = [np.eye(V)]
    for Pl in P[:-1]:
        prefix.append(prefix[-1] @ Pl)
    q, p_patch, rho = [], [], []
    kappa = 0.0
    for l in range(1, p.L + 1):
        by_parent = _label_given_parent(prefix[l - 1]).T  # (V parents, V labels)
        # Synonyms share the parent's row, so their vectors are bitwise equal.
        q.append(np.repeat(by_parent[:, None, :], m, axis=1))
        pp = np.repeat((pi[l - 1] / m)[:, None], m, axis=1)
        p_patch.append(pp)
        kappa = max(kappa, float(np.max(1.0 / (pp * V * m))))
        rho.append(_min_nonsynonym_distance(by_parent))
    K = min(r * m ** (l / 2) for l, r in enumerate(rho, start=1))
    return TransitionStats(P, pi, prefix, q, p_patch, kappa, rho, float(K), instance.rule_codes)


def _min_nonsynonym_distance(by_parent: np.ndarray) -> float:
    # Non-synonym patches are exactly the pairs with distinct parents, and all
    # patches of one parent share its vector, so scanning parent pairs is exact.
    V = by_parent.shape[0]
    if V < 2:
        return float("inf")
    diff = by_parent[:, None, :] - by_parent[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(V, 1)
    return float(d[iu].min())


def cond_label_given_patch(instance: RhmInstance, stats: TransitionStats, level: int) -> dict:
    """Map each level-``level`` patch (as a tuple) to its conditional label vector."""
    p = instance.params
    if not 1 <= level <= p.L:
        raise UnknownPatchError(f"level {level} outside 1..{p.L}")
    rules = instance.rule_array[level - 1]
    return {tuple(int(t) for t in rules[nu, i]): stats.q[level - 1][nu, i] for nu in range(p.V) for i in range(p.m)}


def patch_probabilities(instance: RhmInstance, stats: TransitionStats, level: int) -> dict:
    """Map each level-``level`` patch to the probability of being the first patch."""
    p = instance.params
    rules = instance.rule_array[level - 1]
    return {
        tuple(int(t) for t in rules[nu, i]): float(stats.p_patch[level - 1][nu, i])
        for nu in range(p.V)
        for i in range(p.m)
    }


@dataclass
class LevelAudit:
    l: int
    rho_emp: float
    bound: float
    passed: bool


def _finite(x: float):
    # V = 1 has no non-synonym pairs; JSON has no infinity
    return x if np.isfinite(x) else None


@dataclass
class AuditReport:
    """Non-degeneracy and signal audit of one instance."""

    kappa: float
    levels: list[LevelAudit]
    K_rho_emp: float
    synonym_q_equal: bool

    @property
    def passes_signal_bound(self) -> bool:
        return all(lv.passed for lv in self.levels)

    def to_dict(self) -> dict:
        return {
            "kappa": self.kappa,
            "levels": [
                {"l": lv.l, "rho_emp": _finite(lv.rho_emp), "bound": lv.bound, "pass": lv.passed} for lv in self.levels
            ],
            "K_rho_emp": _finite(self.K_rho_emp),
            "synonym_q_equal": self.synonym_q_equal,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), allow_nan=False)

    def table(self) -> str:
        lines = [f"kappa      {self.kappa:.6g}", f"K_rho_emp  {self.K_rho_emp:.6g}", "", "  l   rho_emp      bound        pass"]
        for lv in self.levels:
            lines.append(f"  {lv.l:<3d} {lv.rho_emp:<12.6g} {lv.bound:<12.6g} {'yes' if lv.passed else 'NO'}")
        lines.append(f"synonym q-vectors equal: {'yes' if self.synonym_q_equal else 'NO'}")
        return "\n".join(lines)


def signal_bound(m: int, l: int) -> float:
    """Lower bound ``(20 m)**(-(l-1)/2)`` on the level-``l`` signal for randomly sampled rules."""
    return (20.0 * m) ** (-(l - 1) / 2)


def audit_assumptions(instance: RhmInstance, stats: TransitionStats | None = None) -> AuditReport:
    """Report kappa, per-level signal versus its high-probability lower bound, and K_rho."""
    stats = stats or compute_stats(instance)
    m = instance.params.m
    levels = []
    for l, r in enumerate(stats.rho_emp, start=1):
        b = signal_bound(m, l)
        levels.append(LevelAudit(l, float(r), b, bool(r >= b)))
    syn = all(np.array_equal(qs[nu, i], qs[nu, 0]) for qs in stats.q for nu in range(qs.shape[0]) for i in range(qs.shape[1]))
    return AuditReport(stats.kappa, levels, stats.K_rho_emp, syn)
