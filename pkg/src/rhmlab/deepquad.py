"""Deep quadratic boolean functions and their layerwise learner.

A target on ``{-1, 1}^d`` is ``f = sum_S c_S chi_S`` with ``chi_S(x) = prod_{i in S} x_i``.
Its support is a forest: level-1 sets are disjoint pairs of coordinates, and
each level-``(k+1)`` set is the union of two level-``k`` sets, so level ``k``
holds disjoint sets of size ``2**k``.

The learner recovers the forest one level at a time. At level ``l`` the units
are the monomials ``y^(l-1)`` found so far (the coordinates for ``l = 1``); it
correlates the current residual with every product of two units, keeps the
pairs above ``c_min / 2`` (greedily disjoint, strongest first), and subtracts
the fitted level before moving up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AmbiguousSupportError, DomainError, ParseError, RejectedParametersError, UndefinedModelError


@dataclass(frozen=True, eq=False)
class DeepQuadTarget:
    """``levels[k-1]`` lists the size-``2**k`` support sets; ``coef`` maps each set to ``c_S``."""

    d: int
    levels: tuple
    coef: dict

    def check(self) -> None:
        for k, sets in enumerate(self.levels, start=1):
            seen: set = set()
            for S in sets:
                if len(S) != 2**k:
                    raise RejectedParametersError(f"level {k} set {sorted(S)} does not have size {2**k}")
                if seen & S:
                    raise RejectedParametersError(f"level {k} sets overlap at {sorted(seen & S)}")
                if not all(0 <= i < self.d for i in S):
                    raise RejectedParametersError(f"set {sorted(S)} has indices outside [0, {self.d})")
                seen |= S
                if k > 1 and len(split_set(S, self.levels[k - 2])) != 2:
                    raise RejectedParametersError(f"set {sorted(S)} is not a union of two level-{k - 1} sets")
            if any(S not in self.coef for S in sets):
                raise RejectedParametersError(f"level {k} has sets without coefficients")

    @property
    def support(self) -> list:
        return [S for sets in self.levels for S in sets]

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "levels": [[{"set": sorted(S), "coef": float(self.coef[S])} for S in sets] for sets in self.levels],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DeepQuadTarget":
        try:
            levels = tuple(tuple(frozenset(int(i) for i in e["set"]) for e in lv) for lv in obj["levels"])
            coef = {frozenset(int(i) for i in e["set"]): float(e["coef"]) for lv in obj["levels"] for e in lv}
            t = cls(int(obj["d"]), levels, coef)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed target: {exc}") from None
        t.check()
        return t


def split_set(S: frozenset, lower: tuple) -> list:
    """The lower-level sets contained in ``S``."""
    return [T for T in lower if T <= S]


def sample_target(d: int, level_sizes, c_min: float, rng: np.random.Generator) -> DeepQuadTarget:
    """Random forest with ``level_sizes[k-1]`` sets at level ``k``.

    Level 1 pairs randomly chosen coordinates; each higher level pairs randomly
    chosen sets of the level below. Coefficients are uniform on
    ``[-1, -c_min] u [c_min, 1]``.
    """
    sizes = [int(n) for n in level_sizes]
    if not sizes or any(n < 1 for n in sizes):
        raise RejectedParametersError("level sizes must be positive")
    if 2 * sizes[0] > d:
        raise RejectedParametersError(f"{sizes[0]} disjoint pairs do not fit in d = {d}")
    for k in range(1, len(sizes)):
        if 2 * sizes[k] > sizes[k - 1]:
            raise RejectedParametersError(f"level {k + 1} needs {2 * sizes[k]} units but level {k} has {sizes[k - 1]}")
    if not 0 < c_min <= 1:
        raise RejectedParametersError(f"c_min must lie in (0, 1], got {c_min}")
    perm = rng.permutation(d)
    levels = [tuple(frozenset(int(i) for i in perm[2 * j : 2 * j + 2]) for j in range(sizes[0]))]
    for n in sizes[1:]:
        below = levels[-1]
        order = rng.permutation(len(below))
        levels.append(tuple(below[order[2 * j]] | below[order[2 * j + 1]] for j in range(n)))
    coef = {}
    for sets in levels:
        for S in sets:
            coef[S] = float(rng.choice([-1.0, 1.0]) * rng.uniform(c_min, 1.0))
    target = DeepQuadTarget(int(d), tuple(levels), coef)
    target.check()
    return target


def _check_pm1(x: np.ndarray, d: int) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != d:
        raise DomainError(f"inputs must have {d} coordinates, got shape {x.shape}")
    if not np.all((x == 1) | (x == -1)):
        raise DomainError("inputs must have entries in {-1, +1}")
    return x.astype(np.float64)


def chi(S, x: np.ndarray) -> np.ndarray:
    """Parity ``prod_{i in S} x_i`` along the last axis."""
    idx = sorted(S)
    return np.prod(x[..., idx], axis=-1) if idx else np.ones(x.shape[:-1])


def eval_target(target: DeepQuadTarget, x) -> np.ndarray | float:
    x = _check_pm1(x, target.d)
    out = sum(target.coef[S] * chi(S, x) for S in target.support) if target.support else np.zeros(x.shape[:-1])
    return float(out) if np.ndim(out) == 0 else out


def all_inputs(d: int) -> np.ndarray:
    """All ``2**d`` points of the cube, shape ``(2**d, d)``."""
    bits = (np.arange(2**d)[:, None] >> np.arange(d)[None, :]) & 1
    return 1.0 - 2.0 * bits


# ---------------------------------------------------------------------------
# samplers: (n, rng) -> (x, y, weights)

Sampler = Callable[[int, np.random.Generator], tuple]


def iid_sampler(target: DeepQuadTarget) -> Sampler:
    def draw(n, rng):
        x = 1.0 - 2.0 * rng.integers(0, 2, size=(n, target.d))
        return x, eval_target(target, x), None

    return draw


def exhaustive_sampler(target: DeepQuadTarget) -> Sampler:
    """Every input once with weight ``2**-d`` (exact expectations; ``n`` is ignored)."""
    x = all_inputs(target.d)
    y = eval_target(target, x)
    w = np.full(len(x), 1.0 / len(x))
    return lambda n, rng: (x, y, w)


# ---------------------------------------------------------------------------
# learner


@dataclass(frozen=True)
class DeepQuadLevel:
    pairs: tuple  # (i, j) indices into the units of the level below
    coef: tuple


@dataclass
class DeepQuadModel:
    d: int
    c_min: float
    levels: list = field(default_factory=list)

    def units(self, x: np.ndarray, upto: int | None = None) -> list[np.ndarray]:
        """``[y^(0), y^(1), ...]``; ``y^(0) = x`` and ``y^(l)_k = y^(l-1)_i y^(l-1)_j``."""
        out = [x]
        for lv in self.levels[:upto]:
            prev = out[-1]
            if lv.pairs:
                idx = np.asarray(lv.pairs)
                out.append(prev[..., idx[:, 0]] * prev[..., idx[:, 1]])
            else:
                out.append(np.zeros(prev.shape[:-1] + (0,)))
        return out

    def support(self) -> list[list[frozenset]]:
        """Recovered index sets per level, in terms of input coordinates."""
        sets = [frozenset([i]) for i in range(self.d)]
        out = []
        for lv in self.levels:
            sets = [sets[i] | sets[j] for i, j in lv.pairs]
            out.append(sets)
        return out

    def check(self) -> None:
        n_units = self.d
        for k, lv in enumerate(self.levels, start=1):
            flat = [i for p in lv.pairs for i in p]
            if any(not 0 <= i < n_units for i in flat) or len(set(flat)) != len(flat):
                raise AmbiguousSupportError(f"level {k} pairs are not disjoint valid units of level {k - 1}")
            n_units = len(lv.pairs)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "c_min": self.c_min,
            "levels": [
                [{"pair": list(p), "set": sorted(S), "coef": c} for p, S, c in zip(lv.pairs, sets, lv.coef)]
                for lv, sets in zip(self.levels, self.support())
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DeepQuadModel":
        try:
            levels = [
                DeepQuadLevel(tuple(tuple(int(i) for i in e["pair"]) for e in lv), tuple(float(e["coef"]) for e in lv))
                for lv in obj["levels"]
            ]
            model = cls(int(obj["d"]), float(obj["c_min"]), levels)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed model: {exc}") from None
        model.check()
        return model


def pair_correlations(residual: np.ndarray, units: np.ndarray, weights=None) -> np.ndarray:
    """Upper-triangular matrix of ``E[r u_i u_j]`` (weighted mean)."""
    n, k = units.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=np.float64)
    C = (units * (w * residual)[:, None]).T @ units
    return np.triu(C, 1)


def select_pairs(C: np.ndarray, threshold: float) -> list[tuple[int, int]]:
    """Pairs with ``|C_ij| > threshold``, taken greedily by magnitude with disjointness."""
    iu = np.argwhere(np.abs(np.triu(C, 1)) > threshold)
    order = sorted(((-abs(C[i, j]), int(i), int(j)) for i, j in iu))
    used: set = set()
    out = []
    for _, i, j in order:
        if i in used or j in used:
            continue
        used |= {i, j}
        out.append((i, j))
    return sorted(out)


def _level_outputs(model: DeepQuadModel, x: np.ndarray) -> list[np.ndarray]:
    units = model.units(x)
    return [units[k + 1] @ np.asarray(lv.coef, dtype=np.float64) if lv.pairs else np.zeros(len(x))
            for k, lv in enumerate(model.levels)]


def learn_layerwise(
    sampler: Sampler,
    d: int,
    c_min: float,
    n_per_level: int,
    rng: np.random.Generator,
    max_levels: int | None = None,
    refit: bool = True,
) -> DeepQuadModel:
    """Recover the support level by level from fresh samples.

    With ``refit`` the output coefficients of all recovered monomials are
    re-estimated at the end by least squares on one more fresh sample, which
    removes the noise that not-yet-subtracted higher levels add to the
    per-level correlation estimates.
    """
    if n_per_level < 1:
        raise UndefinedModelError("need at least one sample per level")
    model = DeepQuadModel(int(d), float(c_min))
    n_units = d
    while n_units >= 2 and (max_levels is None or len(model.levels) < max_levels):
        x, y, w = sampler(n_per_level, rng)
        units = model.units(x)
        fitted = sum(_level_outputs(model, x), np.zeros(len(x)))
        C = pair_correlations(y - fitted, units[-1], w)
        pairs = select_pairs(C, c_min / 2)
        if not pairs:
            break
        model.levels.append(DeepQuadLevel(tuple(pairs), tuple(float(C[i, j]) for i, j in pairs)))
        model.check()
        n_units = len(pairs)
    if refit and model.levels:
        x, y, w = sampler(n_per_level, rng)
        feats = np.concatenate(model.units(x)[1:], axis=1)
        sw = np.sqrt(np.full(len(x), 1.0 / len(x)) if w is None else w)
        coef, *_ = np.linalg.lstsq(feats * sw[:, None], y * sw, rcond=None)
        pos = 0
        for k, lv in enumerate(model.levels):
            model.levels[k] = DeepQuadLevel(lv.pairs, tuple(float(c) for c in coef[pos : pos + len(lv.pairs)]))
            pos += len(lv.pairs)
    return model


def eval_model(model: DeepQuadModel, x) -> np.ndarray | float:
    x = _check_pm1(x, model.d)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    out = sum(_level_outputs(model, xs), np.zeros(len(xs)))
    return float(out[0]) if single else out


@dataclass(frozen=True)
class Recovery:
    support_exact: bool
    max_coef_error: float
    levels_found: int


def compare(model: DeepQuadModel, target: DeepQuadTarget) -> Recovery:
    """Support equality per level and the largest coefficient error on the true support."""
    found = model.support()
    exact = len(found) == len(target.levels) and all(set(a) == set(b) for a, b in zip(found, target.levels))
    est = {S: c for lv, sets in zip(model.levels, found) for S, c in zip(sets, lv.coef)}
    keys = set(est) | set(target.coef)
    err = max((abs(est.get(S, 0.0) - target.coef.get(S, 0.0)) for S in keys), default=0.0)
    return Recovery(bool(exact), float(err), len(found))


TWO_TREE_SIZES = (6, 3, 1)


def two_tree_target(c_min: float, rng: np.random.Generator) -> DeepQuadTarget:
    """``d = 12``: an 8-leaf tree on ``x_1..x_8`` plus a 4-leaf tree on ``x_9..x_12``."""
    levels = (
        tuple(frozenset({2 * j, 2 * j + 1}) for j in range(6)),
        (frozenset(range(0, 4)), frozenset(range(4, 8)), frozenset(range(8, 12))),
        (frozenset(range(0, 8)),),
    )
    coef = {S: float(rng.choice([-1.0, 1.0]) * rng.uniform(c_min, 1.0)) for sets in levels for S in sets}
    t = DeepQuadTarget(12, levels, coef)
    t.check()
    return t


def target_json(target: DeepQuadTarget) -> str:
    return json.dumps(target.to_dict(), separators=(",", ":"), allow_nan=False)


def model_json(model: DeepQuadModel) -> str:
    return json.dumps(model.to_dict(), separators=(",", ":"), allow_nan=False)

