"""Random Hierarchy Model grammars: sampling, generation, decoding, serialization.

Conventions
-----------
Symbols at every level are the integers ``0..V-1``. Level 0 holds the label,
level ``L`` the observed tokens. ``rules[l][nu]`` lists the ``m`` patches
(``s``-tuples of level-``l+1`` symbols) that level-``l`` symbol ``nu`` can
rewrite to, so ``rules[l]`` generates the patch set of level ``l+1``.

Patches are encoded as a single base-``V`` integer (most significant digit
first) wherever they are used as keys; see :func:`encode_patches`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    InvariantError,
    ParseError,
    RejectedParametersError,
    UndecodableInputError,
)
from .rng import make_rng

# Stream id used when an instance is sampled from ``params.seed`` alone.
GRAMMAR_STREAM = 0x6772616D
# Index spaces up to this size are shuffled explicitly; larger ones use rejection.
EXPLICIT_SHUFFLE_LIMIT = 1 << 24


@dataclass(frozen=True)
class RhmParams:
    """Shape of an RHM instance.

    Parameters
    ----------
    L : number of levels (depth of the generation tree).
    s : branching factor (patch length), at least 2.
    V : vocabulary size, shared by every level.
    m : production rules per symbol.
    seed : 64-bit seed of the grammar stream.
    """

    L: int
    s: int
    V: int
    m: int
    seed: int = 0

    def check(self) -> None:
        """Raise :class:`RejectedParametersError` if the parameters are infeasible."""
        for name in ("L", "s", "V", "m"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise RejectedParametersError(f"{name} must be a positive integer, got {v!r}")
        if self.s < 2:
            raise RejectedParametersError(f"s must be >= 2, got {self.s}")
        if not 0 <= int(self.seed) < (1 << 64):
            raise RejectedParametersError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.V ** self.s >= (1 << 62):
            raise RejectedParametersError("V**s too large for integer patch codes")
        if self.m > self.V ** (self.s - 1):
            raise RejectedParametersError(
                f"m={self.m} exceeds the V**(s-1)={self.V ** (self.s - 1)} suffixes per first token"
            )
        if self.V * self.m > self.V**self.s:
            raise RejectedParametersError("V*m patches do not fit in the patch space")

    @property
    def n_patches(self) -> int:
        return self.V * self.m

    @property
    def length(self) -> int:
        """Number of observed tokens, ``s**L``."""
        return self.s**self.L

    def to_dict(self) -> dict:
        return {"L": int(self.L), "s": int(self.s), "V": int(self.V), "m": int(self.m), "seed": int(self.seed)}


def encode_patches(patches: np.ndarray, V: int) -> np.ndarray:
    """Base-``V`` integer codes of patches stored along the last axis."""
    patches = np.asarray(patches, dtype=np.int64)
    s = patches.shape[-1]
    weights = V ** np.arange(s - 1, -1, -1, dtype=np.int64)
    return patches @ weights


def decode_patch_code(code: int, V: int, s: int) -> tuple[int, ...]:
    """Inverse of :func:`encode_patches` for a single code."""
    out = []
    for _ in range(s):
        code, r = divmod(int(code), V)
        out.append(r)
    return tuple(reversed(out))


@dataclass(frozen=True, eq=False)
class RhmInstance:
    """A concrete grammar. Immutable; derived tables are computed lazily.

    ``rules`` is a nested tuple ``rules[l][nu][i] -> s-tuple``. Instances built
    by :func:`sample_instance` or :func:`load_instance` always satisfy
    :func:`validate`; the raw constructor does not check anything so that
    deliberately broken instances can be audited.
    """

    params: RhmParams
    rules: tuple = field(repr=False)

    def __eq__(self, other):
        if not isinstance(other, RhmInstance):
            return NotImplemented
        return self.params == other.params and self.rules == other.rules

    def __hash__(self):
        return hash((self.params, self.rules))

    @cached_property
    def rule_array(self) -> np.ndarray:
        """Rules as an ``(L, V, m, s)`` int array (requires a uniform instance)."""
        p = self.params
        arr = np.array(self.rules, dtype=np.int64)
        if arr.shape != (p.L, p.V, p.m, p.s):
            raise InvariantError(f"rule table has shape {arr.shape}, expected {(p.L, p.V, p.m, p.s)}")
        arr.flags.writeable = False
        return arr

    @cached_property
    def rule_codes(self) -> np.ndarray:
        """``(L, V, m)`` patch codes; ``rule_codes[l-1]`` covers the level-``l`` patches."""
        codes = encode_patches(self.rule_array, self.params.V)
        codes.flags.writeable = False
        return codes

    @cached_property
    def _decode_tables(self) -> list[tuple[np.ndarray, np.ndarray]]:
        p = self.params
        tables = []
        for l in range(p.L):
            codes = self.rule_codes[l].ravel()
            parents = np.repeat(np.arange(p.V), p.m)
            order = np.argsort(codes, kind="stable")
            tables.append((codes[order], parents[order]))
        return tables

    @cached_property
    def decode_map(self) -> list[dict[tuple[int, ...], int]]:
        """``decode_map[l-1][patch] = parent`` for the level-``l`` patch set, ``l = 1..L``."""
        out = []
        for level_rules in self.rules:
            d: dict[tuple[int, ...], int] = {}
            for nu, patches in enumerate(level_rules):
                for patch in patches:
                    d.setdefault(tuple(patch), nu)
            out.append(d)
        return out

    @cached_property
    def synonym_classes(self) -> list[list[frozenset]]:
        """``synonym_classes[l-1][nu]``: the level-``l`` patches produced by ``nu``."""
        return [[frozenset(tuple(p) for p in patches) for patches in level_rules] for level_rules in self.rules]

    def parents(self, level: int, codes: np.ndarray) -> np.ndarray:
        """Parent symbol of each level-``level`` patch code, ``-1`` if not a patch."""
        sorted_codes, parents = self._decode_tables[level - 1]
        codes = np.asarray(codes, dtype=np.int64)
        idx = np.searchsorted(sorted_codes, codes)
        idx = np.minimum(idx, len(sorted_codes) - 1)
        hit = sorted_codes[idx] == codes
        return np.where(hit, parents[idx], -1)

    def patch_set(self, level: int) -> np.ndarray:
        """Sorted codes of the level-``level`` patches."""
        return self._decode_tables[level - 1][0]


@dataclass(frozen=True)
class Sample:
    """One generated sentence.

    ``intermediates[l]`` (``l = 0..L-1``) is the level-``l`` sequence of length
    ``s**l``; ``intermediates[0] == (label,)``.
    """

    tokens: tuple[int, ...]
    label: int
    intermediates: tuple[tuple[int, ...], ...] | None = None


@dataclass(frozen=True)
class Dataset:
    """A batch of generated sentences stored as arrays.

    ``intermediates[l]`` has shape ``(n, s**l)`` for ``l = 0..L-1``.
    """

    tokens: np.ndarray
    labels: np.ndarray
    intermediates: tuple[np.ndarray, ...] | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def level(self, l: int) -> np.ndarray:
        """Level-``l`` sequences, ``l = 0..L`` (``L`` being the tokens)."""
        if self.intermediates is None:
            raise ValueError("dataset was generated without intermediates")
        if l == len(self.intermediates):
            return self.tokens
        return self.intermediates[l]

    def sample(self, i: int) -> Sample:
        inter = None
        if self.intermediates is not None:
            inter = tuple(tuple(int(v) for v in seq[i]) for seq in self.intermediates)
        return Sample(tuple(int(t) for t in self.tokens[i]), int(self.labels[i]), inter)


# ---------------------------------------------------------------------------
# sampling


def _sample_without_replacement(n: int, k: int, rng: np.random.Generator) -> list[int]:
    if n <= EXPLICIT_SHUFFLE_LIMIT:
        idx = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = int(rng.integers(i, n))
            idx[i], idx[j] = idx[j], idx[i]
        return [int(v) for v in idx[:k]]
    seen: set[int] = set()
    out = []
    while len(out) < k:
        v = int(rng.integers(0, n))
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def sample_instance(params: RhmParams, rng: np.random.Generator | None = None) -> RhmInstance:
    """Sample a (V, m)-uniform, non-ambiguous instance with uniform first-token marginals.

    At every level each first token ``mu`` receives ``m`` distinct suffixes drawn
    without replacement from ``[V]**(s-1)``; the resulting ``V*m`` candidate
    patches are shuffled and cut into ``V`` consecutive blocks of ``m``, block
    ``nu`` becoming the rule list of parent ``nu``.

    If ``rng`` is omitted the stream is derived from ``params.seed``.
    """
    params.check()
    if rng is None:
        rng = make_rng(params.seed, GRAMMAR_STREAM)
    L, s, V, m = params.L, params.s, params.V, params.m
    n_suffix = V ** (s - 1)
    levels = []
    for _ in range(L):
        candidates = []
        for mu in range(V):
            for idx in _sample_without_replacement(n_suffix, m, rng):
                candidates.append((mu,) + decode_patch_code(idx, V, s - 1))
        perm = rng.permutation(V * m)
        levels.append(tuple(tuple(candidates[int(perm[nu * m + i])] for i in range(m)) for nu in range(V)))
    return RhmInstance(params, tuple(levels))


def generate(
    instance: RhmInstance, n: int, rng: np.random.Generator, keep_intermediates: bool = False
) -> Dataset:
    """Generate ``n`` i.i.d. sentences (uniform label, uniform rule choices)."""
    p = instance.params
    rules = instance.rule_array
    labels = rng.integers(0, p.V, size=n)
    seq = labels[:, None]
    inter = [seq] if keep_intermediates else None
    for l in range(p.L):
        choice = rng.integers(0, p.m, size=seq.shape)
        seq = rules[l][seq, choice].reshape(n, -1)
        if keep_intermediates and l < p.L - 1:
            inter.append(seq)
    return Dataset(seq, labels, tuple(inter) if inter is not None else None)


def generate_sample(instance: RhmInstance, rng: np.random.Generator, keep_intermediates: bool = False) -> Sample:
    """Generate a single sentence; same stream consumption as ``generate(..., 1, ...)``."""
    return generate(instance, 1, rng, keep_intermediates).sample(0)


# ---------------------------------------------------------------------------
# decoding


def decode_batch(instance: RhmInstance, tokens: np.ndarray, strict: bool = True) -> np.ndarray:
    """Decode a batch of sentences bottom-up to their labels.

    With ``strict=False`` undecodable rows get label ``-1`` instead of raising.
    """
    p = instance.params
    seq = np.asarray(tokens, dtype=np.int64)
    if seq.ndim != 2 or seq.shape[1] != p.length:
        raise UndecodableInputError(f"expected sentences of length {p.length}, got shape {seq.shape}")
    bad = np.zeros(len(seq), dtype=bool)
    for level in range(p.L, 0, -1):
        patches = seq.reshape(len(seq), -1, p.s)
        parents = instance.parents(level, encode_patches(np.clip(patches, 0, p.V - 1), p.V))
        invalid = (parents < 0) | np.any((patches < 0) | (patches >= p.V), axis=-1)
        if strict and invalid.any():
            row, k = map(int, np.argwhere(invalid)[0])
            raise UndecodableInputError(
                f"patch {tuple(int(t) for t in patches[row, k])} at position {k} of level {level} "
                "is not produced by any rule"
            )
        bad |= invalid.any(axis=1)
        seq = np.where(invalid, 0, parents)
    out = seq[:, 0].copy()
    out[bad] = -1
    return out


def decode(instance: RhmInstance, tokens: Sequence[int]) -> int:
    """Recover the label of one sentence; raises :class:`UndecodableInputError`."""
    return int(decode_batch(instance, np.asarray(tokens)[None, :])[0])


# ---------------------------------------------------------------------------
# validation


@dataclass
class Check:
    name: str
    passed: bool
    counterexample: str | None = None


@dataclass
class ValidationReport:
    checks: list[Check]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]


def validate(instance: RhmInstance) -> ValidationReport:
    """Check every structural invariant, reporting the first counterexample of each."""
    p = instance.params
    checks = []

    shape_err = None
    if len(instance.rules) != p.L:
        shape_err = f"{len(instance.rules)} rule levels, expected {p.L}"
    else:
        for l, level_rules in enumerate(instance.rules):
            if len(level_rules) != p.V:
                shape_err = f"level {l} has {len(level_rules)} parent symbols, expected {p.V}"
                break
            for nu, patches in enumerate(level_rules):
                for i, patch in enumerate(patches):
                    if len(patch) != p.s or any(not 0 <= t < p.V for t in patch):
                        shape_err = f"rules[{l}][{nu}][{i}] = {tuple(patch)} is not an s-tuple over [V]"
                        break
                if shape_err:
                    break
            if shape_err:
                break
    checks.append(Check("shape", shape_err is None, shape_err))
    if shape_err is not None:
        return ValidationReport(checks)

    uni = None
    for l, level_rules in enumerate(instance.rules):
        for nu, patches in enumerate(level_rules):
            distinct = len(set(map(tuple, patches)))
            if len(patches) != p.m or distinct != len(patches):
                uni = f"symbol {nu} at level {l} has {distinct} distinct rules ({len(patches)} listed), expected {p.m}"
                break
        if uni:
            break
    checks.append(Check("uniform", uni is None, uni))

    amb = None
    for l, level_rules in enumerate(instance.rules):
        owner: dict[tuple, int] = {}
        for nu, patches in enumerate(level_rules):
            for patch in patches:
                t = tuple(patch)
                if t in owner and owner[t] != nu:
                    amb = f"patch {t} at level {l + 1} has parents {owner[t]} and {nu}"
                    break
                owner[t] = nu
            if amb:
                break
        if amb:
            break
    checks.append(Check("non_ambiguous", amb is None, amb))

    count = None
    for l, level_rules in enumerate(instance.rules):
        n = len({tuple(patch) for patches in level_rules for patch in patches})
        if n != p.V * p.m:
            count = f"level {l + 1} has {n} patches, expected {p.V * p.m}"
            break
    checks.append(Check("patch_count", count is None, count))

    first = None
    for l, level_rules in enumerate(instance.rules):
        patches = {tuple(patch) for ps in level_rules for patch in ps}
        counts = np.bincount([t[0] for t in patches], minlength=p.V)
        bad = np.flatnonzero(counts != p.m)
        if bad.size:
            mu = int(bad[0])
            first = f"token {mu} starts {int(counts[mu])} patches at level {l + 1}, expected {p.m}"
            break
    checks.append(Check("first_token_uniform", first is None, first))
    return ValidationReport(checks)


# ---------------------------------------------------------------------------
# serialization


def instance_to_dict(instance: RhmInstance) -> dict:
    return {
        "params": instance.params.to_dict(),
        "rules": [[[list(map(int, patch)) for patch in patches] for patches in lvl] for lvl in instance.rules],
    }


def save_instance(instance: RhmInstance) -> bytes:
    """Serialize to the grammar JSON schema (UTF-8 bytes)."""
    return json.dumps(instance_to_dict(instance), separators=(",", ":"), allow_nan=False).encode("utf-8")


def _require_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{path}: expected an integer, got {type(value).__name__}")
    return value


def instance_from_dict(obj) -> RhmInstance:
    if not isinstance(obj, dict):
        raise ParseError("$: expected an object")
    for key in ("params", "rules"):
        if key not in obj:
            raise ParseError(f"$.{key}: missing")
    raw = obj["params"]
    if not isinstance(raw, dict):
        raise ParseError("$.params: expected an object")
    vals = {}
    for key in ("L", "s", "V", "m", "seed"):
        if key not in raw:
            raise ParseError(f"$.params.{key}: missing")
        vals[key] = _require_int(raw[key], f"$.params.{key}")
    params = RhmParams(**vals)
    try:
        params.check()
    except RejectedParametersError as exc:
        raise InvariantError(f"$.params: {exc}") from None
    rules = obj["rules"]
    if not isinstance(rules, list):
        raise ParseError("$.rules: expected an array")
    levels = []
    for l, lvl in enumerate(rules):
        if not isinstance(lvl, list):
            raise ParseError(f"$.rules[{l}]: expected an array")
        syms = []
        for nu, patches in enumerate(lvl):
            if not isinstance(patches, list):
                raise ParseError(f"$.rules[{l}][{nu}]: expected an array")
            plist = []
            for i, patch in enumerate(patches):
                path = f"$.rules[{l}][{nu}][{i}]"
                if not isinstance(patch, list):
                    raise ParseError(f"{path}: expected an array")
                plist.append(tuple(_require_int(t, f"{path}[{j}]") for j, t in enumerate(patch)))
            syms.append(tuple(plist))
        levels.append(tuple(syms))
    inst = RhmInstance(params, tuple(levels))
    report = validate(inst)
    if not report.ok:
        bad = report.failures()[0]
        raise InvariantError(f"$.rules: {bad.name} check failed: {bad.counterexample}")
    return inst


def load_instance(data: bytes | str) -> RhmInstance:
    """Parse grammar JSON; raises :class:`ParseError` / :class:`InvariantError`."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"$: not UTF-8 ({exc})") from None
    try:
        obj = json.loads(data, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"$: malformed JSON ({exc})") from None
    return instance_from_dict(obj)


def _reject_constant(name):
    raise ParseError(f"$: non-finite number {name} not allowed")


# ---------------------------------------------------------------------------
# JSON-lines datasets


def dataset_to_jsonl(data: Dataset) -> str:
    """One ``{"tokens": [...], "label": k[, "intermediates": [[...], ...]]}`` object per line."""
    lines = []
    for i in range(len(data)):
        obj = {"tokens": [int(t) for t in data.tokens[i]], "label": int(data.labels[i])}
        if data.intermediates is not None:
            obj["intermediates"] = [[int(v) for v in seq[i]] for seq in data.intermediates]
        lines.append(json.dumps(obj, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


def dataset_from_jsonl(text: str) -> Dataset:
    tokens, labels, inter = [], [], []
    for n, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line, parse_constant=_reject_constant)
            tokens.append([_require_int(t, f"line {n}: tokens") for t in obj["tokens"]])
            labels.append(_require_int(obj["label"], f"line {n}: label"))
            if "intermediates" in obj:
                inter.append(obj["intermediates"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"line {n}: malformed record ({exc})") from None
    if not tokens:
        raise ParseError("dataset is empty")
    if len({len(t) for t in tokens}) != 1:
        raise ParseError("sentences have different lengths")
    intermediates = None
    if inter and len(inter) == len(tokens):
        intermediates = tuple(np.asarray([row[l] for row in inter], dtype=np.int64) for l in range(len(inter[0])))
    return Dataset(np.asarray(tokens, dtype=np.int64), np.asarray(labels, dtype=np.int64), intermediates)
