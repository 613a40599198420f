"""Reproducible sweeps over grammar parameters and sample budgets.

A sweep visits every grammar cell ``(L, s, V, m)`` of the grid. Each trial of a
cell samples one instance and a held-out test set, then trains the layerwise
learner at every total budget of the N grid (budgets are split over levels
geometrically with ratio ``m``). Every (cell, trial) also gets an exact-decoder
sanity row, and optionally a shallow-baseline row per budget.

Sub-seeds: the instance of (cell ``c``, trial ``t``) uses
``derive_seed(seed, c, t)``; training at budget index ``k`` uses the stream
``(seed, c, t, k, 0)`` and the shallow baseline ``(seed, c, t, k, 1|2)``. Results do not depend on the number of worker processes.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyResultError, RejectedParametersError, UndefinedModelError
from .features import bandwidth_for, sample_feature_map
from .grammar import Dataset, RhmParams, decode_batch, generate, sample_instance
from .learner import (
    ScheduleMultipliers,
    default_schedule,
    geometric_allocation,
    predict,
    solve_closed_form,
    train_layerwise,
)
from .oracle import TransitionStats, compute_stats
from .rng import derive_seed, make_rng

_TEST_STREAM = 0x74657374

CSV_HEADER = [
    "method",
    "L",
    "s",
    "V",
    "m",
    "cell",
    "trial",
    "instance_seed",
    "N_total",
    "N_levels",
    "accuracy",
    "status",
    "K_rho_emp",
    "wall_seconds",
    "diagnostics",
]


@dataclass(frozen=True)
class SweepConfig:
    """Experiment axes.

    ``K_rho`` fixes the signal constant fed to the schedule; ``None`` uses each
    instance's effective value (see :func:`schedule_K_rho`).
    """

    L: tuple = (2,)
    s: tuple = (2,)
    V: tuple = (8,)
    m: tuple = (2,)
    N_grid: tuple = (1000,)
    trials: int = 1
    seed: int = 0
    multipliers: ScheduleMultipliers = ScheduleMultipliers()
    test_size: int = 1000
    shallow: bool = False
    shallow_M: int = 2048
    K_rho: float | None = None

    def check(self) -> None:
        for name in ("L", "s", "V", "m", "N_grid"):
            if len(getattr(self, name)) == 0:
                raise RejectedParametersError(f"grid {name} is empty")
        if self.trials < 1 or self.test_size < 1:
            raise RejectedParametersError("trials and test_size must be positive")
        if any(int(n) < 0 for n in self.N_grid):
            raise RejectedParametersError("budgets must be nonnegative")

    def cells(self) -> list[tuple[int, int, int, int]]:
        return list(itertools.product(self.L, self.s, self.V, self.m))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["multipliers"] = asdict(self.multipliers)
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise RejectedParametersError(f"unknown sweep config keys: {sorted(unknown)}")
        mult = ScheduleMultipliers(**d.pop("multipliers", {}))
        for k in ("L", "s", "V", "m", "N_grid"):
            if k in d:
                v = d[k]
                d[k] = tuple(int(x) for x in (v if isinstance(v, list) else [v]))
        cfg = cls(multipliers=mult, **d)
        cfg.check()
        return cfg


@dataclass(frozen=True)
class SweepRow:
    method: str
    L: int
    s: int
    V: int
    m: int
    cell: int
    trial: int
    instance_seed: int
    N_total: int
    N_levels: tuple
    accuracy: float
    status: str
    K_rho_emp: float
    wall_seconds: float
    diagnostics: tuple = ()


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[SweepRow] = field(default_factory=list)

    def select(self, method: str = "deep", **where) -> list[SweepRow]:
        return [r for r in self.rows if r.method == method and all(getattr(r, k) == v for k, v in where.items())]


def schedule_K_rho(stats: TransitionStats) -> float:
    """Signal constant for the schedule: ``min_l rho^(l) m^(l/2)`` over levels with nonzero signal."""
    m = len(stats.q[0][0])
    vals = [r * m ** (l / 2) for l, r in enumerate(stats.rho_emp, start=1) if r > 1e-12]
    return float(min(vals)) if vals else 1.0


def shallow_baseline(
    train: Dataset,
    test: Dataset,
    V: int,
    lambda_W: float,
    rng: np.random.Generator,
    M: int = 2048,
    sigma: float | None = None,
) -> float:
    """Test accuracy of one ridge regression from a full-input RBF embedding to ``e_label``.

    The input is the concatenation of all leaf one-hots; ``sigma`` defaults to
    the bandwidth that separates distinct one-hot inputs (distance ``sqrt(2)``).
    """
    if len(train.labels) == 0:
        raise UndefinedModelError("no training samples")
    tokens = np.asarray(train.tokens)
    n, length = tokens.shape
    if sigma is None:
        sigma = bandwidth_for(math.sqrt(2.0), 1e-3)
    fmap = sample_feature_map(length * V, M, sigma, rng)

    def embed(tok):
        uniq, inv = np.unique(np.asarray(tok), axis=0, return_inverse=True)
        H = np.zeros((len(uniq), length * V))
        H[np.arange(len(uniq))[:, None], np.arange(length)[None, :] * V + uniq] = 1.0
        return fmap(H), inv.ravel()

    X, inv = embed(tokens)
    counts = np.bincount(inv, minlength=len(X)).astype(np.float64)
    Y = np.zeros((len(X), V))
    np.add.at(Y, (inv, np.asarray(train.labels)), 1.0)
    W = solve_closed_form(X, Y / counts[:, None], lambda_W, weights=counts).W
    Xt, inv_t = embed(test.tokens)
    pred = np.argmax(Xt @ W.T, axis=1)[inv_t]
    return float(np.mean(pred == np.asarray(test.labels)))


def _run_trial(task) -> list[SweepRow]:
    config, cell_index, trial = task
    L, s, V, m = config.cells()[cell_index]
    inst_seed = derive_seed(config.seed, cell_index, trial)
    base = dict(L=L, s=s, V=V, m=m, cell=cell_index, trial=trial, instance_seed=inst_seed)
    rows = []
    t0 = time.perf_counter()
    try:
        params = RhmParams(L, s, V, m, inst_seed)
        params.check()
        instance = sample_instance(params)
        stats = compute_stats(instance)
        test = generate(instance, config.test_size, make_rng(inst_seed, _TEST_STREAM))
    except Exception as exc:  # a bad cell is recorded, not fatal
        return [SweepRow("decode", N_total=0, N_levels=(), accuracy=0.0, status=_status(exc), K_rho_emp=float("nan"),
                         wall_seconds=time.perf_counter() - t0, **base)]
    K_emp = stats.K_rho_emp
    decoded = decode_batch(instance, test.tokens, strict=False)
    rows.append(SweepRow("decode", N_total=0, N_levels=(), accuracy=float(np.mean(decoded == test.labels)), status="ok",
                         K_rho_emp=K_emp, wall_seconds=time.perf_counter() - t0, **base))
    K = config.K_rho if config.K_rho is not None else schedule_K_rho(stats)
    schedule = default_schedule(params, K, stats.kappa, config.multipliers)
    for k, n_total in enumerate(config.N_grid):
        alloc = geometric_allocation(int(n_total), L, float(m))
        configs = [c.__class__(**{**asdict(c), "N": n}) for c, n in zip(schedule, alloc)]
        rng = make_rng(config.seed, cell_index, trial, k, 0)
        t1 = time.perf_counter()
        try:
            if min(alloc) < 1:
                raise UndefinedModelError("a stage received no samples")
            model = train_layerwise(instance, configs, rng, stats=stats)
            acc = float(np.mean(predict(model, test.tokens) == test.labels))
            status = "ok"
            diag = tuple(
                (d["level"], d.get("q_err", float("nan")), d.get("out_intra", float("nan")), d.get("out_inter", float("nan")))
                for d in model.diagnostics
            )
        except Exception as exc:
            acc, status, diag = 0.0, _status(exc), ()
        rows.append(SweepRow("deep", N_total=int(n_total), N_levels=tuple(alloc), accuracy=acc, status=status,
                             K_rho_emp=K_emp, wall_seconds=time.perf_counter() - t1, diagnostics=diag, **base))
        if config.shallow:
            t1 = time.perf_counter()
            try:
                train = generate(instance, int(n_total), make_rng(config.seed, cell_index, trial, k, 1))
                acc = shallow_baseline(train, test, V, 1.0 / (V * m), make_rng(config.seed, cell_index, trial, k, 2),
                                       M=config.shallow_M)
                status = "ok"
            except Exception as exc:
                acc, status = 0.0, _status(exc)
            rows.append(SweepRow("shallow", N_total=int(n_total), N_levels=(int(n_total),), accuracy=acc, status=status,
                                 K_rho_emp=K_emp, wall_seconds=time.perf_counter() - t1, **base))
    return rows


def _status(exc: Exception) -> str:
    return f"{type(exc).__name__}: {exc}".replace("\n", " ")


def default_jobs() -> int:
    env = os.environ.get("RHM_LAB_JOBS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_sweep(config: SweepConfig, jobs: int | None = None) -> SweepResult:
    """Run every (cell, trial) task; rows come back in (cell, trial, budget) order."""
    config.check()
    tasks = [(config, c, t) for c in range(len(config.cells())) for t in range(config.trials)]
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(tasks) == 1:
        chunks = [_run_trial(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            chunks = list(pool.map(_run_trial, tasks))
    return SweepResult(config, [r for chunk in chunks for r in chunk])


# ---------------------------------------------------------------------------
# summaries


def median_accuracy(result: SweepResult, method: str = "deep") -> dict:
    """``{(L, s, V, m, N_total): median accuracy over trials}``."""
    groups: dict = {}
    for r in result.rows:
        if r.method == method:
            groups.setdefault((r.L, r.s, r.V, r.m, r.N_total), []).append(r.accuracy)
    return {k: float(np.median(v)) for k, v in groups.items()}


def threshold_budget(result: SweepResult, target: float = 0.95, method: str = "deep") -> dict:
    """Smallest grid budget whose median accuracy reaches ``target`` per cell (``None`` if none)."""
    med = median_accuracy(result, method)
    out: dict = {}
    for cell in result.config.cells():
        hits = sorted(n for (L, s, V, m, n), acc in med.items() if (L, s, V, m) == cell and acc >= target)
        out[cell] = hits[0] if hits else None
    return out


def log_slope(xs, ys) -> float:
    """Least-squares slope of ``log(y)`` against ``x``."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.log(np.asarray(ys, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, tuple):
        return json.dumps(v, separators=(",", ":"), default=_fmt_json)
    return str(v)


def _fmt_json(v):
    raise TypeError(type(v))


def _diag_text(diag) -> str:
    return ";".join(":".join(format(x, ".17g") if isinstance(x, float) else str(x) for x in d) for d in diag)


def csv_text(result: SweepResult) -> str:
    if not result.rows:
        raise EmptyResultError("sweep result has no rows")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(CSV_HEADER)
    for r in result.rows:
        w.writerow(
            [
                r.method,
                r.L,
                r.s,
                r.V,
                r.m,
                r.cell,
                r.trial,
                r.instance_seed,
                r.N_total,
                ";".join(str(n) for n in r.N_levels),
                _fmt(r.accuracy),
                r.status,
                _fmt(r.K_rho_emp),
                _fmt(r.wall_seconds),
                _diag_text(r.diagnostics),
            ]
        )
    return buf.getvalue()


def export_csv(result: SweepResult, path, include_timing: bool = True) -> None:
    """Write the sweep as RFC-4180 CSV (CRLF line ends, 17 significant digits).

    ``include_timing=False`` zeroes the wall-clock column so the file is
    byte-identical across runs.
    """
    if not include_timing:
        result = SweepResult(result.config, [_untimed(r) for r in result.rows])
    text = csv_text(result)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _untimed(r: SweepRow) -> SweepRow:
    from dataclasses import replace

    return replace(r, wall_seconds=0.0)


def read_csv(path) -> list[dict]:
    """Parse a sweep CSV back into dicts with numeric fields restored."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    ints = ("L", "s", "V", "m", "cell", "trial", "instance_seed", "N_total")
    floats = ("accuracy", "K_rho_emp", "wall_seconds")
    for r in rows:
        for k in ints:
            r[k] = int(r[k])
        for k in floats:
            r[k] = float(r[k])
        r["N_levels"] = tuple(int(x) for x in r["N_levels"].split(";")) if r["N_levels"] else ()
    return rows
