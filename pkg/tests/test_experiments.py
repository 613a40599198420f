import json
import math
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rhmlab.errors import EmptyResultError, RejectedParametersError, UndefinedModelError
from rhmlab.experiments import (
    CSV_HEADER,
    SweepConfig,
    SweepResult,
    SweepRow,
    csv_text,
    export_csv,
    log_slope,
    median_accuracy,
    read_csv,
    run_sweep,
    schedule_K_rho,
    shallow_baseline,
    threshold_budget,
)
from rhmlab.grammar import Dataset, RhmParams, generate, sample_instance
from rhmlab.learner import geometric_allocation
from rhmlab.oracle import compute_stats
from rhmlab.rng import make_rng

DATA = os.path.join(os.path.dirname(__file__), "data")

GOLDEN = SweepConfig(L=(1, 2), s=(2,), V=(4,), m=(1, 2), N_grid=(60, 240), trials=2, seed=0, test_size=200,
                     shallow=True, shallow_M=256)


@pytest.fixture(scope="module")
def golden_result():
    return run_sweep(GOLDEN, jobs=1)


def test_golden_csv_is_byte_identical(golden_result, tmp_path):
    out = tmp_path / "sweep.csv"
    export_csv(golden_result, out, include_timing=False)
    with open(os.path.join(DATA, "golden_sweep.csv"), "rb") as fh:
        assert out.read_bytes() == fh.read()


def test_rows_and_ordering(golden_result):
    rows = golden_result.rows
    # per (cell, trial): one decode row, then deep + shallow per budget
    assert len(rows) == 4 * 2 * (1 + 2 * 2)
    keys = [(r.cell, r.trial) for r in rows]
    assert keys == sorted(keys)
    assert all(0.0 <= r.accuracy <= 1.0 for r in rows)


def test_decode_sanity_rows(golden_result):
    dec = golden_result.select("decode")
    assert len(dec) == 8 and all(r.accuracy == 1.0 for r in dec)


def test_m1_cells_are_trivial(golden_result):
    for r in golden_result.select("deep", m=1):
        assert r.accuracy == 1.0 and r.status == "ok"


def test_budget_accounting(golden_result):
    for r in golden_result.select("deep"):
        assert sum(r.N_levels) <= r.N_total
        assert list(r.N_levels) == geometric_allocation(r.N_total, r.L, float(r.m))


@given(st.integers(1, 10**6), st.integers(1, 4), st.integers(2, 8))
def test_allocation_follows_ratio(total, L, m):
    alloc = geometric_allocation(total, L, float(m))
    w = np.array([m**l for l in range(L, 0, -1)], dtype=float)
    exact = total * w / w.sum()
    assert sum(alloc) <= total
    assert np.all(np.abs(np.array(alloc) - exact) < 1)


def test_determinism_across_job_counts(golden_result):
    again = run_sweep(GOLDEN, jobs=2)
    strip = lambda res: [r.__class__(**{**r.__dict__, "wall_seconds": 0.0}) for r in res.rows]
    assert strip(again) == strip(golden_result)


def test_csv_roundtrip_is_exact(golden_result, tmp_path):
    out = tmp_path / "s.csv"
    export_csv(golden_result, out)
    raw = out.read_bytes()
    assert raw.count(b"\r\n") == len(golden_result.rows) + 1
    parsed = read_csv(out)
    assert list(parsed[0]) == CSV_HEADER
    for row, rec in zip(golden_result.rows, parsed):
        assert rec["accuracy"] == row.accuracy
        assert rec["K_rho_emp"] == row.K_rho_emp
        assert rec["wall_seconds"] == row.wall_seconds
        assert rec["N_levels"] == tuple(row.N_levels)
        assert rec["instance_seed"] == row.instance_seed


def test_csv_roundtrip_awkward_floats(tmp_path):
    vals = [0.1, 1 / 3, 2.0000000000000004, 1e-300, 5e-324, 0.95]
    rows = [SweepRow("deep", 1, 2, 3, 1, 0, i, 0, 10, (10,), v, "ok, with comma", v, v) for i, v in enumerate(vals)]
    out = tmp_path / "f.csv"
    export_csv(SweepResult(GOLDEN, rows), out)
    back = read_csv(out)
    assert [r["accuracy"] for r in back] == vals
    assert back[0]["status"] == "ok, with comma"


def test_empty_result_refused(tmp_path):
    with pytest.raises(EmptyResultError):
        export_csv(SweepResult(GOLDEN, []), tmp_path / "x.csv")
    with pytest.raises(EmptyResultError):
        csv_text(SweepResult(GOLDEN, []))


def test_unwritable_path(golden_result, tmp_path):
    with pytest.raises(OSError):
        export_csv(golden_result, tmp_path / "missing" / "x.csv")


def test_failures_recorded_not_fatal():
    cfg = SweepConfig(L=(2,), V=(4,), m=(2,), N_grid=(1, 200), trials=1, test_size=50)
    res = run_sweep(cfg, jobs=1)
    deep = res.select("deep")
    assert deep[0].status.startswith("UndefinedModelError") and deep[0].accuracy == 0.0
    assert deep[1].status == "ok"


def test_invalid_cell_recorded():
    res = run_sweep(SweepConfig(L=(1,), V=(2,), m=(3,), N_grid=(10,), test_size=10), jobs=1)
    assert res.rows[0].status.startswith("RejectedParametersError")


def test_config_checks():
    with pytest.raises(RejectedParametersError):
        SweepConfig(m=()).check()
    with pytest.raises(RejectedParametersError):
        SweepConfig(trials=0).check()
    with pytest.raises(RejectedParametersError):
        SweepConfig.from_dict({"L": [2], "bogus": 1})
    cfg = SweepConfig.from_dict(json.loads(json.dumps(GOLDEN.to_dict())))
    assert cfg == GOLDEN


def test_threshold_and_median():
    rows = []
    accs = {100: [0.5, 0.96, 0.97], 200: [0.94, 0.95, 0.99], 400: [1.0, 0.98, 0.2]}
    for n, vals in accs.items():
        for t, a in enumerate(vals):
            rows.append(SweepRow("deep", 2, 2, 8, 2, 0, t, 0, n, (n,), a, "ok", 1.0, 0.0))
    res = SweepResult(SweepConfig(N_grid=(100, 200, 400), trials=3), rows)
    med = median_accuracy(res)
    assert med[(2, 2, 8, 2, 100)] == 0.96
    assert threshold_budget(res)[(2, 2, 8, 2)] == 100
    assert threshold_budget(res, target=0.98)[(2, 2, 8, 2)] == 400
    assert threshold_budget(res, target=0.99)[(2, 2, 8, 2)] is None


def test_log_slope():
    assert log_slope([1, 2, 3], [3, 6, 12]) == pytest.approx(math.log(2))


def test_schedule_K_rho_skips_dead_levels():
    degenerate = compute_stats(sample_instance(RhmParams(3, 2, 8, 2, seed=0)))
    assert degenerate.K_rho_emp == 0.0
    assert schedule_K_rho(degenerate) > 0
    good = compute_stats(sample_instance(RhmParams(3, 2, 8, 2, seed=1)))
    assert schedule_K_rho(good) == pytest.approx(good.K_rho_emp)


# ---------------------------------------------------------------------------
# shallow baseline


def test_shallow_m1_perfect():
    inst = sample_instance(RhmParams(2, 2, 3, 1, seed=0))
    train, test = generate(inst, 2000, make_rng(0)), generate(inst, 300, make_rng(1))
    assert shallow_baseline(train, test, 3, 1 / 3, make_rng(2), M=512) == 1.0


def test_shallow_needs_samples():
    inst = sample_instance(RhmParams(1, 2, 3, 1, seed=0))
    empty = Dataset(np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64))
    with pytest.raises(UndefinedModelError):
        shallow_baseline(empty, generate(inst, 5, make_rng(0)), 3, 0.3, make_rng(1))


@pytest.mark.slow
def test_deep_beats_shallow():
    # L=3, V=8, m=2 at a budget where the deep learner is near-perfect
    cfg = SweepConfig(L=(3,), V=(8,), m=(2,), N_grid=(1000,), trials=5, seed=0, shallow=True)
    res = run_sweep(cfg, jobs=1)
    deep = np.median([r.accuracy for r in res.select("deep")])
    shallow = np.median([r.accuracy for r in res.select("shallow")])
    print(f"deep median {deep:.3f}  shallow median {shallow:.3f}")
    assert deep - shallow >= 0.2
