"""``rhmlab`` command line.

Exit status is 0 on success, 1 on usage or parameter errors and 2 on runtime
errors; every run first prints its fully resolved configuration as JSON on
standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import deepquad as dq
from .errors import RejectedParametersError
from .experiments import SweepConfig, default_jobs, export_csv, run_sweep, schedule_K_rho
from .grammar import (
    RhmParams,
    dataset_from_jsonl,
    dataset_to_jsonl,
    generate,
    load_instance,
    sample_instance,
    save_instance,
)
from .learner import ScheduleMultipliers, default_schedule, load_model, predict, save_model, train_layerwise
from .oracle import audit_assumptions, compute_stats
from .rng import make_rng

# stream ids under --seed
SAMPLE_STREAM = 1
TRAIN_STREAM = 2
DEEPQUAD_STREAM = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write(path: str | None, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        with open(path, "wb") as fh:
            fh.write(data)


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _echo(cfg: dict) -> None:
    print(json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(a) -> int:
    params = RhmParams(a.L, a.s, a.V, a.m, a.seed)
    params.check()
    _echo({"command": "gen", "params": params.to_dict(), "output": a.output})
    _write(a.output, save_instance(sample_instance(params)))
    return 0


def cmd_sample(a) -> int:
    inst = load_instance(_read(a.grammar))
    if a.n < 1:
        raise RejectedParametersError("--n must be positive")
    _echo({"command": "sample", "grammar": a.grammar, "n": a.n, "seed": a.seed,
           "intermediates": a.intermediates, "output": a.output})
    data = generate(inst, a.n, make_rng(a.seed, SAMPLE_STREAM), keep_intermediates=a.intermediates)
    _write(a.output, dataset_to_jsonl(data))
    return 0


def cmd_audit(a) -> int:
    inst = load_instance(_read(a.grammar))
    _echo({"command": "audit", "grammar": a.grammar, "format": a.format, "output": a.output})
    report = audit_assumptions(inst)
    text = report.to_json() + "\n" if a.format == "json" else report.table() + "\n"
    _write(a.output, text)
    return 0


def _multipliers(a) -> ScheduleMultipliers:
    kw = {f.name: getattr(a, f.name) for f in fields(ScheduleMultipliers) if getattr(a, f.name, None) is not None}
    return ScheduleMultipliers(**kw)


def cmd_train(a) -> int:
    inst = load_instance(_read(a.grammar))
    stats = compute_stats(inst)
    mult = _multipliers(a)
    K = a.K_rho if a.K_rho is not None else schedule_K_rho(stats)
    configs = default_schedule(inst.params, K, stats.kappa, mult)
    if a.N is not None:
        from .learner import geometric_allocation
        from dataclasses import replace

        alloc = geometric_allocation(a.N, inst.params.L, float(inst.params.m))
        configs = [replace(c, N=n) for c, n in zip(configs, alloc)]
    _echo({"command": "train", "grammar": a.grammar, "seed": a.seed, "K_rho": K, "multipliers": asdict(mult),
           "schedule": [asdict(c) for c in configs], "output": a.output})
    model = train_layerwise(inst, configs, make_rng(a.seed, TRAIN_STREAM), stats=stats)
    _write(a.output, save_model(model))
    return 0


def cmd_eval(a) -> int:
    model = load_model(_read(a.model))
    data = dataset_from_jsonl(_read(a.data).decode("utf-8"))
    _echo({"command": "eval", "model": a.model, "data": a.data})
    acc = float(np.mean(predict(model, data.tokens) == data.labels))
    _write(None, f"accuracy={acc:.17g}\n")
    return 0


def cmd_sweep(a) -> int:
    cfg = SweepConfig.from_dict(json.loads(_read(a.config).decode("utf-8")))
    jobs = a.jobs if a.jobs is not None else default_jobs()
    _echo({"command": "sweep", "config": cfg.to_dict(), "jobs": jobs, "timing": a.timing, "output": a.output})
    result = run_sweep(cfg, jobs=jobs)
    if a.output in (None, "-"):
        from .experiments import SweepResult, _untimed, csv_text

        res = result if a.timing else SweepResult(result.config, [_untimed(r) for r in result.rows])
        _write(None, csv_text(res))
    else:
        export_csv(result, a.output, include_timing=a.timing)
    return 0


DEEPQUAD_HEADER = ["seed", "d", "sizes", "sampler", "n_per_level", "support_exact", "max_coef_error", "levels_found"]


def cmd_deepquad(a) -> int:
    sizes = tuple(int(x) for x in a.sizes.split(","))
    if a.trials < 1:
        raise RejectedParametersError("--trials must be positive")
    _echo({"command": "deepquad", "d": a.d, "sizes": list(sizes), "c_min": a.c_min, "n": a.n, "trials": a.trials,
           "sampler": a.sampler, "seed": a.seed, "refit": not a.no_refit, "output": a.output})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(DEEPQUAD_HEADER)
    for t in range(a.trials):
        rng = make_rng(a.seed, DEEPQUAD_STREAM, t)
        target = dq.sample_target(a.d, sizes, a.c_min, rng)
        sampler = dq.exhaustive_sampler(target) if a.sampler == "exhaustive" else dq.iid_sampler(target)
        model = dq.learn_layerwise(sampler, a.d, a.c_min, a.n, rng, refit=not a.no_refit)
        rec = dq.compare(model, target)
        w.writerow([t, a.d, ";".join(map(str, sizes)), a.sampler, a.n, int(rec.support_exact),
                    format(rec.max_coef_error, ".17g"), rec.levels_found])
    _write(a.output, buf.getvalue())
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="rhmlab", description="Random Hierarchy Model laboratory.", formatter_class=fmt)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="sample a grammar and write it as JSON", formatter_class=fmt)
    g.add_argument("--L", type=int, default=2, help="depth")
    g.add_argument("--s", type=int, default=2, help="patch size")
    g.add_argument("--V", type=int, default=8, help="vocabulary size")
    g.add_argument("--m", type=int, default=2, help="rules per symbol")
    g.add_argument("--seed", type=int, default=0, help="grammar seed")
    g.add_argument("-o", "--output", default=None, help="output path (stdout if omitted)")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sample", help="draw a JSON-lines dataset from a grammar", formatter_class=fmt)
    s.add_argument("grammar")
    s.add_argument("--n", type=int, default=1000, help="number of sentences")
    s.add_argument("--seed", type=int, default=0, help="sampling seed")
    s.add_argument("--intermediates", action="store_true", help="store the hidden levels too")
    s.add_argument("-o", "--output", default=None, help="output path (stdout if omitted)")
    s.set_defaults(func=cmd_sample)

    a = sub.add_parser("audit", help="report kappa, per-level signal and K_rho", formatter_class=fmt)
    a.add_argument("grammar")
    a.add_argument("--format", choices=["table", "json"], default="table", help="report format")
    a.add_argument("-o", "--output", default=None, help="output path (stdout if omitted)")
    a.set_defaults(func=cmd_audit)

    t = sub.add_parser("train", help="train the layerwise learner on fresh samples", formatter_class=fmt)
    t.add_argument("grammar")
    t.add_argument("--seed", type=int, default=0, help="training seed")
    t.add_argument("--N", type=int, default=None, help="total sample budget split geometrically (schedule if omitted)")
    t.add_argument("--K-rho", dest="K_rho", type=float, default=None, help="signal constant (instance value if omitted)")
    defaults = ScheduleMultipliers()
    for f in fields(ScheduleMultipliers):
        kind = str if f.name == "solver" else type(getattr(defaults, f.name))
        extra = {"choices": ["gd", "closed_form"]} if f.name == "solver" else {}
        t.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=getattr(defaults, f.name),
                       help=f"schedule {f.name}", **extra)
    t.add_argument("-o", "--output", default=None, help="model path (stdout if omitted)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="accuracy of a model on a dataset", formatter_class=fmt)
    e.add_argument("model")
    e.add_argument("data")
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", help="run a sweep from a JSON config and write CSV", formatter_class=fmt)
    w.add_argument("config")
    w.add_argument("--jobs", type=int, default=None, help="worker processes (RHM_LAB_JOBS, else all cores)")
    w.add_argument("--timing", action="store_true", help="record wall-clock seconds (breaks byte reproducibility)")
    w.add_argument("-o", "--output", default=None, help="CSV path (stdout if omitted)")
    w.set_defaults(func=cmd_sweep)

    d = sub.add_parser("deepquad", help="recovery of deep quadratic targets over seeds", formatter_class=fmt)
    d.add_argument("--d", type=int, default=12, help="input dimension")
    d.add_argument("--sizes", default="6,3,1", help="support sets per level")
    d.add_argument("--c-min", dest="c_min", type=float, default=0.5, help="coefficient magnitude floor")
    d.add_argument("--n", type=int, default=10000, help="fresh samples per level")
    d.add_argument("--trials", type=int, default=10, help="number of random targets")
    d.add_argument("--sampler", choices=["iid", "exhaustive"], default="iid", help="sample access")
    d.add_argument("--no-refit", action="store_true", help="skip the final least-squares coefficient refit")
    d.add_argument("--seed", type=int, default=0, help="base seed")
    d.add_argument("-o", "--output", default=None, help="CSV path (stdout if omitted)")
    d.set_defaults(func=cmd_deepquad)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "jobs", None) is None and os.environ.get("RHM_LAB_JOBS"):
        try:
            args.jobs = int(os.environ["RHM_LAB_JOBS"])
        except ValueError:
            print("error: RHM_LAB_JOBS must be an integer", file=sys.stderr)
            return 1
    try:
        return args.func(args)
    except RejectedParametersError as exc:
        print(f"error: invalid parameters: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}".splitlines()[0], file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
