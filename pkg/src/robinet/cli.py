"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (flags, config, files), 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
from pydantic import ValidationError

from .core import ExpmConvergenceError, ModelError
from .instrument import DigitizedRecord, Instrument, QuadratureUnderflowError
from .io import (
    ExperimentConfig,
    RecordFormatError,
    build_model,
    build_state,
    format_validation_error,
    load_config,
    read_records,
    state_json,
    write_records,
)

log = logging.getLogger("robinet")

THREADS_ENV = "ROBINET_THREADS"


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _setup(cfg: ExperimentConfig):
    model = build_model(cfg.model)
    return model, build_state(cfg.rho0, model.dim)


def _provenance(cfg: ExperimentConfig, model, **extra) -> dict:
    return {"config_fingerprint": cfg.fingerprint(), "model_fingerprint": model.fingerprint(), "seed": cfg.seed, **extra}


def _dump(obj, path) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _csv_header(fh, cfg: ExperimentConfig | None) -> csv.writer:
    if cfg is not None:
        fh.write(f"# config_fingerprint: {cfg.fingerprint()}\n")
    return csv.writer(fh)


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args, cfg: ExperimentConfig) -> None:
    """Fine trajectories; writes fine increments, or bins of cfg.dt with --digitize."""
    from .trajectories import simulate_ensemble, steps_per_bin

    model, rho0 = _setup(cfg)
    dt, dt_fine = cfg.core_dt, cfg.core_dt_fine
    k = steps_per_bin(dt, dt_fine)
    ens = simulate_ensemble(model, rho0, cfg.n_traj, dt_fine if not args.digitize else dt,
                            cfg.n_bins * (1 if args.digitize else k), dt_fine, cfg.seed, store="none")
    step = dt if args.digitize else dt_fine
    recs = [DigitizedRecord(step, ens.records[i], ens.kinds) for i in range(cfg.n_traj)]
    write_records(args.out, recs, _provenance(cfg, model, dt_fine=dt_fine), binary=args.binary)


def cmd_digitize(args, cfg) -> None:
    from .trajectories import steps_per_bin

    recs, head = read_records(args.record)
    k = steps_per_bin(args.dt, recs[0].dt)
    out = []
    for r in recs:
        if r.n_bins % k:
            raise ModelError(f"{r.n_bins} fine steps do not split into bins of {k}")
        out.append(DigitizedRecord(args.dt, r.values.reshape(r.n_bins // k, k, -1).sum(axis=1), r.kinds))
    prov = dict(head.get("provenance", {}), digitized_from_dt=recs[0].dt)
    write_records(args.out, out, prov, binary=args.binary)


def cmd_filter(args, cfg: ExperimentConfig) -> None:
    model, rho0 = _setup(cfg)
    recs, _ = read_records(args.record)
    instr = Instrument(model, recs[0].dt, cfg.n_p)
    results = []
    failed = None
    for i, r in enumerate(recs):
        out = instr.run_filter(r, rho0)
        results.append({
            "record": i,
            "states": [state_json(s) for s in out.states],
            "densities": [float(p) for p in out.densities],
            "log_likelihood": out.log_likelihood,
            "n_repairs": out.n_repairs,
            "failed_step": out.failed_step,
            "error": out.error,
        })
        if out.failed_step is not None and failed is None:
            failed = f"record {i}: {out.error}"
    _dump({"config_fingerprint": cfg.fingerprint(), "results": results}, args.out)
    if failed:
        raise NumericalFailure(failed)


def cmd_sample(args, cfg: ExperimentConfig) -> None:
    from .trajectories import SamplerConfig, sample_coarse

    model, rho0 = _setup(cfg)
    sc = SamplerConfig(method=cfg.sampler, order=cfg.order)
    instr = Instrument(model, cfg.core_dt, cfg.n_p)
    recs = []
    for i in range(cfg.n_traj):
        rec, out = sample_coarse(model, rho0, cfg.n_bins, cfg.core_dt, cfg.seed, sc, index=i, instrument=instr)
        if out.failed_step is not None:
            raise NumericalFailure(f"trajectory {i}: {out.error}")
        recs.append(rec)
    write_records(args.out, recs, _provenance(cfg, model, sampler=cfg.sampler), binary=args.binary)


def _grid_factory(cfg: ExperimentConfig, name: str):
    if name not in ("eta", "omega"):
        raise ModelError(f"grid parameter must be one of eta, omega; got {name!r}")

    spec = cfg.model
    if name == "omega" and spec.preset != "fig1":
        raise ModelError("an omega grid needs the fig1 model preset")

    def factory(v: float):
        if spec.preset is None:
            # explicit models: the efficiency of every monitored channel
            chans = [c.model_copy(update={"eta": float(v)}) for c in spec.channels]
            return build_model(spec.model_copy(update={"channels": chans}))
        return build_model(spec.model_copy(update={name: float(v)}))

    return factory


def cmd_infer(args, cfg: ExperimentConfig) -> None:
    from .inference import ParameterGrid, scan, stack_records
    from .trajectories import simulate_ensemble

    model, rho0 = _setup(cfg)
    name = args.grid.split("=")[0].strip()
    grid = ParameterGrid.parse(args.grid, _grid_factory(cfg, name))
    if args.record:
        recs, _ = read_records(args.record)
        values, dt = stack_records(recs)
    else:
        dt = cfg.core_dt
        ens = simulate_ensemble(model, rho0, cfg.n_traj, dt, cfg.n_bins, cfg.core_dt_fine, cfg.seed, store="none")
        values = ens.records
    methods = args.method or [cfg.method]
    results = [scan(values, grid, m, rho0, n_boot=args.n_boot, seed=cfg.seed, n_p=cfg.n_p, dt=dt) for m in methods]
    with open(args.out, "w", newline="") as fh:
        w = _csv_header(fh, cfg)
        w.writerow(["dt", "method", name, "loglik", "loglik_shifted", "se"])
        for r in results:
            w.writerows(r.rows())
    for r in results:
        print(f"{r.method}: argmax {name}={r.argmax:.6g}, peak {r.peak:.6g} +- {r.se:.3g}")


def cmd_verify(args, cfg: ExperimentConfig) -> None:
    from .verification import postselect_verify

    model, rho0 = _setup(cfg)
    targets = [float(x) for x in args.targets.split(",")]
    n_traj = args.ntraj if args.ntraj is not None else cfg.n_traj
    rep = postselect_verify(model, rho0, cfg.core_dt, targets, args.eps, n_traj, cfg.seed, cfg.core_dt_fine,
                            n_boot=args.n_boot)
    d = rep.to_dict()
    d["config_fingerprint"] = cfg.fingerprint()
    _dump(d, args.out)


def cmd_bench_deflate(args, cfg) -> None:
    from .reconstruction import DeflateConfig, run_deflate_benchmark

    dc = DeflateConfig(alpha=args.alpha, n_traj=args.ntraj, seed=args.seed, fine_factor=args.fine_factor,
                       dim=args.dim, t_final_ns=args.t_final_ns)
    rep = run_deflate_benchmark(dc)
    rep.write_csv(args.out)
    for m in ("robinet", "kraus1", "euler", "lindblad"):
        print(f"{m}: final mean fidelity {rep.mean_fidelity(m)[-1]:.6f}")


def cmd_expand(args, cfg: ExperimentConfig) -> None:
    from .perturbative import expansion_superoperators

    model, _ = _setup(cfg)
    order = args.order if args.order is not None else cfg.order
    d2 = model.dim**2
    print(f"# terms of the map up to order {order}; multiply by sqrt(dt)^order He_degree(x) g(x)/sqrt(dt)")
    print(f"# superoperators act on column-stacked {model.dim}x{model.dim} states ({d2}x{d2})")
    for q, k, S in expansion_superoperators(model, order):
        print(f"order {q}  hermite degree {k}  norm {np.linalg.norm(S):.6g}")
        for row in S:
            print("  " + "  ".join(f"{z.real:+.4e}{z.imag:+.4e}j" for z in row))


COMMANDS = {
    "simulate": cmd_simulate,
    "digitize": cmd_digitize,
    "filter": cmd_filter,
    "sample": cmd_sample,
    "infer": cmd_infer,
    "verify": cmd_verify,
    "bench-deflate": cmd_bench_deflate,
    "expand": cmd_expand,
}

NEEDS_CONFIG = {"simulate", "filter", "sample", "infer", "verify", "expand"}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robinet", description="Exact filtering of digitized continuous measurement records.")
    p.add_argument("--threads", type=int, default=None, help=f"BLAS threads (default: ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("--config", required=name in NEEDS_CONFIG, help="JSON config file or preset name")
        return s

    s = cmd("simulate", "fine-grained trajectories")
    s.add_argument("--out", required=True)
    s.add_argument("--digitize", action="store_true", help="write bins of duration dt instead of fine increments")
    s.add_argument("--binary", action="store_true")

    s = cmd("digitize", "sum fine increments into bins")
    s.add_argument("--record", required=True)
    s.add_argument("--dt", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--binary", action="store_true")

    s = cmd("filter", "exact filter over recorded bins")
    s.add_argument("--record", required=True)
    s.add_argument("--out", default="-")

    s = cmd("sample", "draw coarse records from the exact signal law")
    s.add_argument("--out", required=True)
    s.add_argument("--binary", action="store_true")

    s = cmd("infer", "log-likelihood scan over one model parameter")
    s.add_argument("--grid", required=True, help="name=lo:hi:n")
    s.add_argument("--record", help="records to use (default: simulate from the config)")
    s.add_argument("--method", action="append", choices=["robinet", "kraus1", "euler"])
    s.add_argument("--n-boot", type=int, default=200)
    s.add_argument("--out", default="likelihood.csv")

    s = cmd("verify", "post-selection check of the exact filter")
    s.add_argument("--targets", required=True, help="comma-separated bin values")
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--ntraj", type=int)
    s.add_argument("--n-boot", type=int, default=500)
    s.add_argument("--out", default="-")

    s = cmd("bench-deflate", "two-photon loss reconstruction benchmark")
    s.add_argument("--alpha", type=float, default=2.0)
    s.add_argument("--ntraj", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fine-factor", type=int, default=1000)
    s.add_argument("--dim", type=int)
    s.add_argument("--t-final-ns", type=float, default=100.0)
    s.add_argument("--out", default="deflate.csv")

    s = cmd("expand", "print the perturbative expansion terms")
    s.add_argument("--order", type=int)
    return p


def _threads(n: int | None):
    if n is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return None
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}")
    if n < 1:
        raise UsageError("--threads must be positive")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        limiter = _threads(args.threads)
        cfg = load_config(args.config) if args.config else None
        try:
            COMMANDS[args.command](args, cfg)
        finally:
            if limiter is not None:
                limiter.unregister()
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ValidationError as exc:
        print("invalid config:\n" + format_validation_error(exc), file=sys.stderr)
        return 1
    except (QuadratureUnderflowError, ExpmConvergenceError, NumericalFailure, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ModelError, RecordFormatError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

