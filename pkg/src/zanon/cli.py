"""Command line entry point: ``zanon {anonymize,model,simulate,estimate,generate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import model as zmodel
from .io import (BLUR_TOKEN, MalformedLineError, escape_token, iter_records,
                 read_popularity, write_popularity,
                 write_table)
from .popularity import (AccessLog, RatePopularity, estimate_exposure_probs,
                         power_law_rates)
from .simulator import SimConfig, generate_arrays, mean_report, run_seeds
from .stream import (AnonymizerState, InvalidConfigError,
                     TimestampRegressionError, Verdict, ZAnonConfig)

log = logging.getLogger("zanon")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2

SWEEPABLE = ("z", "k", "A", "U", "N")


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


@contextmanager
def _open_in(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdin
    else:
        try:
            fh = open(path, encoding="utf-8", newline="")
        except OSError as exc:
            raise InputError(str(exc)) from None
        with fh:
            yield fh


@contextmanager
def _open_out(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def parse_sweep(text: str) -> tuple[str, list[int]]:
    """``param=start:stop:step`` (stop inclusive) or ``param=v1,v2,...``."""
    if "=" not in text:
        raise ConfigError(f"bad sweep {text!r}: expected param=start:stop:step")
    name, spec = text.split("=", 1)
    name = name.strip()
    if name not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {name!r}; choose one of {', '.join(SWEEPABLE)}")
    try:
        if ":" in spec:
            parts = [int(x) for x in spec.split(":")]
            if len(parts) == 2:
                parts.append(1)
            start, stop, step = parts
            if step <= 0 or stop < start:
                raise ConfigError(f"bad sweep range {spec!r}")
            values = list(range(start, stop + 1, step))
        else:
            values = [int(x) for x in spec.split(",")]
    except ValueError:
        raise ConfigError(f"bad sweep values {spec!r}") from None
    if not values:
        raise ConfigError("empty sweep")
    return name, values


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None


def load_popularity(spec: str) -> tuple[RatePopularity, dict]:
    """``powerlaw:<A>:<lambda1>`` or ``file:<path>``."""
    kind, _, rest = spec.partition(":")
    if kind == "powerlaw":
        parts = rest.split(":") if rest else []
        try:
            A = int(parts[0])
            lam = float(parts[1]) if len(parts) > 1 else 0.05
            return power_law_rates(A, lam), {}
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"bad popularity {spec!r}: {exc}") from None
    if kind == "file":
        try:
            with open(rest, encoding="utf-8") as fh:
                return read_popularity(fh)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read popularity file {rest!r}: {exc}") from None
    raise ConfigError(f"bad popularity source {spec!r}")


# ---------------------------------------------------------------- anonymize

def cmd_anonymize(args) -> int:
    try:
        config = ZAnonConfig(z=args.z, delta_t=args.delta_t, slack=args.slack)
    except InvalidConfigError as exc:
        raise ConfigError(str(exc)) from None
    state = AnonymizerState(config)
    malformed: list = []
    regressions = 0
    blur = args.mode == "blur"
    proc = state.process
    release = Verdict.RELEASE
    with _open_in(args.input) as fin, _open_out(args.out) as fout:
        write = fout.write
        for rec in iter_records(fin, errors=malformed, strict=args.strict):
            try:
                decision = proc(rec.obs)
            except TimestampRegressionError as exc:
                if args.strict:
                    raise InputError(str(exc)) from None
                regressions += 1
                continue
            if decision.verdict is release:
                raw = rec.raw
                write(raw if raw.endswith("\n") else raw + "\n")
            elif blur:
                write(f"{rec.t_text},{rec.u_text},{BLUR_TOKEN}\n")
            if args.unbuffered:
                fout.flush()
    for exc in malformed[:10]:
        log.warning("skipped %s", exc)
    summary = {
        "in": state.stats.observations_in,
        "released": state.stats.released,
        "suppressed": state.stats.suppressed,
        "malformed": len(malformed),
        "regressions": regressions,
        "evictions": state.stats.evictions,
        "peak_table_size": state.stats.peak_table_size,
    }
    print("summary " + " ".join(f"{k}={v}" for k, v in summary.items()), file=sys.stderr)
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
    return EXIT_OK


# -------------------------------------------------------------------- model

def _model_base(args) -> tuple[zmodel.ModelParams, RatePopularity, dict]:
    pop, file_params = load_popularity(args.popularity)
    U = args.U if args.U is not None else int(file_params.get("U", zmodel.DEFAULT_PARAMS.U))
    A = args.A if args.A is not None else len(pop)
    params = zmodel.ModelParams(U=U, A=A, delta_t=args.delta_t, N=args.N, z=args.z, k=2)
    return params, pop, file_params


def cmd_model(args) -> int:
    params, pop, _ = _model_base(args)
    sweep_name, sweep_values = (None, [None])
    if args.sweep:
        sweep_name, sweep_values = parse_sweep(args.sweep)
        if sweep_name == "k" and args.k is not None:
            raise ConfigError("k is swept; do not also pass --k")
    ks = parse_int_list(args.k) if args.k is not None else [2]
    if sweep_name == "A" and max(sweep_values) > len(pop):
        raise ConfigError(f"popularity has only {len(pop)} ranks")

    rows = []
    dump_rows = []
    for value in sweep_values:
        point = params
        point_ks = ks
        if sweep_name == "k":
            point_ks = [value]
        elif sweep_name is not None:
            point = params._replace(**{sweep_name: value})
        try:
            point.validate()
            if point.A > len(pop):
                raise ValueError(f"A={point.A} exceeds popularity length {len(pop)}")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for k in point_ks:
            if k < 1:
                raise ConfigError("k must be >= 1")
        rep = zmodel.evaluate(point._replace(k=1), pop)
        lead = [value] if sweep_name not in (None, "k") else []
        for k in point_ks:
            pk = zmodel.p_k_anon(rep.p_q, point.U, k, log_p_q=rep.log_p_q)
            rows.append(lead + [k, rep.p_q, rep.log_p_q, pk])
        if args.dump_py:
            for r in range(point.A):
                dump_rows.append(lead + [r + 1, rep.p_x[r], rep.p_o[r], rep.p_y[r], rep.p_n[r]])

    header = {"command": "model", **params._asdict(), "popularity": args.popularity,
              "sweep": args.sweep or "", "k": ",".join(map(str, ks)),
              "columns": "p_q=pair match probability; p_k_anon=P[>=k-1 identical others]",
              "version": __version__}
    if sweep_name == "k":
        del header["k"]
    lead_cols = [sweep_name] if sweep_name not in (None, "k") else []
    with _open_out(args.out) as fh:
        write_table(fh, header, lead_cols + ["k", "p_q", "log_p_q", "p_k_anon"], rows)
    if args.dump_py:
        with open(args.dump_py, "w", encoding="utf-8", newline="") as fh:
            write_table(fh, header, lead_cols + ["rank", "p_x", "p_o", "p_y", "p_n"], dump_rows)
    return EXIT_OK


# ----------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    pop, _ = load_popularity(args.popularity or f"powerlaw:{args.A}:0.05")
    ks = parse_int_list(args.k) if args.k else [2]
    try:
        cfg = SimConfig(U=args.U, A=args.A, rates=pop, delta_t=args.delta_t,
                        N=args.N, z=args.z, seed=args.seed)
        params = zmodel.ModelParams(U=args.U, A=args.A, delta_t=args.delta_t,
                                    N=args.N, z=args.z, k=1)
        params.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seeds = list(range(args.seed, args.seed + args.seeds))
    reports = run_seeds(cfg, seeds, ks)
    emp_py, emp_k = mean_report(reports)
    emp_px = np.mean([r.empirical_p_x for r in reports], axis=0)
    rep = zmodel.evaluate(params, pop)
    model_k = {k: zmodel.p_k_anon(rep.p_q, args.U, k, log_p_q=rep.log_p_q) for k in ks}

    header = {"command": "simulate", "U": args.U, "A": args.A, "delta_t": args.delta_t,
              "N": args.N, "z": args.z, "seed": args.seed, "seeds": args.seeds,
              "popularity": args.popularity or f"powerlaw:{args.A}:0.05",
              "released": sum(r.stream_stats["released"] for r in reports),
              "observations": sum(r.stream_stats["observations_in"] for r in reports),
              "version": __version__}
    with _open_out(args.out) as fh:
        write_table(fh, header, ["k", "empirical_k_anon_fraction", "model_p_k_anon"],
                    [[k, emp_k[k], model_k[k]] for k in ks])
    if args.per_rank:
        n = args.U * args.N * len(seeds)
        sigma = np.sqrt(rep.p_x * (1 - rep.p_x) / n)
        with open(args.per_rank, "w", encoding="utf-8", newline="") as fh:
            write_table(fh, header,
                        ["rank", "empirical_p_x", "empirical_p_y", "model_p_x", "model_p_y", "sigma_p_x"],
                        ([r + 1, emp_px[r], emp_py[r], rep.p_x[r], rep.p_y[r], sigma[r]]
                         for r in range(args.A)))
    return EXIT_OK


# ----------------------------------------------------------------- estimate

def cmd_estimate(args) -> int:
    errors: list = []
    with _open_in(args.input) as fin:
        records = [rec.obs for rec in iter_records(fin, errors=errors, strict=args.strict)]
    if not records:
        raise InputError("no observations in log")
    if args.period is not None:
        period = args.period
    else:
        span = max(r.t for r in records) - args.start
        period = max(1, int(np.floor(span / args.delta_t)) + 1) * args.delta_t
    try:
        est = estimate_exposure_probs(AccessLog(records, period, args.delta_t, args.start))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    header = {"command": "estimate", "input": args.input or "-", "delta_t": args.delta_t,
              "start": args.start, "period": period, "windows": est.windows,
              "U": est.users, "A": len(est.popularity), "malformed": len(errors),
              "version": __version__}
    with _open_out(args.out) as fh:
        write_popularity(fh, est.popularity, header)
    return EXIT_OK


# ----------------------------------------------------------------- generate

def cmd_generate(args) -> int:
    pop, _ = load_popularity(args.popularity or f"powerlaw:{args.A}:0.05")
    A = args.A if args.A is not None else len(pop)
    try:
        cfg = SimConfig(U=args.U, A=A, rates=pop, delta_t=args.delta_t, N=args.N,
                        z=1, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    times, users, attrs = generate_arrays(cfg)
    labels = pop.labels
    with _open_out(args.out) as fh:
        fh.write(f"# command=generate U={args.U} A={A} delta_t={args.delta_t} "
                 f"N={args.N} seed={args.seed} popularity={args.popularity}\n")
        fh.write("t,u,a\n")
        for t, u, a in zip(times.tolist(), users.tolist(), attrs.tolist()):
            name = escape_token(str(labels[a])) if labels else f"a{a + 1}"
            fh.write(f"{t:.6f},u{u},{name}\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zanon", description="Zero-delay z-anonymity toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("anonymize", help="filter a t,u,a stream")
    a.add_argument("input", nargs="?", help="input file (default: stdin)")
    a.add_argument("--z", type=int, required=True)
    a.add_argument("--delta-t", type=float, required=True)
    a.add_argument("--mode", choices=("drop", "blur"), default="drop")
    a.add_argument("--slack", type=float, default=0.0)
    a.add_argument("--strict", action="store_true", help="abort on malformed or late records")
    a.add_argument("--out", help="output file (default: stdout)")
    a.add_argument("--summary", help="also write the summary counters as JSON here")
    a.add_argument("--unbuffered", action="store_true", help="flush after every record")
    a.set_defaults(func=cmd_anonymize)

    m = sub.add_parser("model", help="evaluate the probability model")
    m.add_argument("--U", type=int)
    m.add_argument("--A", type=int)
    m.add_argument("--delta-t", type=float, default=1.0)
    m.add_argument("--N", type=int, default=zmodel.DEFAULT_PARAMS.N)
    m.add_argument("--z", type=int, default=zmodel.DEFAULT_PARAMS.z)
    m.add_argument("--k", help="comma-separated k values (default 2)")
    m.add_argument("--popularity", default="powerlaw:5000:0.05")
    m.add_argument("--sweep", help="param=start:stop:step, param in z,k,A,U,N")
    m.add_argument("--dump-py", help="also write per-rank p_x/p_o/p_y/p_n here")
    m.add_argument("--out")
    m.set_defaults(func=cmd_model)

    s = sub.add_parser("simulate", help="simulate streams and compare with the model")
    s.add_argument("--U", type=int, default=2000)
    s.add_argument("--A", type=int, default=500)
    s.add_argument("--delta-t", type=float, default=1.0)
    s.add_argument("--N", type=int, default=24)
    s.add_argument("--z", type=int, default=20)
    s.add_argument("--k", default="2")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to average")
    s.add_argument("--popularity")
    s.add_argument("--per-rank", help="also write per-rank empirical vs model table here")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate exposure probabilities from a log")
    e.add_argument("input", nargs="?")
    e.add_argument("--delta-t", type=float, required=True)
    e.add_argument("--period", type=float, help="log span in seconds (default: whole windows covering the data)")
    e.add_argument("--start", type=float, default=0.0)
    e.add_argument("--strict", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    g = sub.add_parser("generate", help="write a synthetic t,u,a stream")
    g.add_argument("--U", type=int, default=2000)
    g.add_argument("--A", type=int)
    g.add_argument("--delta-t", type=float, default=1.0)
    g.add_argument("--N", type=int, default=24)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--popularity")
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "generate" and args.A is None and args.popularity is None:
        args.A = 500
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"zanon: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, MalformedLineError) as exc:
        print(f"zanon: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
