"""Command-line front end: sample, fit, openloop, closedloop, montecarlo, sweep.

Exit codes: 0 ok, 2 configuration error, 3 infeasible sampling spec,
4 regression failure, 5 I/O error. Solver failures inside studies are data
(censored samples), not crashes.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from typing import Optional

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .dictionaries import get_dictionary
from .edmd import RankDeficiencyError, fit_surrogate, load_model, save_model
from .experiments import (StudyConfig, data_efficiency_sweep, monte_carlo_closed_loop,
                          open_loop_study, open_loop_sweep, reference_runs, write_ecdf_csv)
from .mpc import OcpSpec, SolverFailure, closed_loop
from .postprocess import build_dataset
from .sampler import InfeasibleSamplingError, RawRecording, sample_dynamic, sample_kinematic

log = logging.getLogger("nhkoopman")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_REGRESSION, EXIT_IO = 0, 2, 3, 4, 5


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--dict", dest="dictionary", help="D5t|D8Eul|D10m|D13t|D12f")
    p.add_argument("--cost", help="me|ce|ds")
    p.add_argument("--weights", help='cost weights, e.g. "q=1,10,1,1,1;r=0.01,0.01"')
    p.add_argument("--kind", help="kinematic|dynamic")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for studies")
    p.add_argument("--out", help="output directory (default $NHKOOPMAN_OUT or .)")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = _Parser(prog="nhkoopman", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", parents=[common], help="simulate a training recording")
    s.add_argument("-o", "--output", help="recording CSV (default recording.csv)")

    f = sub.add_parser("fit", parents=[common], help="post-process a recording and fit a model")
    f.add_argument("recording")
    f.add_argument("-o", "--output", help="model file (default model.txt)")
    f.add_argument("--per-basis", type=int, help="train on this many pairs per basis")
    f.add_argument("--window", type=int, help="smoothing window w")

    o = sub.add_parser("openloop", parents=[common], help="open-loop error study")
    src = o.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="evaluate one fitted model")
    src.add_argument("--recording", help="fit every configured dictionary/window from this")
    o.add_argument("--reference", help="infinity|square")
    o.add_argument("--runs", type=int)
    o.add_argument("--lookahead", type=int)

    c = sub.add_parser("closedloop", parents=[common], help="one receding-horizon run")
    c.add_argument("--model", help="model file (sampled and fitted from the config if omitted)")
    c.add_argument("--prediction", help="proj|noproj|nominal")
    c.add_argument("--H", type=int)
    c.add_argument("--dt", type=float)
    c.add_argument("--x0", help="comma-separated start state")
    c.add_argument("--duration", type=float)

    m = sub.add_parser("montecarlo", parents=[common], help="closed-loop ECDF study")
    m.add_argument("--model", help="model file (sampled and fitted from the config if omitted)")
    m.add_argument("--configs", help="comma list of cost-model, e.g. me-proj,ce-proj")
    m.add_argument("--draws", type=int)
    m.add_argument("--H", type=int)

    w = sub.add_parser("sweep", parents=[common], help="data-efficiency sweep")
    w.add_argument("recording")
    w.add_argument("--sizes", help="comma list of pairs per basis, 'full' for all")
    w.add_argument("--draws", type=int)
    return p


def _overrides(args) -> list:
    sets = list(args.set)
    pairs = [("model", "dictionary", args.dictionary), ("ocp", "cost", args.cost),
             ("ocp", "weights", args.weights), ("run", "model_kind", args.kind),
             ("run", "seed", args.seed), ("run", "jobs", args.jobs), ("run", "output", args.out)]
    extra = {
        "per_basis": ("regression", "per_basis"), "window": ("postprocess", "window"),
        "reference": ("experiments", "reference"), "runs": ("experiments", "runs"),
        "lookahead": ("experiments", "lookahead"), "prediction": ("ocp", "model"),
        "H": ("ocp", "horizon"), "dt": ("sampling", "dt"), "x0": ("ocp", "x0"),
        "duration": ("ocp", "duration"), "configs": ("experiments", "configs"),
        "draws": ("experiments", "draws"), "sizes": ("experiments", "sizes"),
    }
    for attr, (sec, key) in extra.items():
        pairs.append((sec, key, getattr(args, attr, None)))
    sets += [f"{sec}.{key}={val}" for sec, key, val in pairs if val is not None]
    return sets


def _path(cfg: RunConfig, name: Optional[str], default: str) -> str:
    if name:
        return name if os.path.isabs(name) or os.path.dirname(name) else os.path.join(cfg.output, name)
    return os.path.join(cfg.output, default)


def _header_lines(head: dict) -> str:
    return "".join(f"# {k}={v}\n" for k, v in head.items())


def _read(reader, path):
    try:
        return reader(path)
    except OSError:
        raise
    except (ValueError, KeyError, IndexError, StopIteration) as exc:
        raise OSError(f"cannot parse {path}: {exc}") from exc


def _sample(cfg: RunConfig) -> RawRecording:
    fn = sample_kinematic if cfg.model_kind == "kinematic" else sample_dynamic
    return fn(cfg.sampling)


def _fit(cfg: RunConfig, rec: RawRecording):
    if rec.kind != cfg.model_kind:
        raise ConfigError(f"recording is {rec.kind}, config says {cfg.model_kind}")
    data = build_dataset(rec, cfg.postprocess, cfg.model_kind)
    if cfg.per_basis is not None:
        try:
            data = data.truncate(cfg.per_basis, spread=cfg.spread)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return fit_surrogate(get_dictionary(cfg.dictionary), data, cfg.regression, drift=cfg.drift)


def _model(cfg: RunConfig, path: Optional[str]):
    if path:
        sur = _read(load_model, path)
    else:
        log.info("no model given: sampling and fitting from the config")
        sur = _fit(cfg, _sample(cfg))
    n = 3 if cfg.model_kind == "kinematic" else 5
    if sur.dictionary.arity != n:
        raise ConfigError(f"model lifts {sur.dictionary.arity}-dim states, config is "
                          f"{cfg.model_kind}")
    if abs(sur.dt - cfg.dt) > 1e-12:
        raise ConfigError(f"model dt {sur.dt} differs from config dt {cfg.dt}")
    return sur


def cmd_sample(cfg: RunConfig, args) -> int:
    rec = _sample(cfg)
    out = _path(cfg, args.output, "recording.csv")
    rec.meta = {**cfg.provenance(), **rec.meta}
    rec.write_csv(out)
    counts = rec.basis_step_counts()
    segs = {int(b): int((rec.basis_segments(b)).shape[0]) for b in counts}
    R = rec.ratio
    pairs = {b: max(0, counts[b] * R + segs[b] - segs[b] * R) for b in counts}
    print(f"wrote {out}")
    for b in sorted(counts):
        print(f"  basis {b} {tuple(rec.bases[b].tolist())}: {segs[b]} segments, {counts[b]} steps, "
              f"~{pairs[b]} pairs")
    return EXIT_OK


def cmd_fit(cfg: RunConfig, args) -> int:
    rec = _read(RawRecording.read_csv, args.recording)
    sur = _fit(cfg, rec)
    out = _path(cfg, args.output, "model.txt")
    save_model(sur, out, cfg.provenance(window=cfg.postprocess.window,
                                         per_basis=cfg.per_basis or "full"))
    print(f"wrote {out}: {sur.dictionary.name}, {sur.K.shape[0]} matrices of "
          f"{sur.dictionary.size}x{sur.dictionary.size}, pairs per basis {sur.meta['counts']}")
    return EXIT_OK


def cmd_openloop(cfg: RunConfig, args) -> int:
    if cfg.model_kind != "dynamic":
        raise ConfigError("the open-loop reference study uses the second-order robot")
    runs = reference_runs(cfg.reference, cfg.runs, cfg.sampling.noise_pos,
                          cfg.sampling.noise_heading, seed=cfg.seed, dt=cfg.dt,
                          fs=cfg.sampling.fs)
    if args.model:
        sur = _model(cfg, args.model)
        reports = {cfg.postprocess.window: open_loop_study(
            runs, {sur.dictionary.name: sur}, cfg.lookahead, cfg.postprocess.window)}
    else:
        rec = _read(RawRecording.read_csv, args.recording)
        reports = open_loop_sweep(rec, runs, [get_dictionary(d) for d in cfg.dictionaries],
                                  cfg.windows, cfg.lookahead, cfg.regression)
    for w, rep in reports.items():
        out = _path(cfg, None, f"openloop_{cfg.reference}_w{w}.csv")
        rep.meta = {**cfg.provenance(), **rep.meta}
        rep.write_csv(out)
        print(f"wrote {out}")
        print(rep.summary())
    return EXIT_OK


def cmd_closedloop(cfg: RunConfig, args) -> int:
    sur = None if cfg.model == "nominal" else _model(cfg, args.model)
    cost = cfg.cost_spec()
    spec = OcpSpec(horizon=cfg.horizon, dt=cfg.dt, cost=cost, model=cfg.model, surrogate=sur,
                   solver=cfg.solver, seed=cfg.seed)
    out = _path(cfg, None, f"closedloop_{spec.label()}.csv")
    head = cfg.provenance(cost=cost.describe(), horizon=cfg.horizon, dt=cfg.dt,
                          x0=",".join(repr(float(x)) for x in cfg.x0))
    try:
        res = closed_loop(spec, cfg.x0, cfg.duration)
    except SolverFailure as exc:
        with open(out, "w") as fh:
            fh.write(_header_lines({**head, "failure": str(exc)}))
        print(f"solver failure: {exc}; wrote {out}")
        return EXIT_OK
    res.write_csv(out, head)
    x = res.states[-1]
    print(f"wrote {out}")
    print(f"final state {np.array2string(x, precision=6)}; |x2| = {abs(x[1]):.3e} m")
    return EXIT_OK


def _study_configs(cfg: RunConfig) -> list:
    return [StudyConfig(c, m, cfg.weights or None) for c, m in cfg.configs]


def cmd_montecarlo(cfg: RunConfig, args) -> int:
    needs_model = any(m != "nominal" for _, m in cfg.configs)
    sur = _model(cfg, args.model) if needs_model else None
    reps = monte_carlo_closed_loop(cfg.model_kind, sur, _study_configs(cfg), n=cfg.draws,
                                   seed=cfg.seed, horizon=cfg.horizon, dt=cfg.dt,
                                   eval_time=cfg.duration, workers=cfg.jobs,
                                   dictionary=get_dictionary(cfg.dictionary))
    for rep in reps:
        out = _path(cfg, None, f"ecdf_{rep.label}.csv")
        write_ecdf_csv([rep], out, {**cfg.provenance(), **rep.meta})
        print(f"wrote {out}")
        print("  " + rep.summary())
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    rec = _read(RawRecording.read_csv, args.recording)
    data = build_dataset(rec, cfg.postprocess, cfg.model_kind)
    ck, cm = cfg.configs[0]
    avail = min(c for c in data.counts() if c > 0)
    for d in cfg.sizes:
        if d is not None and d > avail:
            raise ConfigError(f"sweep size {d} exceeds the {avail} pairs available per basis")
    reps = data_efficiency_sweep(cfg.model_kind, data, get_dictionary(cfg.dictionary), cfg.sizes,
                                 n=cfg.draws, seed=cfg.seed, spread=cfg.spread, drift=cfg.drift,
                                 config=StudyConfig(ck, cm, cfg.weights or None),
                                 opts=cfg.regression, horizon=cfg.horizon,
                                 eval_time=cfg.duration, workers=cfg.jobs)
    out = _path(cfg, None, "sweep.csv")
    write_ecdf_csv(list(reps.values()), out, cfg.provenance(configuration=f"{ck}-{cm}"))
    print(f"wrote {out}")
    base = reps.get(None)
    for d, rep in reps.items():
        ks = f", KS to full {rep.ks_distance(base):.3f}" if base is not None else ""
        print("  " + rep.summary() + ks)
    return EXIT_OK


COMMANDS = {"sample": cmd_sample, "fit": cmd_fit, "openloop": cmd_openloop,
            "closedloop": cmd_closedloop, "montecarlo": cmd_montecarlo, "sweep": cmd_sweep}


def _glue_values(argv: list) -> list:
    # values such as "-1,-0.5,-0.52" would otherwise be read as options
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in ("--x0", "--weights") and i + 1 < len(argv):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
            continue
        out.append(a)
        i += 1
    return out


def main(argv=None) -> int:
    argv = _glue_values(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgError as exc:
        print(f"nhkoopman: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        os.makedirs(cfg.output, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleSamplingError as exc:
        print(f"infeasible sampling spec: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except RankDeficiencyError as exc:
        print(f"regression failed: {exc}", file=sys.stderr)
        return EXIT_REGRESSION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
