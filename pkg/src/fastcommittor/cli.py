"""Command line entry point: ``fcm <subcommand> [options]``.

Options can also come from a ``key = value`` text file given by ``--config``;
flags on the command line take precedence.  Every output file starts with a
record of the resolved configuration and package version.
"""
import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from .dataset import read_dataset, write_dataset
from .dynamics import PotentialSpec, SimulationPlan, generate_dataset
from .errors import FCMError, FormatError
from .fcm import fit, grid_search, read_model, write_model
from .reference import evaluate_mse, read_field, solve_reference, write_field
from .regions import triple_well_regions
from .verify import run_checks

log = logging.getLogger("fastcommittor")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4

COMMON_DEFAULTS = {"seed": 0, "threads": None}
DEFAULTS = {
    "generate": {"n_samples": 100_000, "beta": 2.0, "beta_s": 1.0, "dt": 1e-3, "tau": 1e-2,
                 "spacing": 1e-1, "burn_in": 10.0},
    "reference": {"beta": 2.0, "u_min": -2.5, "u_max": 2.5, "v_min": -1.5, "v_max": 2.5,
                  "n_u": 401, "n_v": 321},
    "fit": {"epsilon": 1.0, "gamma": 1e-6, "rank": 1000, "validation": None, "report": None},
    "search": {"epsilons": "0.5,1,2", "gammas": "1e-8,1e-6,1e-4", "ranks": "100,500"},
    "benchmark": {"sizes": "1000,10000,100000", "repetitions": 3, "epsilon": 1.0, "gamma": 1e-6,
                  "rank": 500, "validation": None, "traces": None},
    "inspect-scaling": {},
    "verify": {"instances": 20},
}
TYPES = {
    "n_samples": int, "n_u": int, "n_v": int, "rank": int, "repetitions": int, "seed": int,
    "threads": int, "instances": int,
    "beta": float, "beta_s": float, "dt": float, "tau": float, "spacing": float, "burn_in": float,
    "u_min": float, "u_max": float, "v_min": float, "v_max": float, "epsilon": float, "gamma": float,
}


def read_config(path):
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise argparse.ArgumentTypeError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text):
    return [int(float(t)) for t in str(text).split(",") if t.strip()]


def _header(config):
    return f"# fastcommittor {__version__} config={json.dumps(config, sort_keys=True)}"


def _write_csv(path, config, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(_header(config) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def cmd_generate(cfg):
    plan = SimulationPlan(cfg["n_samples"], cfg["dt"], cfg["tau"], cfg["spacing"], cfg["burn_in"], cfg["seed"])
    pot = PotentialSpec(beta=cfg["beta"], beta_s=cfg["beta_s"])
    data = generate_dataset(plan, pot, triple_well_regions())
    write_dataset(cfg["out"], data)
    log.info("wrote %d pairs to %s", data.count, cfg["out"])


def cmd_reference(cfg):
    field = solve_reference(
        triple_well_regions(), cfg["beta"],
        bounds=(cfg["u_min"], cfg["u_max"], cfg["v_min"], cfg["v_max"]), shape=(cfg["n_u"], cfg["n_v"]),
    )
    write_field(cfg["out"], field, cfg)
    log.info("reference residual %.3e written to %s", field.residual, cfg["out"])


def _iteration_rows(report, prefix=()):
    for it in report.iterations:
        yield (*prefix, it.iteration, it.validation_loss, it.residual_trace, it.rank, it.seconds,
               *it.scaling.trace_fractions())


def _iteration_header(dim, prefix=()):
    return [*prefix, "iteration", "validation_loss", "residual_trace", "rank", "seconds",
            *[f"trace_fraction_{i + 1}" for i in range(dim)]]


def cmd_fit(cfg):
    data = read_dataset(cfg["data"])
    val = read_dataset(cfg["validation"]) if cfg.get("validation") else None
    model, report = fit(data, cfg["epsilon"], cfg["gamma"], cfg["rank"], cfg["seed"], validation=val)
    write_model(cfg["out"], model, cfg)
    if cfg.get("report"):
        _write_csv(cfg["report"], cfg, _iteration_header(data.dim), _iteration_rows(report))
    log.info("fit %d landmarks in %.2fs", len(model.landmarks), report.seconds)


def cmd_search(cfg):
    data = read_dataset(cfg["data"])
    res = grid_search(data, _floats(cfg["epsilons"]), _floats(cfg["gammas"]), _ints(cfg["ranks"]), cfg["seed"])
    rows = [(r["epsilon"], r["gamma"], r["rank"], r["loss"], r["status"],
             int((r["epsilon"], r["gamma"], r["rank"]) == res.best)) for r in res.table]
    _write_csv(cfg["out"], cfg, ["epsilon", "gamma", "rank", "validation_loss", "status", "selected"], rows)
    log.info("best epsilon=%g gamma=%g rank=%d loss=%.6g", res.epsilon, res.gamma, res.rank, res.loss)


def cmd_benchmark(cfg):
    data = read_dataset(cfg["data"])
    field = read_field(cfg["reference"])
    if cfg.get("validation"):
        pool, val = data, read_dataset(cfg["validation"])
    else:
        pool, val = data.split(0.2, cfg["seed"])
    rows, traces = [], []
    ss = np.random.SeedSequence(cfg["seed"])
    sizes = _ints(cfg["sizes"])
    for n in sizes:
        for rep, child in enumerate(ss.spawn(cfg["repetitions"])):
            sub_seed, fit_seed = child.generate_state(2)
            sub = pool.sample(n, np.random.default_rng(sub_seed))
            model, report = fit(sub, cfg["epsilon"], cfg["gamma"], cfg["rank"], int(fit_seed), validation=val)
            mse = evaluate_mse(model, val, field)
            rows.append((n, rep, mse.weighted, mse.unweighted, report.seconds, report.iterations[-1].residual_trace))
            traces.extend(_iteration_rows(report, (n, rep)))
            log.info("N=%d rep=%d mse=%.3e %.2fs", n, rep, mse.weighted, report.seconds)
    _write_csv(cfg["out"], cfg, ["N", "repetition", "mse_weighted", "mse_unweighted", "fit_seconds",
                                 "residual_trace"], rows)
    if cfg.get("traces"):
        _write_csv(cfg["traces"], cfg, _iteration_header(data.dim, ("N", "repetition")), traces)


def cmd_inspect_scaling(cfg):
    model, _ = read_model(cfg["model"])
    M = model.scaling
    vals, vecs = np.linalg.eigh(M.sqrt)
    order = np.argsort(vals)[::-1]
    rows = []
    for i in range(M.dim):
        for j in range(M.dim):
            rows.append(("M", i + 1, j + 1, M.entries[i, j]))
    for i in range(M.dim):
        for j in range(M.dim):
            rows.append(("sqrtM", i + 1, j + 1, M.sqrt[i, j]))
    for k, idx in enumerate(order):
        rows.append(("sqrt_eigenvalue", k + 1, 0, vals[idx]))
        for i in range(M.dim):
            rows.append(("sqrt_eigenvector", k + 1, i + 1, vecs[i, idx]))
    for i, f in enumerate(M.trace_fractions()):
        rows.append(("trace_fraction", i + 1, 0, f))
    _write_csv(cfg["out"], cfg, ["kind", "row", "col", "value"], rows)


def cmd_verify(cfg):
    results = run_checks(cfg["seed"], cfg["instances"])
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}" for r in results]
    text = _header(cfg) + "\n" + "\n".join(lines) + "\n"
    if cfg.get("out"):
        with open(cfg["out"], "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


COMMANDS = {
    "generate": cmd_generate,
    "reference": cmd_reference,
    "fit": cmd_fit,
    "search": cmd_search,
    "benchmark": cmd_benchmark,
    "inspect-scaling": cmd_inspect_scaling,
    "verify": cmd_verify,
}
REQUIRED = {
    "generate": ["out"],
    "reference": ["out"],
    "fit": ["data", "out"],
    "search": ["data", "out"],
    "benchmark": ["data", "reference", "out"],
    "inspect-scaling": ["model", "out"],
    "verify": [],
}
FILE_KEYS = ("data", "out", "reference", "model", "validation", "report", "traces")


def build_parser():
    parser = argparse.ArgumentParser(prog="fcm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file with defaults for any option")
        p.add_argument("--seed", type=int, help="master random seed (default 0)")
        p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
        p.add_argument("-v", "--verbose", action="store_true")
        keys = list(defaults) + [k for k in FILE_KEYS if k in REQUIRED[name] and k not in defaults]
        if name == "verify":
            keys.append("out")
        for key in keys:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=TYPES.get(key, str))
    return parser


def resolve(args):
    """Merge defaults, config file and explicit flags into one dict."""
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(DEFAULTS[args.command])
    if args.config:
        for k, v in read_config(args.config).items():
            cfg[k] = TYPES.get(k, str)(v)
    for k, v in vars(args).items():
        if k in ("command", "config", "verbose") or v is None:
            continue
        cfg[k] = v
    missing = [k for k in REQUIRED[args.command] if not cfg.get(k)]
    if missing:
        raise argparse.ArgumentTypeError(f"missing required option(s): {', '.join('--' + m for m in missing)}")
    cfg["command"] = args.command
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
    except (argparse.ArgumentTypeError, ValueError, OSError) as exc:
        print(f"fcm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    limiter = None
    if cfg.get("threads"):
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(cfg["threads"])
    try:
        status = COMMANDS[args.command](cfg)
    except (FileNotFoundError, PermissionError, IsADirectoryError, FormatError) as exc:
        print(f"fcm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FCMError as exc:
        code = {"config": EXIT_CONFIG, "io": EXIT_IO}.get(exc.family, EXIT_NUMERICAL)
        print(f"fcm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return status or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
