"""Command-line experiment runner: ``adfs-lab run | verify | spectra``.

Config files are flat ``key = value`` text; ``#`` starts a comment. See
README.md for the key reference. Exit codes: 0 ok, 1 validation error (bad
config or a failed verification), 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from . import __version__
from .adfs import run_adfs, select_parameters
from .graph import augment, build_topology, load_graph, spectral_quantities
from .problem import (load_libsvm, partition_dataset, solve_reference,
                      synth_classification, synth_regression)
from .schedule import Schedule, simulate_time

log = logging.getLogger("adfslab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

TOPOLOGIES = ("complete", "ring", "path", "grid2d")


class ConfigError(ValueError):
    """Raised with one message per offending field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class ExperimentConfig:
    topology: str = "grid2d"
    graph_file: str = ""
    n: int = 4
    m: int = 100
    d: int = 5
    loss: str = "logistic"
    sigma: float = 1.0
    tau: float = 5.0
    p_comm: float | None = None
    K: int = 10_000
    seeds: tuple = (0,)
    dataset: str = "synthetic"
    data_seed: int = 0
    record_every: int = 100
    oracle: bool = True
    output: str = "out"

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "seeds":
                v = ",".join(str(s) for s in v)
            elif v is None:
                v = ""
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _parse_bool(s):
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_seeds(s):
    out = tuple(int(t) for t in s.replace(" ", "").split(",") if t)
    if not out:
        raise ValueError("empty seed list")
    return out


_PARSERS = {
    "topology": str, "graph_file": str, "n": int, "m": int, "d": int, "loss": str,
    "sigma": float, "tau": float, "p_comm": lambda s: float(s) if s else None,
    "K": int, "seeds": _parse_seeds, "dataset": str, "data_seed": int,
    "record_every": int, "oracle": _parse_bool, "output": str,
}


def parse_config(text, base_dir="."):
    """Parse and validate config text; raises :class:`ConfigError` listing every bad field."""
    values, problems, seen = {}, [], set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep:
            problems.append(f"line {lineno}: expected key = value")
            continue
        if key not in _PARSERS:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        if key in seen:
            problems.append(f"line {lineno}: duplicate key {key!r}")
            continue
        seen.add(key)
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            problems.append(f"{key}: {exc}")
    for key in ("graph_file", "output"):
        if values.get(key) and not os.path.isabs(values[key]):
            values[key] = os.path.normpath(os.path.join(base_dir, values[key]))
    if values.get("dataset", "synthetic") != "synthetic" and not os.path.isabs(values["dataset"]):
        values["dataset"] = os.path.normpath(os.path.join(base_dir, values["dataset"]))
    cfg = ExperimentConfig(**values)
    try:
        validate_config(cfg)
    except ConfigError as exc:
        problems += exc.problems
    if problems:
        raise ConfigError(problems)
    return cfg


def validate_config(cfg):
    problems = []
    if cfg.graph_file:
        if not os.path.exists(cfg.graph_file):
            problems.append(f"graph_file: {cfg.graph_file} does not exist")
    elif cfg.topology not in TOPOLOGIES:
        problems.append(f"topology: must be one of {TOPOLOGIES}, got {cfg.topology!r}")
    elif cfg.n < 2:
        problems.append("n: topologies need at least 2 nodes")
    elif cfg.topology == "grid2d" and math.isqrt(cfg.n) ** 2 != cfg.n:
        problems.append(f"n: grid2d needs a perfect square, got {cfg.n}")
    for key in ("m", "d", "record_every"):
        if getattr(cfg, key) < 1:
            problems.append(f"{key}: must be at least 1")
    if cfg.loss not in ("logistic", "quadratic"):
        problems.append(f"loss: must be logistic or quadratic, got {cfg.loss!r}")
    if not (cfg.sigma > 0 and math.isfinite(cfg.sigma)):
        problems.append("sigma: must be positive and finite")
    if not (cfg.tau >= 0 and math.isfinite(cfg.tau)):
        problems.append("tau: must be nonnegative and finite")
    if cfg.p_comm is not None and not 0 < cfg.p_comm < 1:
        problems.append("p_comm: must lie in (0, 1)")
    if cfg.K < 0:
        problems.append("K: must be nonnegative")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        problems.append("seeds: duplicates")
    if any(s < 0 for s in cfg.seeds):
        problems.append("seeds: must be nonnegative")
    if cfg.dataset != "synthetic" and not os.path.exists(cfg.dataset):
        problems.append(f"dataset: {cfg.dataset} does not exist")
    if not cfg.output:
        problems.append("output: required")
    if problems:
        raise ConfigError(problems)


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


# --------------------------------------------------------------------------


def build_problem(cfg):
    if cfg.graph_file:
        graph = load_graph(cfg.graph_file)
    else:
        graph = build_topology(cfg.topology, cfg.n)
    n = graph.n
    if cfg.dataset == "synthetic":
        maker = synth_classification if cfg.loss == "logistic" else synth_regression
        prob = maker(cfg.data_seed, n, cfg.m, cfg.d, sigma=cfg.sigma)
    else:
        X, y = load_libsvm(cfg.dataset, cfg.d)
        prob = partition_dataset(X, y, n, cfg.m, cfg.loss, cfg.sigma, cfg.data_seed)
    return graph, prob


def plan_for(cfg, graph, prob):
    aug = augment(graph, prob.L, prob.sigma)
    spectra = spectral_quantities(aug)
    plan = select_parameters(aug, spectra, prob.summary(), tau=cfg.tau,
                             overrides={"p_comm": cfg.p_comm})
    return aug, spectra, plan


SEED_COLUMNS = ("iteration", "idealized_time", "primal_error_y", "primal_error_v")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, (int, np.integer)) else repr(float(v)) for v in r])


def run_experiment(cfg, echo=print):
    """Run every seed, write per-seed CSVs, the aggregate and the manifest; returns the output paths."""
    graph, prob = build_problem(cfg)
    aug, spectra, plan = plan_for(cfg, graph, prob)
    F_star = prob.value(solve_reference(prob)) if cfg.oracle else 0.0
    os.makedirs(cfg.output, exist_ok=True)
    paths = []
    per_seed = []
    for seed in cfg.seeds:
        res = run_adfs(prob, aug, plan, cfg.K, seed, record_every=cfg.record_every,
                       R=spectra.R, F_star=F_star)
        trace = simulate_time(Schedule(seed, res.events, aug.E), aug, cfg.tau)
        t_at = np.array([0.0 if it == 0 else trace.t_max[it - 1] for it in res.iterations])
        rows = list(zip(res.iterations.tolist(), t_at, res.primal_error_y, res.primal_error_v))
        path = os.path.join(cfg.output, f"seed_{seed}.csv")
        _write_csv(path, SEED_COLUMNS, rows)
        paths.append(path)
        per_seed.append(np.array([r[1:] for r in rows], dtype=float))
        echo(f"seed {seed}: {len(rows)} rows -> {path}")

    its = run_iterations(cfg.K, cfg.record_every)
    stack = np.stack(per_seed)  # (seeds, rows, 3)
    mean = stack.mean(axis=0)
    k = stack.shape[0]
    se = stack.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(mean)
    header = ["iteration"]
    for name in SEED_COLUMNS[1:]:
        header += [f"{name}_mean", f"{name}_stderr"]
    agg_rows = [[it] + [x for pair in zip(mean[r], se[r]) for x in pair] for r, it in enumerate(its)]
    agg = os.path.join(cfg.output, "aggregate.csv")
    _write_csv(agg, header, agg_rows)
    paths.append(agg)

    manifest = os.path.join(cfg.output, "manifest.txt")
    with open(manifest, "w") as fh:
        fh.write(f"version = {__version__}\n")
        for key, val in (("rho", plan.rho), ("p_comm", plan.p_comm), ("gamma_tilde", plan.gamma_tilde),
                         ("sigma_A", plan.sigma_A), ("S_comp", plan.S_comp), ("F_star", F_star)):
            fh.write(f"{key} = {val!r}\n")
        fh.write("# config\n")
        fh.write(cfg.to_text())
    paths.append(manifest)
    echo(f"aggregate -> {agg}; manifest -> {manifest}")
    return paths


def run_iterations(K, record_every):
    """Iterations at which :func:`run_adfs` records: 0, every ``record_every``, and ``K``."""
    its = list(range(0, K + 1, record_every))
    if its[-1] != K:
        its.append(K)
    return its


def read_manifest(path):
    """Manifest as a dict; keys of the config section are prefixed with ``config.``."""
    out, prefix = {}, ""
    with open(path) as fh:
        for line in fh:
            if line.strip() == "# config":
                prefix = "config."
                continue
            line = line.split("#", 1)[0].strip()
            if line:
                k, _, v = line.partition("=")
                out[prefix + k.strip()] = v.strip()
    return out


# --------------------------------------------------------------------------


def cmd_run(args, echo):
    cfg = load_config(args.config)
    run_experiment(cfg, echo=echo)
    return EXIT_OK


def cmd_verify(args, echo):
    from .verify import run_verification

    results = run_verification(args.suite, p_comm=args.p_comm, tau=args.tau, echo=echo)
    failed = [r for r in results if not r.passed]
    echo(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_INVALID


def cmd_spectra(args, echo):
    graph = load_graph(args.graph)
    L = np.full((graph.n, args.m), args.L)
    aug = augment(graph, L, args.sigma)
    sp = spectral_quantities(aug)
    report = {"n": graph.n, "E": graph.E, "lambda_min_L": sp.lambda_min_L, "gamma": sp.gamma,
              "gamma_tilde": sp.gamma_tilde, "sigma_A": sp.sigma_A,
              "lambda_max_A2": sp.lambda_max_A2, "max_virtual_|R-1|": float(np.abs(sp.R_virtual - 1).max())}
    for k, v in report.items():
        echo(f"{k} = {v!r}")
    for (k, l, _), r in zip(graph.edges, sp.R_comm):
        echo(f"R[{k},{l}] = {float(r)!r}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="adfs-lab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run acceptance checks")
    v.add_argument("--suite", required=True,
                   choices=["spectral", "prox", "apcg", "adfs", "timing", "all"])
    v.add_argument("--p-comm", type=float, default=None,
                   help="timing suite: also report a plan forced to this communication share")
    v.add_argument("--tau", type=float, default=None,
                   help="timing suite: communication time for the forced plan")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("spectra", help="spectral constants of a graph file")
    s.add_argument("--graph", required=True)
    s.add_argument("--m", type=int, default=1, help="virtual nodes per center")
    s.add_argument("--L", type=float, default=1.0, help="uniform sample smoothness")
    s.add_argument("--sigma", type=float, default=1.0)
    s.set_defaults(func=cmd_spectra)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    echo = print
    try:
        return args.func(args, echo)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc, ValueError) else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
