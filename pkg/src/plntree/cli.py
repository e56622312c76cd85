"""Command-line entry point: ``plntree {fit,resample,simulate,eval}``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import shutil
import sys
import tempfile
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .emtree import NetworkConfig, StageError, infer_network, threshold_network
from .evaluate import betweenness, evaluate_network
from .io import (
    OFFSET_MODES,
    build_design,
    load_counts,
    load_covariates,
    load_matrix,
    make_offsets,
    write_counts,
    write_curve,
    write_dot,
    write_edges,
    write_json,
    write_matrix,
)
from .pln import PlnConfig
from .resample import ResampleConfig, stability_selection, threshold_curve, threshold_frequencies
from .simulate import SimulationSpec, simulate_dataset

logger = logging.getLogger("plntree")

OUT_ENV = "PLNTREE_OUT"
DEFAULT_OUT = "plntree_out"


class CliError(RuntimeError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _add_inputs(sp):
    sp.add_argument("--counts", required=True, help="sites x species integer CSV")
    sp.add_argument("--covariates", help="site covariates CSV (headers may end in :num, :ord, :cat)")
    sp.add_argument("--use", help="comma-separated covariates to include; default all, '' for none")
    sp.add_argument("--offsets", help="sites x species offsets CSV (implies --offset-mode provided)")
    sp.add_argument("--offset-mode", choices=OFFSET_MODES, help="default: zero, or provided with --offsets")
    sp.add_argument("--threshold", type=float, help="edge-probability cut (default 2/p)")
    sp.add_argument("--covariance", choices=("full", "diagonal"), default="full",
                    help="per-site variational covariance family")
    sp.add_argument("--keep-zero-species", action="store_true",
                    help="keep all-zero species columns instead of dropping them")


def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    sp.add_argument("--no-timing", action="store_true",
                    help="omit wall-clock times so report.json is byte-reproducible")
    sp.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="plntree",
        description="Species interaction networks from count data via tree averaging.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="infer edge probabilities and a network")
    _add_inputs(fit)
    _add_common(fit)

    res = sub.add_parser("resample", help="stability selection over subsamples")
    _add_inputs(res)
    res.add_argument("--subsamples", type=int, default=100, help="number of subsamples S")
    res.add_argument("--fraction", type=float, default=0.8, help="rows per subsample, as a share of n")
    res.add_argument("--freq-threshold", type=float, default=0.9, help="selection-frequency cut")
    res.add_argument("--jobs", type=int, default=1, help="worker threads")
    _add_common(res)

    sim = sub.add_parser("simulate", help="write a synthetic data set")
    sim.add_argument("--structure", choices=("erdos", "scalefree", "cluster"), default="erdos")
    sim.add_argument("--p", type=int, default=20)
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--density", type=float, help="edge density (default log(p)/p)")
    sim.add_argument("--ratio", type=float, default=10.0, help="cluster within/between ratio")
    sim.add_argument("--no-covariates", action="store_true", help="intercept-only design")
    _add_common(sim)

    ev = sub.add_parser("eval", help="score edge scores against a true network")
    ev.add_argument("--truth", required=True, help="true adjacency CSV")
    ev.add_argument("--scores", required=True, help="edge scores CSV (edge_probs.csv or frequencies.csv)")
    ev.add_argument("--threshold", type=float, help="score cut (default 2/p)")
    _add_common(ev)
    return parser


def _out_dir(args):
    return Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def _load_inputs(args):
    try:
        table = load_counts(args.counts, drop_zero_columns=not args.keep_zero_species)
        cov = load_covariates(args.covariates) if args.covariates else None
        if args.use is None:
            selection = list(cov.columns) if cov is not None else []
        else:
            selection = [s.strip() for s in args.use.split(",") if s.strip()]
        if selection and cov is None:
            raise ValueError("--use needs --covariates")
        design = build_design(cov, selection, sites=table.sites)
        mode = args.offset_mode or ("provided" if args.offsets else "zero")
        offsets = make_offsets(mode, table.counts, args.offsets, table.sites, table.species)
    except Exception as exc:
        raise CliError("input", exc) from exc
    return table, design, mode, offsets


def _network_config(args):
    return NetworkConfig(pln=PlnConfig(covariance=args.covariance), threshold=args.threshold)


def _report_base(args, mode=None, design=None, table=None):
    rep = {"command": args.command, "version": __version__, "seed": args.seed,
           "config": {k: v for k, v in vars(args).items() if k not in ("verbose",)}}
    if table is not None:
        rep["n_sites"], rep["n_species"] = table.counts.shape
        rep["species"] = table.species
        rep["dropped_species"] = table.dropped
    if design is not None:
        rep["design"] = design.manifest
    if mode is not None:
        rep["offset_mode"] = mode
    return rep


def run_fit(args, out):
    table, design, mode, offsets = _load_inputs(args)
    cfg = _network_config(args)
    try:
        fit, state, net = infer_network(table.counts, design.x, offsets, cfg, species=table.species)
    except StageError as exc:
        raise CliError(exc.stage, exc.cause) from exc
    labels = table.species
    write_matrix(out / "edge_probs.csv", state.p_mat, labels)
    write_edges(out / "edges.csv", state.p_mat, labels, net.adjacency)
    write_dot(out / "network.dot", net.adjacency, state.p_mat, labels)
    rep = _report_base(args, mode, design, table)
    rep.update({
        "threshold": net.threshold,
        "n_edges": net.n_edges,
        "pln": {"converged": fit.converged, "iterations": fit.n_iter,
                "elbo_trace": fit.elbo_trace, "covariance": fit.covariance,
                "theta": fit.theta, "theta_rows": design.names},
        "tree_em": {"converged": state.converged, "iterations": state.iterations,
                    "objective_trace": state.objective_trace,
                    "loglik_trace": state.loglik_trace},
        "converged": bool(fit.converged and state.converged),
    })
    return rep


def run_resample(args, out):
    table, design, mode, offsets = _load_inputs(args)
    try:
        cfg = ResampleConfig(s=args.subsamples, fraction=args.fraction, seed=args.seed,
                             freq_threshold=args.freq_threshold,
                             network=_network_config(args), n_jobs=args.jobs)
        freq = stability_selection(table.counts, design.x, offsets, cfg)
    except Exception as exc:
        raise CliError("resample", exc) from exc
    labels = table.species
    net = threshold_frequencies(freq, args.freq_threshold)
    grid, counts = threshold_curve(freq)
    write_matrix(out / "frequencies.csv", freq.freq, labels)
    write_edges(out / "edges.csv", freq.freq, labels, net.adjacency)
    write_dot(out / "network.dot", net.adjacency, freq.freq, labels)
    write_curve(out / "threshold_curve.csv", grid, counts)
    p = len(labels)
    rep = _report_base(args, mode, design, table)
    rep.update({
        "threshold": args.threshold if args.threshold is not None else 2.0 / p,
        "freq_threshold": args.freq_threshold,
        "subsample_size": int(math.floor(args.fraction * table.counts.shape[0])),
        "n_success": freq.n_success,
        "n_replicates": freq.n_replicates,
        "failures": [asdict(f) for f in freq.failures],
        "not_converged": freq.not_converged,
        "n_edges": net.n_edges,
    })
    return rep


def run_simulate(args, out):
    try:
        spec = SimulationSpec(structure=args.structure, p=args.p, n=args.n, density=args.density,
                              ratio=args.ratio, seed=args.seed, covariates=not args.no_covariates)
        data = simulate_dataset(spec)
    except Exception as exc:
        raise CliError("simulate", exc) from exc
    n, p = data.counts.shape
    sites = [f"site{i + 1}" for i in range(n)]
    species = [f"sp{j + 1}" for j in range(p)]
    write_counts(out / "counts.csv", data.counts, sites, species)
    _write_sim_covariates(out / "covariates.csv", data, sites)
    write_matrix(out / "truth.csv", data.adjacency, species)
    write_matrix(out / "sigma.csv", data.sigma, species)
    rep = _report_base(args)
    rep.update({"spec": asdict(spec), "n_true_edges": int(np.triu(data.adjacency, 1).sum()),
                "theta": data.theta, "theta_rows": list(data.design_names)})
    return rep


def _write_sim_covariates(path, data, sites):
    import csv

    x = data.design
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if x.shape[1] == 1:
            w.writerow(["site"])
            w.writerows([[s] for s in sites])
            return
        # the factor is written back as labels so reference coding rebuilds it
        w.writerow(["site", "continuous:num", "ordinal:ord", "factor:cat"])
        for s, row in zip(sites, x):
            level = "B" if row[3] else ("C" if row[4] else "A")
            w.writerow([s, repr(float(row[1])), repr(float(row[2])), level])


def run_eval(args, out):
    try:
        truth, t_labels = load_matrix(args.truth)
        scores, s_labels = load_matrix(args.scores)
        if t_labels != s_labels:
            raise ValueError("truth and scores have different node labels")
        net = threshold_network(scores, args.threshold)
        report = evaluate_network(net.adjacency, truth != 0, scores)
    except Exception as exc:
        raise CliError("eval", exc) from exc
    rep = _report_base(args)
    rep.update(report.to_dict())
    rep["threshold"] = net.threshold
    rep["betweenness"] = dict(zip(s_labels, betweenness(net.adjacency).tolist()))
    return rep


COMMANDS = {"fit": run_fit, "resample": run_resample, "simulate": run_simulate, "eval": run_eval}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    # write into a staging directory and move files over only on success
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    start = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            report = COMMANDS[args.command](args, staging)
        report["warnings"] = [str(w.message) for w in caught]
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        if not args.no_timing:
            report["wall_time_seconds"] = time.perf_counter() - start
        write_json(staging / "report.json", report)
        for f in sorted(staging.iterdir()):
            os.replace(f, out / f.name)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    print(f"wrote {out}", file=sys.stderr)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
