"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 invalid input data or I/O failure,
4 numerical failure such as eigensolver non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .affinity import AffinityMethod, affinity_matrix, load_affinity, save_affinity
from .errors import DataError, NumericalError
from .evaluation import (
    angle_histogram,
    knn_from_affinity,
    nn_accuracy,
    rand_index,
    spectral_clustering,
)
from .experiments import PRESET_HELP, PRESETS, ExperimentConfig, cluster_variant, preset_config, run_experiment
from .graph import load_graph, save_graph
from .spectral import graph_embeddings
from .synth import clean_s2_graph, cluster_graph, load_truth, rewire, sample_so3_cloud, save_truth

TOOL = f"gmanifold {__version__}"


class UsageError(Exception):
    pass


def default_workers():
    env = os.environ.get("GMANIFOLD_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"GMANIFOLD_WORKERS must be an integer, got {env!r}") from None
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def _probability(text):
    p = float(text)
    if not 0.0 <= p <= 1.0:
        raise argparse.ArgumentTypeError(f"probability must lie in [0, 1], got {text}")
    return p


def _truth_path(path):
    root, _ = os.path.splitext(path)
    return root + ".truth.json"


def _header_line(doc):
    return "# " + json.dumps(doc, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_sphere(args):
    cloud = sample_so3_cloud(args.n, args.seed)
    graph = clean_s2_graph(cloud, args.cos_threshold)
    meta = {"seed": args.seed, "n": args.n}
    save_graph(graph, args.output, meta=meta)
    save_truth(args.truth or _truth_path(args.output), directions=cloud.directions, meta=meta)


def cmd_rewire(args):
    graph = load_graph(args.input)
    noisy, stats = rewire(graph, args.p, args.seed)
    save_graph(noisy, args.output)
    print(json.dumps(stats.as_dict(), sort_keys=True), file=sys.stderr)


def cmd_gen_clusters(args):
    graph, labels = cluster_graph(args.k, args.size, args.group, args.seed)
    if args.p < 1.0:
        graph, _ = rewire(graph, args.p, args.seed)
    save_graph(graph, args.output, meta={"p": args.p})
    save_truth(args.truth or _truth_path(args.output), labels=labels,
               meta={"K": args.k, "size": args.size, "group": args.group, "seed": args.seed, "p": args.p})


def cmd_affinity(args):
    graph = load_graph(args.input)
    method = AffinityMethod(args.method, fft_n=args.fft_n, refine=not args.no_refine, band=args.band)
    method.check(graph.group, args.kmax)
    if method.kind == "scalar":
        source = graph
    else:
        freqs = method.frequencies(graph.group, args.kmax)
        source = graph_embeddings(graph, freqs, args.mk, t=args.t, normalize=args.normalize, seed=args.seed,
                                  workers=args.workers, tol=args.eig_tol)
    S = affinity_matrix(source, method, workers=args.workers, k_max=args.kmax)
    config = {"input": os.path.basename(args.input), "group": graph.group.value, "method": args.method,
              "k_max": args.kmax, "m_k": args.mk, "t": args.t, "normalize": args.normalize, "band": args.band,
              "fft_n": args.fft_n, "refine": not args.no_refine, "seed": args.seed, "eig_tol": args.eig_tol}
    save_affinity(S, args.output, fmt=args.format, meta={"config": config, "graph": graph.meta})


def cmd_eval_nn(args):
    S, header = load_affinity(args.affinity)
    v, _, _ = load_truth(args.truth)
    if v is None:
        raise DataError(f"{args.truth}: truth file has no viewing directions")
    if len(v) != S.n:
        raise DataError(f"truth has {len(v)} points but the affinity matrix has {S.n}")
    lists = knn_from_affinity(S, args.knn)
    acc = nn_accuracy(lists, v, args.cos_threshold)
    counts, edges = angle_histogram(lists, v, args.bins)
    head = {"tool": TOOL, "affinity": header, "kappa": args.knn, "cos_threshold": args.cos_threshold,
            "bins": args.bins, "accuracy": acc}
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header_line(head))
        fh.write("bin_lo,bin_hi,count,accuracy\n")
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{float(lo)!r},{float(hi)!r},{int(c)},{acc!r}\n")
    _write_summary(args.output, header.get("method"), header.get("params", {}), None,
                   {"nn_accuracy": acc, "kappa": args.knn, "cos_threshold": args.cos_threshold})
    print(f"accuracy {acc:.2f}%")


def cmd_cluster(args):
    S, header = load_affinity(args.affinity)
    _, labels, _ = load_truth(args.truth)
    if labels is None:
        raise DataError(f"{args.truth}: truth file has no labels")
    if len(labels) != S.n:
        raise DataError(f"truth has {len(labels)} labels but the affinity matrix has {S.n}")
    K = args.K or int(np.unique(labels).size)
    values = []
    for trial in range(args.trials):
        pred = spectral_clustering(S, K, seed=args.seed, trial=trial)
        values.append(rand_index(pred.labels, labels))
    mean, std = float(np.mean(values)), float(np.std(values))
    head = {"tool": TOOL, "affinity": header, "K": K, "seed": args.seed, "trials": args.trials}
    with open(args.output, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header_line(head))
        fh.write("trial,rand_index\n")
        for t, r in enumerate(values):
            fh.write(f"{t},{float(r)!r}\n")
        fh.write(f"mean ± std,{mean:.4f} ± {std:.4f}\n")
    _write_summary(args.output, header.get("method"), header.get("params", {}), args.seed,
                   {"rand_index_mean": mean, "rand_index_std": std, "trials": args.trials, "K": K})
    print(f"Rand index {mean:.4f} ± {std:.4f}")


def _write_summary(output, method, params, seed, metric):
    root, _ = os.path.splitext(output)
    doc = {"tool": TOOL, "method": method, "params": params, "seed": seed, "metric": metric}
    with open(root + ".summary.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


_EXPERIMENT_FLAGS = {
    "group": "group", "n": "n", "K": "K", "size": "size", "kmax": "k_max", "mk": "m_k", "t": "t",
    "normalize": "normalize", "kappa": "kappa", "seed": "seed", "trials": "trials", "task": "task",
    "fft_n": "fft_n", "band": "band", "eig_tol": "eig_tol", "scale": "scale", "cos_threshold": "cos_threshold",
    "acc_threshold": "acc_threshold", "bins": "bins",
}


def experiment_config(args):
    """Preset defaults, overridden by ``--config`` JSON, overridden by flags."""
    cfg = preset_config(args.preset)
    if args.task == "cluster" and cfg.task == "nn" and cfg.sweep:
        cfg = cluster_variant(cfg)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        known = set(ExperimentConfig.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"{args.config}: unknown config keys {sorted(unknown)}")
        cfg = cfg.replace(**doc)
        if cfg.task == "cluster" and PRESETS[args.preset].task == "nn" and cfg.sweep and "ps" not in doc:
            cfg = cluster_variant(cfg).replace(**doc)
    updates = {field: getattr(args, flag) for flag, field in _EXPERIMENT_FLAGS.items() if getattr(args, flag) is not None}
    if args.ps is not None:
        updates["ps"] = args.ps
    if args.methods is not None:
        updates["methods"] = args.methods.split(",")
    if args.sweep_values is not None:
        updates["sweep_values"] = [int(x) for x in args.sweep_values.split(",")]
    if args.no_refine:
        updates["refine"] = False
    updates["workers"] = args.workers
    cfg = cfg.replace(**updates)
    if args.preset.startswith("tab1") and "m_k" not in updates and not (args.config and "m_k" in doc):
        cfg = cfg.replace(m_k=cfg.K)  # Table 1 uses m_k = K
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_experiment(args):
    cfg = experiment_config(args)
    paths, _ = run_experiment(cfg, args.out_dir, plot=args.plot)
    for p in paths:
        print(p)


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="gmanifold", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=TOOL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-sphere", help="Haar SO(3) cloud and its S^2 threshold graph")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--cos-threshold", type=float, default=0.97)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True, help="graph JSON")
    p.add_argument("--truth", help="truth sidecar (default: <output stem>.truth.json)")
    p.set_defaults(func=cmd_gen_sphere)

    p = sub.add_parser("rewire", help="apply the random rewiring noise model")
    p.add_argument("--p", type=_probability, required=True, help="edge retention probability")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_rewire)

    p = sub.add_parser("gen-clusters", help="K complete rotation-labelled clusters, optionally rewired")
    p.add_argument("--group", default="so2", choices=["so2", "so3"])
    p.add_argument("--k", type=int, default=2, help="number of clusters")
    p.add_argument("--size", type=int, default=50)
    p.add_argument("--p", type=_probability, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--truth", help="labels sidecar (default: <output stem>.truth.json)")
    p.set_defaults(func=cmd_gen_clusters)

    p = sub.add_parser("affinity", help="all-pairs affinity matrix of a graph")
    p.add_argument("--method", default="power", choices=["power", "opt", "bispec", "vdm", "scalar"])
    p.add_argument("--kmax", type=int, default=10)
    p.add_argument("--mk", type=int, default=10)
    p.add_argument("--t", type=int, default=1)
    p.add_argument("--normalize", default="weighted", choices=["weighted", "raw", "off"])
    p.add_argument("--band", default="clip", choices=["clip", "extend"])
    p.add_argument("--fft-n", type=int, default=4096)
    p.add_argument("--no-refine", action="store_true", help="opt: return the FFT grid maximum only")
    p.add_argument("--eig-tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--format", default="bin", choices=["bin", "csv"])
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_affinity)

    p = sub.add_parser("eval-nn", help="NN accuracy and angle histogram against truth directions")
    p.add_argument("--knn", type=int, default=50)
    p.add_argument("--cos-threshold", type=float, default=0.95)
    p.add_argument("--bins", type=int, default=180)
    p.add_argument("-a", "--affinity", required=True)
    p.add_argument("-t", "--truth", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_eval_nn)

    p = sub.add_parser("cluster", help="spectral clustering trials scored by the Rand index")
    p.add_argument("--K", type=int, help="clusters (default: number of distinct truth labels)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("-a", "--affinity", required=True)
    p.add_argument("-t", "--truth", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_cluster)

    presets = "\n".join(f"  {name:15s} {text}" for name, text in PRESET_HELP.items())
    p = sub.add_parser("experiment", help="run a named preset", formatter_class=argparse.RawDescriptionHelpFormatter,
                       description="presets:\n" + presets)
    p.add_argument("preset", choices=sorted(PRESETS))
    p.add_argument("--out-dir", default="results")
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--scale", type=float, help="multiplies n (or cluster size) for desk-scale runs")
    p.add_argument("--plot", action="store_true", help="also render SVG histograms (needs matplotlib)")
    p.add_argument("--workers", type=int)
    p.add_argument("--task", choices=["nn", "cluster"])
    p.add_argument("--group", choices=["so2", "so3"])
    p.add_argument("--n", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--ps", type=_probability, nargs="+")
    p.add_argument("--kmax", type=int)
    p.add_argument("--mk", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--normalize", choices=["weighted", "raw", "off"])
    p.add_argument("--methods", help="comma separated, e.g. power,opt")
    p.add_argument("--sweep-values", help="comma separated sweep values")
    p.add_argument("--kappa", type=int)
    p.add_argument("--cos-threshold", type=float)
    p.add_argument("--acc-threshold", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--fft-n", type=int)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--band", choices=["clip", "extend"])
    p.add_argument("--eig-tol", type=float)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "workers"):
            args.workers = args.workers if args.workers else default_workers()
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except NumericalError as exc:
        print(f"gmanifold: numerical failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"gmanifold: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"gmanifold: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
