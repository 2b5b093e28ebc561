"""Experiment presets: nearest-neighbor search on S^2 and spectral clustering
of rotation-labelled graphs under random rewiring.

Every preset writes a wide results table (``<preset>_table.csv``), the raw
per-trial values (``<preset>_trials.csv``) and a Markdown summary, each
headed by the tool version and the full configuration.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .affinity import AffinityMethod, affinity_matrix, nearest_neighbors
from .evaluation import angle_histogram, nn_accuracy, rand_index, spectral_clustering
from .groups import GroupId
from .rng import derive_seed
from .spectral import embeddings_from_eigenpairs, graph_eigenpairs
from .synth import clean_s2_graph, cluster_graph, rewire, sample_so3_cloud

METHOD_LABELS = {
    "scalar": "Scalar",
    "vdm": "VDM",
    "power": "Power spec.",
    "opt": "Opt",
    "bispec": "Bispec.",
}


@dataclass
class ExperimentConfig:
    """Parameters of a preset run; serialized into every output header."""

    preset: str = "fig2"
    task: str = "nn"  # "nn" or "cluster"
    group: str = "so2"
    n: int = 10000
    cos_threshold: float = 0.97
    ps: list = field(default_factory=lambda: [0.08, 0.09, 0.10, 0.5])
    K: int = 2
    size: int = 50
    k_max: int = 6
    m_k: int = 10
    t: int = 1
    normalize: str = "weighted"
    methods: list = field(default_factory=lambda: ["vdm", "power", "opt", "bispec"])
    sweep: str = ""  # "", "m_k" or "k_max"
    sweep_values: list = field(default_factory=list)
    kappa: int = 50
    acc_threshold: float = 0.95
    bins: int = 180
    seed: int = 0
    trials: int = 1
    fft_n: int = 64
    refine: bool = True
    band: str = "clip"
    eig_tol: float = 1e-6
    scale: float = 1.0
    workers: int = 1

    def validate(self):
        GroupId.parse(self.group)
        if self.task not in ("nn", "cluster"):
            raise ValueError(f"task must be 'nn' or 'cluster', got {self.task!r}")
        if self.sweep not in ("", "m_k", "k_max"):
            raise ValueError(f"sweep must be '', 'm_k' or 'k_max', got {self.sweep!r}")
        for p in self.ps:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"retention probability {p} outside [0, 1]")
        for m in self.methods:
            AffinityMethod(m)
        if "opt" in self.methods and GroupId.parse(self.group) is GroupId.SO3:
            raise ValueError("the optimal alignment affinity is only available for SO(2)")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        return self

    @property
    def scaled_n(self):
        return max(10, int(round(self.n * self.scale)))

    @property
    def scaled_size(self):
        return max(2, int(round(self.size * self.scale)))

    def as_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


PRESETS = {
    "fig2": ExperimentConfig(
        preset="fig2", task="nn", n=10000, ps=[0.08, 0.09, 0.10, 0.5], k_max=6, m_k=10,
        methods=["vdm", "power", "opt", "bispec"],
    ),
    "tab1-so2": ExperimentConfig(
        preset="tab1-so2", task="cluster", group="so2", K=2, size=50, ps=[0.16, 0.20, 0.25], k_max=10,
        m_k=2, methods=["scalar", "vdm", "power", "opt", "bispec"], trials=50,
    ),
    "tab1-so3": ExperimentConfig(
        preset="tab1-so3", task="cluster", group="so3", K=2, size=50, ps=[0.16, 0.20, 0.25], k_max=10,
        m_k=2, methods=["scalar", "vdm", "power", "bispec"], trials=10,
    ),
    "app-mk-sweep": ExperimentConfig(
        preset="app-mk-sweep", task="nn", n=10000, ps=[0.08, 0.09, 0.10, 0.5], k_max=10, m_k=20,
        methods=["vdm", "power", "opt", "bispec"], sweep="m_k", sweep_values=[2, 5, 10, 20, 50, 100],
    ),
    "app-kmax-sweep": ExperimentConfig(
        preset="app-kmax-sweep", task="nn", n=10000, ps=[0.08, 0.09, 0.10, 0.5], k_max=10, m_k=20,
        methods=["vdm", "power", "opt", "bispec"], sweep="k_max", sweep_values=[2, 5, 10, 20, 50],
    ),
}

PRESET_HELP = {
    "fig2": "NN search on S^2, angle histograms for p in {0.08, 0.09, 0.10, 0.5} (k_max=6, m_k=10)",
    "tab1-so2": "spectral clustering, SO(2), K=2, 50 trials (m_k=K, k_max=10); set K=10 via --K",
    "tab1-so3": "spectral clustering, SO(3), K=2, 10 trials (m_k=K, k_max=10); set K=10 and size=25 via flags",
    "app-mk-sweep": "NN accuracy vs m_k in {2,5,10,20,50,100}, k_max=10; --task cluster gives the K=10 Rand sweep",
    "app-kmax-sweep": "NN accuracy vs k_max in {2,5,10,20,50}, m_k=20; --task cluster gives the K=10 Rand sweep",
}


def preset_config(name):
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return dataclasses.replace(PRESETS[name])


def cluster_variant(cfg):
    """The clustering version of a sweep preset (K=10 clusters of 50, SO(2))."""
    values = [2, 5, 10, 20, 50, 100]
    fixed = {"m_k": 10, "k_max": 10}
    return cfg.replace(task="cluster", group="so2", K=10, size=50, ps=[0.16, 0.20, 0.25],
                       methods=["scalar", "vdm", "power", "opt", "bispec"], trials=10,
                       sweep_values=values, **fixed)


# ---------------------------------------------------------------------------
# pipeline pieces


def _method(cfg, kind, k_max):
    if kind == "opt":
        n_fft = max(cfg.fft_n, 1 << int(np.ceil(np.log2(4 * k_max))))
        return AffinityMethod("opt", fft_n=n_fft, refine=cfg.refine)
    if kind == "bispec":
        return AffinityMethod("bispec", band=cfg.band)
    return AffinityMethod(kind)


def _settings(cfg):
    """``[(column value, k_max, m_k)]`` for the configured sweep."""
    if cfg.sweep == "m_k":
        return [(v, cfg.k_max, v) for v in cfg.sweep_values]
    if cfg.sweep == "k_max":
        return [(v, v, cfg.m_k) for v in cfg.sweep_values]
    return [(None, cfg.k_max, cfg.m_k)]


def _frequencies(cfg, k_max):
    group = GroupId.parse(cfg.group)
    ks = set()
    for kind in cfg.methods:
        if kind != "scalar":
            ks |= set(_method(cfg, kind, k_max).frequencies(group, k_max))
    return ks


def _eigs_for(cfg, graph, seed):
    """One eigendecomposition per frequency, large enough for every setting."""
    settings = _settings(cfg)
    ks = set()
    for _, k_max, _ in settings:
        ks |= _frequencies(cfg, k_max)
    m_top = min(max(m for _, _, m in settings), graph.n)
    return graph_eigenpairs(graph, ks, m_top, seed=seed, workers=cfg.workers, tol=cfg.eig_tol)


def _embeddings(cfg, eigs, graph, k_max, m_k):
    m_k = min(m_k, graph.n)
    return embeddings_from_eigenpairs(eigs, m_k, t=cfg.t, normalize=cfg.normalize, group=graph.group,
                                      freqs=_frequencies(cfg, k_max))


def run_nn(cfg):
    """NN search.  Returns rows ``{p, method, column, accuracy, counts}``."""
    n = cfg.scaled_n
    seed = cfg.seed
    cloud = sample_so3_cloud(n, seed)
    clean = clean_s2_graph(cloud, cfg.cos_threshold)
    v = cloud.directions
    rows = []
    for pi, p in enumerate(cfg.ps):
        graph, stats = rewire(clean, p, derive_seed(seed, pi))
        eigs = _eigs_for(cfg, graph, seed)
        for column, k_max, m_k in _settings(cfg):
            embs = _embeddings(cfg, eigs, graph, k_max, m_k)
            kinds = [k for k in cfg.methods if not (k == "vdm" and cfg.sweep == "k_max" and column != cfg.sweep_values[0])]
            methods = [_method(cfg, k, k_max) for k in kinds]
            lists = nearest_neighbors(embs, methods, cfg.kappa, k_max=k_max, workers=cfg.workers, graph=graph)
            for kind in kinds:
                counts, _ = angle_histogram(lists[kind], v, cfg.bins)
                rows.append({
                    "p": p, "method": kind, "column": column, "k_max": k_max, "m_k": m_k,
                    "accuracy": nn_accuracy(lists[kind], v, cfg.acc_threshold), "counts": counts,
                    "forced_keeps": stats.forced_keeps,
                })
    return rows


def run_cluster(cfg):
    """Spectral clustering trials.  Returns rows ``{p, method, column, trial, rand}``."""
    group = GroupId.parse(cfg.group)
    size = cfg.scaled_size
    rows = []
    for pi, p in enumerate(cfg.ps):
        for trial in range(cfg.trials):
            tseed = derive_seed(cfg.seed, pi, trial)
            clean, labels = cluster_graph(cfg.K, size, group, tseed)
            graph, _ = rewire(clean, p, tseed)
            settings = _settings(cfg)
            needs_spectral = any(k != "scalar" for k in cfg.methods)
            eigs = _eigs_for(cfg, graph, tseed) if needs_spectral else {}
            for column, k_max, m_k in settings:
                embs = _embeddings(cfg, eigs, graph, k_max, m_k) if needs_spectral else {}
                for kind in cfg.methods:
                    if kind in ("scalar", "vdm") and cfg.sweep == "k_max" and column != settings[0][0]:
                        continue
                    source = graph if kind == "scalar" else embs
                    S = affinity_matrix(source, _method(cfg, kind, k_max), workers=cfg.workers, k_max=k_max)
                    pred = spectral_clustering(S, cfg.K, seed=tseed, trial=trial)
                    rows.append({"p": p, "method": kind, "column": column, "trial": trial,
                                 "rand": rand_index(pred.labels, labels)})
    return rows


# ---------------------------------------------------------------------------
# tables


def _header(cfg):
    return {"tool": f"gmanifold {__version__}", "config": cfg.as_dict(), "seed": cfg.seed}


def _fmt(x):
    return f"{x:.4f}"


def _summaries(cfg, rows, key):
    """``{(p, method, column): (mean, std, count)}``."""
    out = {}
    for r in rows:
        out.setdefault((r["p"], r["method"], r["column"]), []).append(r[key])
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in out.items()}


def _table(cfg, rows, key, with_std):
    summ = _summaries(cfg, rows, key)
    columns = [c for c, _, _ in _settings(cfg)]
    if columns == [None]:
        header = ["method"] + [f"p={p:g}" for p in cfg.ps]
        body = []
        for kind in cfg.methods:
            line = [METHOD_LABELS[kind]]
            for p in cfg.ps:
                mean, std, _ = summ[(p, kind, None)]
                line.append(f"{_fmt(mean)} ± {_fmt(std)}" if with_std else _fmt(mean))
            body.append(line)
        return header, body
    label = "m_k" if cfg.sweep == "m_k" else "k_max"
    header = ["p", "method"] + [f"{label}={c}" for c in columns]
    body = []
    for p in cfg.ps:
        for kind in cfg.methods:
            line = [f"{p:g}", METHOD_LABELS[kind]]
            for c in columns:
                cell = summ.get((p, kind, c))
                if cell is None:  # single-frequency baselines do not depend on k_max
                    cell = summ[(p, kind, columns[0])]
                mean, std, _ = cell
                line.append(f"{_fmt(mean)} ± {_fmt(std)}" if with_std else _fmt(mean))
            body.append(line)
    return header, body


def _write_csv(path, head, header, body):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + json.dumps(head, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)


def _markdown(cfg, title, header, body):
    buf = io.StringIO()
    buf.write(f"<!-- {json.dumps(_header(cfg), sort_keys=True)} -->\n\n")
    buf.write(f"# {title}\n\n")
    buf.write("| " + " | ".join(header) + " |\n")
    buf.write("|" + "---|" * len(header) + "\n")
    for line in body:
        buf.write("| " + " | ".join(line) + " |\n")
    return buf.getvalue()


def _plot_histograms(cfg, rows, path):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("--plot needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.rcParams["svg.hashsalt"] = "gmanifold"
    centers = np.degrees((np.arange(cfg.bins) + 0.5) * np.pi / cfg.bins)
    fig, axes = plt.subplots(1, len(cfg.ps), figsize=(4 * len(cfg.ps), 3.2), squeeze=False)
    for ax, p in zip(axes[0], cfg.ps):
        for r in rows:
            if r["p"] == p and r["column"] is None:
                ax.plot(centers, r["counts"], label=METHOD_LABELS[r["method"]], lw=1)
        ax.set_title(f"p = {p:g}")
        ax.set_xlabel("angle between viewing directions (deg)")
    axes[0][0].set_ylabel("count")
    axes[0][-1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run_experiment(cfg, out_dir, plot=False):
    """Run a preset and write its outputs; returns the list of written paths."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.join(out_dir, cfg.preset if cfg.task == "nn" or cfg.preset.startswith("tab1") else cfg.preset + "-cluster")
    head = _header(cfg)
    written = []
    if cfg.task == "nn":
        rows = run_nn(cfg)
        header, body = _table(cfg, rows, "accuracy", with_std=False)
        title = f"NN accuracy (%) of {cfg.kappa} neighbors with <v_i, v_j> > {cfg.acc_threshold}, n = {cfg.scaled_n}"
        trials_header = ["p", "method", "k_max", "m_k", "accuracy", "forced_keeps"]
        trials_body = [[f"{r['p']:g}", r["method"], r["k_max"], r["m_k"], repr(r["accuracy"]), r["forced_keeps"]] for r in rows]
        hist_body = []
        for r in rows:
            for b, c in enumerate(r["counts"]):
                hist_body.append([f"{r['p']:g}", r["method"], r["k_max"], r["m_k"], b, int(c)])
        _write_csv(stem + "_hist.csv", head, ["p", "method", "k_max", "m_k", "bin", "count"], hist_body)
        written.append(stem + "_hist.csv")
        if plot:
            _plot_histograms(cfg, rows, stem + "_hist.svg")
            written.append(stem + "_hist.svg")
    else:
        rows = run_cluster(cfg)
        header, body = _table(cfg, rows, "rand", with_std=True)
        title = f"Rand index, {cfg.group.upper()}, K = {cfg.K}, {cfg.scaled_size} points per cluster, {cfg.trials} trials"
        trials_header = ["p", "method", "column", "trial", "rand_index"]
        trials_body = [[f"{r['p']:g}", r["method"], "" if r["column"] is None else r["column"], r["trial"], repr(r["rand"])] for r in rows]
    _write_csv(stem + "_table.csv", head, header, body)
    _write_csv(stem + "_trials.csv", head, trials_header, trials_body)
    with open(stem + ".md", "w", encoding="utf-8") as fh:
        fh.write(_markdown(cfg, title, header, body))
    written += [stem + "_table.csv", stem + "_trials.csv", stem + ".md"]
    return written, rows
