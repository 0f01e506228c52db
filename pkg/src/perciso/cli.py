"""``perciso`` command line: experiments, artifacts and run manifests."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import SECTIONS, ConfigError, as_record, load_config
from .errors import PercError

log = logging.getLogger("perciso")

SCHEMA_VERSION = 1


# -- per-job workers (module level so they pickle) -------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(bool(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _job_gen(c, seed, ctx):
    from .percolation import Model, open_fraction, sample_configuration, save_configuration

    cfg = sample_configuration(Model.parse(c.model), c.m, c.p, seed)
    path = Path(ctx["out"]) / "gen" / f"{c.model}_p{c.p!r}_m{c.m}_s{seed}.perc"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        nbytes = save_configuration(cfg, fh)
    return [{"model": c.model, "p": c.p, "m": c.m, "seed": seed,
             "open_fraction": open_fraction(cfg), "bytes": nbytes, "file": path.name}]


def _job_cluster(c, seed, ctx):
    from .cluster import chemical_distance_stats, cluster_density_stats, largest_cluster
    from .errors import EmptyClusterError
    from .percolation import Model, sample_configuration

    m = int(math.ceil(1.5 * max(c.ns))) + 1
    cfg = sample_configuration(Model.parse(c.model), m, c.p, seed)
    rows = []
    for n in c.ns:
        dens = cluster_density_stats(cfg, n)
        try:
            big = largest_cluster(cfg, n).size
        except EmptyClusterError:
            big = 0
        try:
            chem = chemical_distance_stats(cfg, n, c.rho)
            stretch, contained = chem["max_stretch"], chem["contained"]
        except EmptyClusterError:
            stretch, contained = float("nan"), False
        rows.append({"model": c.model, "p": c.p, "n": n, "seed": seed, "cluster_size": dens["size"],
                     "box_volume": dens["volume"], "ratio": dens["ratio"], "largest": big,
                     "max_stretch": stretch, "contained": contained})
    return rows


def _job_iso(c, seed, ctx):
    from .cluster import origin_box_cluster
    from .errors import CapExceededError, EmptyClusterError
    from .isoperimetry import ALL_SUBSETS_CAP, epsilon_of_n, iso_constant_exact
    from .percolation import Model, sample_configuration

    model = Model.parse(c.model)
    rows = []
    for n in c.ns:
        cfg = sample_configuration(model, n, c.p, seed)
        eps = c.eps if c.eps is not None else epsilon_of_n(n, model.d)
        try:
            cl = origin_box_cluster(cfg, n)
            restrict = "all" if cl.size <= ALL_SUBSETS_CAP else "connected"
            rep = iso_constant_exact(cl, eps, restrict, alpha=c.alpha, n=n)
            value, method, beta, size = rep.value, rep.method, rep.beta_implied, cl.size
        except EmptyClusterError:
            value, method, beta, size = float("inf"), "empty", float("inf"), 0
        except CapExceededError:
            value, method, beta, size = float("nan"), "cap_exceeded", float("nan"), cl.size
        rows.append({"model": c.model, "p": c.p, "n": n, "seed": seed, "eps": eps, "value": value,
                     "method": method, "beta_implied": beta, "size": size})
    return rows


def _job_spectrum(c, seed, ctx):
    from .cluster import origin_box_cluster
    from .errors import EmptyClusterError
    from .percolation import Model, sample_configuration
    from .spectral import build_walk_matrix, spectral_gap

    rows = []
    for n in c.ns:
        cfg = sample_configuration(Model.parse(c.model), n, c.p, seed)
        try:
            cl = origin_box_cluster(cfg, n)
        except EmptyClusterError:
            continue
        if cl.size < 2:
            continue
        rep = spectral_gap(build_walk_matrix(cl))
        rows.append({"model": c.model, "p": c.p, "n": n, "seed": seed, "size": cl.size,
                     "lambda": rep.gap, "lambda_n2": rep.gap * n * n, "method": rep.method})
    return rows


def _job_kernel(c, seed, ctx):
    from .cluster import origin_box_cluster
    from .errors import EmptyClusterError
    from .isoperimetry import epsilon_of_n, iso_constant_exact
    from .percolation import Model, sample_configuration
    from .spectral import DENSE_LIMIT, build_walk_matrix, estim_reflected_check, heat_kernel_exact

    model = Model.parse(c.model)
    cfg = sample_configuration(model, c.n, c.p, seed)
    try:
        cl = origin_box_cluster(cfg, c.n)
    except EmptyClusterError:
        return []
    o = cl.index_of((0,) * cl.d)
    tab = heat_kernel_exact(build_walk_matrix(cl), c.times, rows=[o])
    rows = []
    for t, vals in zip(tab.times, tab.values):
        for y in np.flatnonzero(vals[0] > 0):
            rows.append({"kind": "kernel", "seed": seed, "t": t, "y": ";".join(map(str, cl.points[y])),
                         "p_t": vals[0][y], "lhs": "", "rhs": "", "margin": ""})
    if c.n >= 3 and 2 <= cl.size <= 22 and cl.size <= DENSE_LIMIT:
        eps = epsilon_of_n(c.n, model.d)
        beta = iso_constant_exact(cl, eps, "all", n=c.n).beta_implied
        for r in estim_reflected_check(cl, c.n, c.times, beta, eps):
            rows.append({"kind": "estim", "seed": seed, "t": r["t"], "y": "", "p_t": "",
                         "lhs": r["lhs"], "rhs": r["rhs"], "margin": r["margin"]})
    return rows


def _job_walk(c, seed, ctx):
    from .cluster import origin_box_cluster
    from .errors import EmptyClusterError
    from .percolation import Model, sample_configuration
    from .walk import WalkParams, simulate_walks

    cfg = sample_configuration(Model.parse(c.model), c.n, c.p, seed)
    try:
        cl = origin_box_cluster(cfg, c.n)
    except EmptyClusterError:
        return []
    est = simulate_walks(cfg, cl, WalkParams(tuple(c.times), c.walkers, ctx["master"], seed, c.mode))
    return [{"t": t, "estimate": e, "stderr": s, "walkers": est.walkers, "mode": c.mode,
             "n": c.n, "seed": seed}
            for t, e, s in zip(est.times, est.estimate, est.stderr)]


def _job_channels(c, key, ctx):
    from .channels import Rect, max_disjoint_channels
    from .percolation import Model, sample_configuration

    n, seed = key
    cfg = sample_configuration(Model.site2d(), n - n // 2, c.p, seed)
    N = max_disjoint_channels(cfg, Rect.centered_square(n), "horizontal").count
    return [{"n": n, "seed": seed, "direction": "horizontal", "strip_index": -1,
             "channels": N, "ratio": N / n}]


def _job_renorm(c, key, ctx):
    from .percolation import Model, sample_configuration
    from .renorm import BlockSpec, good_box

    p, N, seed = key
    cfg = sample_configuration(Model.site2d(), (5 * N) // 4, p, seed)
    rep = good_box(cfg, BlockSpec(N, (0, 0)))
    return [{"p": p, "N": N, "seed": seed, "i": "0;0", "good": rep.is_good, "flags": rep.flags()}]


def _job_verify(c, key, ctx):
    from .battery import run_battery
    from .percolation import Model, load_configuration, sample_configuration

    if isinstance(key, str):
        with open(key, "rb") as fh:
            cfg = load_configuration(fh)
        label = (str(cfg.model), cfg.p, cfg.seed)
    else:
        model, p, seed = key
        cfg = sample_configuration(Model.parse(model), max(c.n, c.k_max, *c.exit_ns), p, seed)
        label = (model, p, seed)
    rows = run_battery(cfg, min(c.n, cfg.m), c.k_max, c.exit_ns, c.exit_times)
    return [{"model": label[0], "p": label[1], "seed": label[2], **r} for r in rows]


JOBS = {"gen": _job_gen, "cluster": _job_cluster, "iso": _job_iso, "spectrum": _job_spectrum,
        "kernel": _job_kernel, "walk": _job_walk, "channels": _job_channels,
        "renorm": _job_renorm, "verify": _job_verify}


def _keys(command, c):
    if command == "channels":
        return [(n, s) for n in c.sizes for s in c.seeds]
    if command == "renorm":
        return [(p, N, s) for p in c.ps for N in c.Ns for s in c.seeds]
    if command == "verify":
        if c.inputs:
            return [x.strip() for x in c.inputs.split(",") if x.strip()]
        return [(m.strip(), p, s) for m in c.models.split(",") for p in c.ps for s in c.seeds]
    return list(c.seeds)


def _safe_job(command, c, key, ctx):
    try:
        return {"key": key, "rows": JOBS[command](c, key, ctx), "error": None}
    except PercError as exc:
        return {"key": key, "rows": [], "error": f"{type(exc).__name__}: {exc}"}


def _run_jobs(command, c, keys, ctx, workers):
    if workers > 1 and len(keys) > 1:
        with ProcessPoolExecutor(min(workers, len(keys))) as ex:
            return list(ex.map(_safe_job, [command] * len(keys), [c] * len(keys), keys,
                               [ctx] * len(keys)))
    return [_safe_job(command, c, k, ctx) for k in keys]


SORT_KEYS = {
    "gen": ("seed",), "cluster": ("seed", "n"), "iso": ("seed", "n"), "spectrum": ("seed", "n"),
    "kernel": ("seed",), "walk": ("seed", "t"), "channels": ("seed", "n"),
    "renorm": ("seed", "p", "N"), "verify": ("seed",),
}


def write_csv(path: Path, rows: list, columns=None):
    columns = columns or (["schema_version"] + [k for k in rows[0]] if rows else ["schema_version"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([SCHEMA_VERSION if k == "schema_version" else _fmt(r.get(k, "")) for k in columns])


def _sorted_rows(command, results):
    rows = [r for res in results for r in res["rows"]]
    keys = SORT_KEYS[command]
    # stable sort: ties keep the job order, which is itself deterministic
    return sorted(rows, key=lambda r: tuple(r[k] for k in keys if k in r))


# -- post-processing ----------------------------------------------------------------

def _walk_fits(rows, window):
    from .walk import fit_decay_exponent

    out = {}
    seeds = sorted({r["seed"] for r in rows})
    for s in seeds:
        sel = [r for r in rows if r["seed"] == s]
        t = [r["t"] for r in sel]
        v = [r["estimate"] for r in sel]
        se = [r["stderr"] for r in sel]
        try:
            f = fit_decay_exponent(t, v, window or None, se)
            out[str(s)] = {"slope": f.slope, "stderr": f.stderr, "window": list(f.window)}
        except PercError as exc:
            out[str(s)] = {"error": str(exc)}
    return out


def _svg_line_chart(path: Path, series: dict, xlabel: str, ylabel: str, loglog: bool):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o", label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    plt.rcParams["svg.hashsalt"] = "perciso"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _read_csv(path: Path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def run_report(src: Path, out: Path) -> list:
    """Aggregate CSVs into plot-ready tables and SVG charts; returns the files written."""
    written = []
    if (src / "walk.csv").exists():
        rows = _read_csv(src / "walk.csv")
        ts = sorted({float(r["t"]) for r in rows})
        mean = [float(np.mean([float(r["estimate"]) for r in rows if float(r["t"]) == t])) for t in ts]
        agg = [{"t": t, "mean_estimate": m} for t, m in zip(ts, mean)]
        write_csv(out / "report_decay.csv", agg)
        _svg_line_chart(out / "report_decay.svg", {"P0[X_t=0]": (ts, mean)}, "t", "return probability", True)
        written += ["report_decay.csv", "report_decay.svg"]
    if (src / "spectrum.csv").exists():
        rows = _read_csv(src / "spectrum.csv")
        ns = sorted({int(r["n"]) for r in rows})
        med = [float(np.median([float(r["lambda_n2"]) for r in rows if int(r["n"]) == n])) for n in ns]
        write_csv(out / "report_gap.csv", [{"n": n, "median_lambda_n2": m} for n, m in zip(ns, med)])
        _svg_line_chart(out / "report_gap.svg", {"median lambda n^2": (ns, med)}, "n", "lambda n^2", False)
        written += ["report_gap.csv", "report_gap.svg"]
    if (src / "channels.csv").exists():
        rows = _read_csv(src / "channels.csv")
        ns = sorted({int(r["n"]) for r in rows})
        mean = [float(np.mean([float(r["ratio"]) for r in rows if int(r["n"]) == n])) for n in ns]
        write_csv(out / "report_channels.csv", [{"n": n, "mean_ratio": m} for n, m in zip(ns, mean)])
        _svg_line_chart(out / "report_channels.svg", {"N(n,n)/n": (ns, mean)}, "n", "channels / n", False)
        written += ["report_channels.csv", "report_channels.svg"]
    return written


# -- entry point ------------------------------------------------------------------

def _add_section_flags(p: argparse.ArgumentParser, section: str):
    for f in fields(SECTIONS[section]):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f"{section}.{f.name}", default=None,
                       help=f.metadata.get("help") or f.metadata["kind"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perciso", description="Percolation cluster experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("gen", "cluster", "iso", "spectrum", "kernel", "walk", "channels", "renorm",
                 "verify", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", dest="global.seed", default=None, help="master seed")
        p.add_argument("--workers", dest="global.workers", default=None)
        p.add_argument("--out", dest="global.out", default=None)
        p.add_argument("-v", "--verbose", action="store_true")
        _add_section_flags(p, name)
    return ap


def _overrides(ns) -> dict:
    out = {}
    for k, v in vars(ns).items():
        if "." in k and v is not None:
            sec, key = k.split(".", 1)
            out.setdefault(sec, {})[key] = v
    return out


def _versions() -> dict:
    import scipy

    return {"perciso": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        glob, c = load_config(args.config, args.command, _overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(glob.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    failures, hard = [], 0
    written = []
    if args.command == "report":
        written = run_report(Path(c.inputs) if c.inputs else out, out)
    else:
        if args.command == "walk" and len(c.times) < 5:
            print("walk: decay fit needs at least five grid times", file=sys.stderr)
            return 2
        keys = _keys(args.command, c)
        results = _run_jobs(args.command, c, keys, {"out": str(out), "master": glob.seed}, glob.workers)
        for res in results:
            if res["error"]:
                failures.append({"key": str(res["key"]), "error": res["error"]})
                log.warning("job %s failed: %s", res["key"], res["error"])
        rows = _sorted_rows(args.command, results)
        write_csv(out / f"{args.command}.csv", rows)
        written.append(f"{args.command}.csv")
        if args.command == "walk":
            fits = _walk_fits(rows, c.window)
            (out / "walk_fit.json").write_text(json.dumps(fits, indent=2, sort_keys=True) + "\n")
            written.append("walk_fit.json")
        if args.command == "renorm":
            written += _renorm_field(c, out)
        if args.command == "verify":
            hard = sum(1 for r in rows if r["hard"] and not r["holds"])
    manifest = {
        "command": args.command,
        "config": {"global": as_record(glob), args.command: as_record(c)},
        "versions": _versions(),
        "seeds": {"master": glob.seed},
        "outputs": written,
        "failures": failures,
        "hard_failures": hard,
        "wall_time_s": round(time.time() - start, 3),
    }
    (out / f"{args.command}_manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    if hard:
        print(f"verify: {hard} hard check(s) failed", file=sys.stderr)
        return 1
    return 0


def _renorm_field(c, out: Path) -> list:
    from .percolation import Model, sample_configuration, save_configuration
    from .renorm import renormalized_field

    N, R = c.field_N, c.field_R
    m = (2 * N + 1) * R + (5 * N) // 4
    cfg = sample_configuration(Model.site2d(), m, c.ps[0], c.seeds[0])
    field_cfg = renormalized_field(cfg, N, R)
    with open(out / "renorm_field.perc", "wb") as fh:
        save_configuration(field_cfg, fh)
    return ["renorm_field.perc"]


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
