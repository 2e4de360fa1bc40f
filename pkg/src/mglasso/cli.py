"""Command-line interface.

Commands: ``simulate``, ``fit``, ``path``, ``stars``, ``evaluate``, ``clr``.
Options come from defaults, then an optional TOML or JSON ``--config`` file
(top-level keys or a table named after the command), then explicit flags.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import io as mio
from .baseline import neighborhood_selection
from .evaluation import adjusted_rand_index, confusion
from .model import (DataMatrix, Graph, Hyperparameters, Partition,
                    graph_from_beta, standardize)
from .path import PathConfig, cluster_level_graph, lambda1_max, mglasso_path
from .preprocessing import clr_transform, filter_counts
from .solver import SolverConfig, SolverDivergenceError, conesta_solve
from .stars import StarsConfig, select_lambda1
from .synthetic import SimConfig, simulate

__all__ = ["main", "build_parser", "ConfigError"]

logger = logging.getLogger("mglasso")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid command-line or configuration-file settings."""


class NumericalError(RuntimeError):
    """A solve broke down."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: %r" % text)


def _opt_float(text):
    return None if text is None or str(text).lower() == "none" else float(text)


def _scaling(text):
    t = str(text).lower()
    if t == "none":
        return None
    if t not in ("variance", "norm"):
        raise ValueError("scaling must be variance, norm or none")
    return t


# name -> (type, default, help); shared by flags and config files
GLOBAL_OPTIONS = {
    "seed": (int, 0, "random seed"),
    "threads": (int, 1, "parallel workers for replicated fits"),
    "output_dir": (str, ".", "directory receiving the outputs"),
    "format": (str, "csv", "tabular output format: csv or json"),
}

SOLVER_OPTIONS = {
    "eps": (float, 1e-6, "relative duality-gap target"),
    "max_outer": (int, 50, "continuation steps"),
    "max_inner": (int, 10000, "FISTA iterations per step"),
    "scaling": (_scaling, "variance",
                "column scaling before the fit: variance, norm or none"),
    "rule": (str, "or", "edge rule: or / and"),
    "tol": (float, 1e-8, "coefficient threshold for edges"),
}

STARS_OPTIONS = {
    "num_lambda": (int, 30, "grid size"),
    "ratio": (float, 0.01, "smallest grid value over lambda1_max"),
    "lambda1_grid": (_floats, None, "explicit comma-separated grid"),
    "num_subsamples": (int, 20, "replicates"),
    "subsample_size": (int, None, "rows per replicate (default 10 sqrt(n))"),
    "threshold": (float, 0.05, "instability threshold"),
    "replace": (_bool, False, "bootstrap instead of subsampling"),
    "stars_method": (str, "mb", "replicate fits: mb or mglasso"),
}

COMMANDS = {
    "simulate": {
        "model": (str, "sbm", "sbm, er or sf"),
        "p": (int, 40, "variables"),
        "n": (int, 80, "samples"),
        "K": (int, 5, "blocks of the block model"),
        "pi": (_floats, None, "block proportions, comma-separated"),
        "alpha_in": (float, 0.75, "within-block edge probability"),
        "alpha_out": (float, 0.01, "between-block edge probability"),
        "alpha": (float, 0.1, "Erdos-Renyi edge probability"),
        "num_edges": (int, 40, "scale-free edge budget"),
        "rho": (float, 0.3, "within-block correlation"),
    },
    "fit": {
        "data": (str, None, "input CSV"),
        "lambda1": (float, None, "sparsity penalty"),
        "lambda2": (float, 0.0, "fusion penalty"),
        "method": (str, "mglasso", "mglasso or mb"),
        **SOLVER_OPTIONS,
    },
    "path": {
        "data": (str, None, "input CSV"),
        "lambda1": (float, None, "sparsity penalty (or use --stars)"),
        "stars": (_bool, False, "select lambda1 by StARS first"),
        "lambda2_start": (_opt_float, None, "first lambda2"),
        "kappa": (float, 1.3, "geometric growth of lambda2"),
        "eps_fuse": (float, 1e-4, "fusion distance"),
        "max_levels": (int, 50, "maximum number of levels"),
        "stop_clusters": (int, 1, "stop once this many clusters remain"),
        **SOLVER_OPTIONS,
        **STARS_OPTIONS,
    },
    "stars": {
        "data": (str, None, "input CSV"),
        **{k: v for k, v in SOLVER_OPTIONS.items()},
        **STARS_OPTIONS,
    },
    "evaluate": {
        "graph": (str, None, "estimated graph (graph.json, hierarchy level "
                  "with --level-clusters, or beta.csv)"),
        "truth": (str, None, "reference graph (truth.json or graph.json)"),
        "partition": (str, None, "estimated partition file"),
        "reference_partition": (str, None, "reference partition file"),
        "level_clusters": (int, None, "hierarchy level nearest this many "
                           "clusters"),
        "rule": (str, "or", "edge rule for beta.csv inputs"),
        "tol": (float, 1e-8, "coefficient threshold for beta.csv inputs"),
    },
    "clr": {
        "counts": (str, None, "count CSV"),
        "pseudo": (float, 1.0, "pseudocount"),
        "min_prevalence": (float, 0.0, "minimum fraction of samples with a "
                           "nonzero count"),
        "min_depth": (float, 0.0, "minimum total count per sample"),
    },
}

REQUIRED = {"fit": ("data", "lambda1"), "path": ("data",),
            "stars": ("data",), "clr": ("counts",)}


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    for name, (typ, _, hlp) in GLOBAL_OPTIONS.items():
        common.add_argument(_flag(name), dest=name, default=None, help=hlp)
    common.add_argument("--config", default=None,
                        help="TOML or JSON configuration file")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = _Parser(prog="mglasso", parents=[common],
                     description="Multiscale graphical lasso.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for cmd, opts in COMMANDS.items():
        sp = sub.add_parser(cmd, parents=[common], help=cmd)
        for name, (typ, default, hlp) in opts.items():
            sp.add_argument(_flag(name), dest=name, default=None,
                            help="%s (default %s)" % (hlp, default))
    return parser


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from None
    try:
        if path.lower().endswith(".json"):
            data = json.loads(raw.decode("utf-8"))
        else:
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            data = tomllib.loads(raw.decode("utf-8"))
    except ValueError as exc:
        raise ConfigError("cannot parse config %s: %s" % (path, exc)) from None
    if not isinstance(data, dict):
        raise ConfigError("config %s must hold a table" % path)
    return data


def resolve(args):
    """Merge defaults, configuration file and flags into one dict."""
    cmd = args.command
    file_cfg = _load_config(args.config)
    table = {k.replace("-", "_"): v for k, v in file_cfg.items()
             if not isinstance(v, dict)}
    table.update({k.replace("-", "_"): v
                  for k, v in file_cfg.get(cmd, {}).items()})
    specs = {**GLOBAL_OPTIONS, **COMMANDS[cmd]}
    known = set(specs) | set(COMMANDS)
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError("unknown config key(s): %s" % ", ".join(unknown))
    out = {}
    for name, (typ, default, _) in specs.items():
        val = getattr(args, name, None)
        if val is None:
            val = table.get(name, default)
        if val is not None and not (typ is str and isinstance(val, str)):
            try:
                val = typ(val)
            except (TypeError, ValueError) as exc:
                raise ConfigError("invalid value for %s: %s"
                                  % (_flag(name), exc)) from None
        out[name] = val
    for name in REQUIRED.get(cmd, ()):
        if out.get(name) is None:
            if not (cmd == "path" and name == "lambda1"):
                raise ConfigError("missing required option %s" % _flag(name))
    if out["format"] not in ("csv", "json"):
        raise ConfigError("--format must be csv or json")
    if out["threads"] < 1 and out["threads"] != -1:
        raise ConfigError("--threads must be >= 1 (or -1 for all cores)")
    return out


class _Run:
    """Output directory plus manifest bookkeeping."""

    def __init__(self, command, cfg):
        self.cfg = cfg
        self.dir = cfg["output_dir"]
        os.makedirs(self.dir, exist_ok=True)
        self.manifest = mio.RunManifest(command, dict(cfg), cfg["seed"])

    def path(self, name):
        return os.path.join(self.dir, name)

    def write(self, name, text):
        p = mio.write_text(self.path(name), text)
        self.manifest.add_output(p)
        return p

    def json(self, name, obj):
        obj = dict(obj)
        obj["manifest"] = "manifest.json"
        return self.write(name, mio.dumps_json(obj))

    def table(self, stem, values, names, extra=None):
        if self.cfg["format"] == "json":
            obj = {"columns": list(names),
                   "rows": np.asarray(values, float).tolist()}
            obj.update(extra or {})
            return self.json(stem + ".json", obj)
        return self.write(stem + ".csv", mio.matrix_csv(values, names))

    def finish(self):
        mio.write_json(self.path("manifest.json"), self.manifest.to_dict())


def _graph_json(g, names, extra=None):
    W = g.weights
    edges = [{"i": i, "j": j, "source": names[i], "target": names[j],
              "weight": float(W[i, j]) if W is not None else 1.0}
             for i, j in g.edges()]
    out = {"p": g.p, "variables": list(names), "edges": edges,
           "num_edges": len(edges)}
    out.update(extra or {})
    return out


def _solver_cfg(cfg):
    return SolverConfig(eps_target=cfg["eps"], max_outer=cfg["max_outer"],
                        max_inner=cfg["max_inner"])


def _load_data(run, cfg):
    path = cfg["data"]
    try:
        X = mio.read_data(path)
    except OSError as exc:
        raise mio.DataError("cannot read %s: %s" % (path, exc)) from None
    run.manifest.add_input(path)
    try:
        Xs = standardize(X, scaling=cfg["scaling"])
    except ValueError as exc:
        raise mio.DataError("%s: %s" % (path, exc)) from None
    return Xs


def cmd_simulate(cfg):
    run = _Run("simulate", cfg)
    try:
        sim = SimConfig(p=cfg["p"], n=cfg["n"], model=cfg["model"], K=cfg["K"],
                        pi=cfg["pi"], alpha_in=cfg["alpha_in"],
                        alpha_out=cfg["alpha_out"], alpha=cfg["alpha"],
                        num_edges=cfg["num_edges"], rho=cfg["rho"],
                        seed=cfg["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with run.manifest.stage("simulate"):
        try:
            truth, X = simulate(sim)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    names = X.names
    run.table("data", X.values, names)
    run.table("omega", truth.precision, names)
    run.json("truth.json", {**truth.to_dict(), "variables": list(names),
                            "config": sim.to_dict()})
    run.finish()
    return EXIT_OK


def _fit(Xs, lam1, lam2, method, scfg):
    if method == "mb":
        if lam2 != 0:
            raise ConfigError("method mb requires lambda2 = 0")
        return neighborhood_selection(Xs, lam1), None
    if method != "mglasso":
        raise ConfigError("--method must be mglasso or mb")
    try:
        beta, diag = conesta_solve(Xs, Hyperparameters(lam1, lam2), scfg)
    except (SolverDivergenceError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        raise NumericalError(str(exc)) from None
    if not np.all(np.isfinite(beta.coeffs)):
        raise NumericalError("solver returned non-finite coefficients")
    return beta, diag


def cmd_fit(cfg):
    run = _Run("fit", cfg)
    Xs = _load_data(run, cfg)
    try:
        hp = Hyperparameters(cfg["lambda1"], cfg["lambda2"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with run.manifest.stage("fit"):
        beta, diag = _fit(Xs, hp.lambda1, hp.lambda2, cfg["method"],
                          _solver_cfg(cfg))
    names = Xs.names
    g = graph_from_beta(beta, cfg["rule"], cfg["tol"])
    if cfg["format"] == "json":
        run.json("beta.json", {"variables": list(names),
                               "rows": beta.coeffs.tolist(),
                               "layout": "row i lists the other variables "
                                         "in increasing order"})
    else:
        run.write("beta.csv", mio.beta_csv(beta, names))
    run.json("graph.json", _graph_json(g, names, {
        "lambda1": hp.lambda1, "lambda2": hp.lambda2, "rule": cfg["rule"]}))
    d = {"method": cfg["method"], "lambda1": hp.lambda1,
         "lambda2": hp.lambda2, "lambda1_max": lambda1_max(Xs)}
    if diag is not None:
        d.update(diag.to_dict())
        if not diag.converged:
            logger.warning("solver did not reach the gap target (gap %.3g)",
                           diag.final_duality_gap)
    run.json("diagnostics.json", d)
    run.finish()
    return EXIT_OK


def _stars_cfg(cfg, Xs):
    grid = cfg["lambda1_grid"]
    if grid is None:
        lmax = lambda1_max(Xs)
        grid = np.geomspace(lmax, cfg["ratio"] * lmax, cfg["num_lambda"])
    try:
        return StarsConfig(lambda1_grid=grid,
                           num_subsamples=cfg["num_subsamples"],
                           subsample_size=cfg["subsample_size"],
                           instability_threshold=cfg["threshold"],
                           seed=cfg["seed"], replace=cfg["replace"],
                           method=cfg["stars_method"], rule=cfg["rule"],
                           tol=cfg["tol"], solver=_solver_cfg(cfg))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _run_stars(run, cfg, Xs):
    scfg = _stars_cfg(cfg, Xs)
    with run.manifest.stage("stars"):
        try:
            scfg.size(Xs.n)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            res = select_lambda1(Xs, scfg, n_jobs=cfg["threads"])
        for w in caught:
            logger.warning("%s", w.message)
    return res


def cmd_stars(cfg):
    run = _Run("stars", cfg)
    Xs = _load_data(run, cfg)
    res = _run_stars(run, cfg, Xs)
    run.json("stars.json", res.to_dict())
    run.manifest.extra["selected_lambda1"] = res.lambda1
    run.finish()
    return EXIT_OK


def cmd_path(cfg):
    run = _Run("path", cfg)
    Xs = _load_data(run, cfg)
    lam1 = cfg["lambda1"]
    if cfg["stars"]:
        res = _run_stars(run, cfg, Xs)
        lam1 = res.lambda1
        run.json("stars.json", res.to_dict())
        run.manifest.extra["selected_lambda1"] = lam1
    elif lam1 is None:
        raise ConfigError("path needs --lambda1 or --stars")
    try:
        pcfg = PathConfig(lambda2_start=cfg["lambda2_start"],
                          kappa=cfg["kappa"], eps_fuse=cfg["eps_fuse"],
                          max_levels=cfg["max_levels"],
                          stop_clusters=cfg["stop_clusters"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    with run.manifest.stage("path"):
        try:
            hier = mglasso_path(Xs, lam1, pcfg, _solver_cfg(cfg))
        except (SolverDivergenceError, np.linalg.LinAlgError) as exc:
            raise NumericalError(str(exc)) from None
    names = Xs.names
    out = hier.to_dict(rule=cfg["rule"], tol=cfg["tol"], names=names)
    for k, lev in enumerate(hier.levels):
        cg = cluster_level_graph(lev.beta, lev.partition, cfg["rule"],
                                 cfg["tol"])
        out["levels"][k]["cluster_edges"] = [
            {"a": a, "b": b, "weight": float(cg.weights[a, b])}
            for a, b in cg.edges()]
    run.json("hierarchy.json", out)
    run.finish()
    return EXIT_OK


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise mio.DataError("cannot read %s: %s" % (path, exc)) from None
    except ValueError as exc:
        raise mio.DataError("%s: invalid JSON: %s" % (path, exc)) from None


def _edge_pairs(edges):
    out = []
    for e in edges:
        if isinstance(e, dict):
            out.append((int(e["i"]), int(e["j"])))
        else:
            out.append((int(e[0]), int(e[1])))
    return out


def _load_graph(path, cfg):
    if path.lower().endswith(".csv"):
        beta, _ = mio.read_beta_csv(path)
        return graph_from_beta(beta, cfg["rule"], cfg["tol"])
    obj = _read_json(path)
    if "levels" in obj:
        if cfg["level_clusters"] is None:
            raise ConfigError("hierarchy input needs --level-clusters")
        lev = min(obj["levels"],
                  key=lambda L: abs(L["num_clusters"] - cfg["level_clusters"]))
        p = len(lev["labels"])
        return Graph.from_edges(p, _edge_pairs(lev["edges"]))
    try:
        return Graph.from_edges(int(obj["p"]), _edge_pairs(obj["edges"]))
    except (KeyError, TypeError, IndexError) as exc:
        raise mio.DataError("%s: not a graph file (%s)" % (path, exc)) from None


def _load_partition(path, cfg):
    if path.lower().endswith(".csv"):
        vals, _ = mio.read_csv_matrix(path)
        return Partition(vals[:, -1].astype(int))
    obj = _read_json(path)
    if "levels" in obj:
        if cfg["level_clusters"] is None:
            raise ConfigError("hierarchy input needs --level-clusters")
        lev = min(obj["levels"],
                  key=lambda L: abs(L["num_clusters"] - cfg["level_clusters"]))
        return Partition(np.asarray(lev["labels"]))
    if "labels" not in obj:
        raise mio.DataError("%s: no 'labels' entry" % path)
    return Partition(np.asarray(obj["labels"]))


def cmd_evaluate(cfg):
    run = _Run("evaluate", cfg)
    names, row = [], []
    if cfg["graph"] or cfg["truth"]:
        if not (cfg["graph"] and cfg["truth"]):
            raise ConfigError("edge metrics need both --graph and --truth")
        est = _load_graph(cfg["graph"], cfg)
        ref = _load_graph(cfg["truth"], cfg)
        run.manifest.add_input(cfg["graph"])
        run.manifest.add_input(cfg["truth"])
        try:
            c = confusion(est, ref)
        except ValueError as exc:
            raise mio.DataError(str(exc)) from None
        d = c.to_dict()
        for k in ("tp", "fp", "tn", "fn", "sensitivity", "specificity"):
            names.append(k)
            row.append(d[k])
    if cfg["partition"] or cfg["reference_partition"]:
        if not (cfg["partition"] and cfg["reference_partition"]):
            raise ConfigError("ARI needs --partition and --reference-partition")
        a = _load_partition(cfg["partition"], cfg)
        b = _load_partition(cfg["reference_partition"], cfg)
        run.manifest.add_input(cfg["partition"])
        run.manifest.add_input(cfg["reference_partition"])
        try:
            names.append("ari")
            row.append(adjusted_rand_index(a, b))
        except ValueError as exc:
            raise mio.DataError(str(exc)) from None
    if not names:
        raise ConfigError("nothing to evaluate: give --graph/--truth and/or "
                          "--partition/--reference-partition")
    run.table("metrics", [row], names)
    run.finish()
    return EXIT_OK


def cmd_clr(cfg):
    run = _Run("clr", cfg)
    path = cfg["counts"]
    try:
        counts, names = mio.read_csv_matrix(path)
    except OSError as exc:
        raise mio.DataError("cannot read %s: %s" % (path, exc)) from None
    run.manifest.add_input(path)
    try:
        C, names, rows = filter_counts(counts, cfg["min_prevalence"],
                                       cfg["min_depth"], names)
        Y = clr_transform(C, cfg["pseudo"], names=names)
    except ValueError as exc:
        msg = str(exc)
        if "must" in msg and ("pseudo" in msg or "prevalence" in msg
                              or "depth" in msg):
            raise ConfigError(msg) from None
        raise mio.DataError("%s: %s" % (path, msg)) from None
    run.table("clr", Y.values, Y.names)
    run.manifest.extra["kept_samples"] = rows.tolist()
    run.finish()
    return EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "path": cmd_path,
            "stars": cmd_stars, "evaluate": cmd_evaluate, "clr": cmd_clr}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve(args)
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except mio.DataError as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
