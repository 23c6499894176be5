"""Command-line interface.

Every subcommand reads an optional flat ``key = value`` config file; explicit flags
override it and built-in defaults fill the rest.  Each run writes ``manifest.json``
with the fully resolved settings, so ``netattr <command> --config manifest-derived``
reproduces it.  Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ame import PosteriorSamples, PriorConfig, Schedule, run_chain, to_identified
from .ame.state import ModelState
from .dependence import DEFAULT_NULL_DRAWS, test_independence
from .errors import NumericalError, ValidationError
from .experiments import DEFAULT_GAMMA_SQ, DEFAULT_SIZES, crossval, power_grid, write_power_csv
from .lowrank import extract_factors, posterior_mean_uv, scree_proportions
from .relational_data import (
    RelationalMatrix,
    align_attributes,
    center_attributes,
    load_attributes,
    load_covariate,
    load_network,
    read_dense_matrix,
)


def _int_list(s):
    return [int(x) for x in str(s).split(",") if x.strip()]


def _float_list(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _str_list(s):
    return [x.strip() for x in str(s).split(",") if x.strip()]


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"not a boolean: {s!r}")


# name -> (type, default); None default means "required" for paths only where noted
_NETWORK_OPTS = {
    "network": (str, None),
    "format": (str, "dense-csv"),
    "kind": (str, "continuous"),
    "max_nominations": (int, None),
    "attributes": (str, None),
    "covariates": (_str_list, []),
}
_CHAIN_OPTS = {
    "k": (int, 1),
    "iterations": (int, 4000),
    "burn_in": (int, 500),
    "thin": (int, 5),
    "restrict_cross": (_bool, True),
    "sigma_e_shape": (float, 0.5),
    "sigma_e_rate": (float, 0.5),
    "wishart_df": (float, None),
    "rho_proposal_sd": (float, 0.05),
    "beta_prior_var": (float, 100.0),
}
_COMMON = {"seed": (int, None), "threads": (int, 1), "out_dir": (str, None)}

OPTIONS = {
    "fit": {**_COMMON, **_NETWORK_OPTS, **_CHAIN_OPTS},
    "test": {**_COMMON, **_NETWORK_OPTS, **_CHAIN_OPTS, "run_dir": (str, None), "alpha": (float, 0.05),
             "num_draws": (int, DEFAULT_NULL_DRAWS)},
    "decompose": {**_COMMON, "run_dir": (str, None), "matrix": (str, None), "k_max": (int, 8),
                  "cutoff": (float, 0.9)},
    "simulate": {**_COMMON, "scenarios": (_str_list, ["A", "B"]),
                 "observations": (_str_list, ["N", "Y", "B0.5", "B0.15"]),
                 "sizes": (_int_list, list(DEFAULT_SIZES)), "gamma_sq": (_float_list, list(DEFAULT_GAMMA_SQ)),
                 "reps": (int, 200), "alpha": (float, 0.05), "iterations": (int, 4000), "burn_in": (int, 500),
                 "thin": (int, 5), "num_draws": (int, DEFAULT_NULL_DRAWS)},
    "crossval": {**_COMMON, **_NETWORK_OPTS, **_CHAIN_OPTS, "folds": (int, 20), "holdout_fraction": (float, 0.05)},
}
SEED_REQUIRED = ("fit", "simulate", "crossval", "test")


def read_config(path):
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, val = (x.strip() for x in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def resolve(command, args) -> dict:
    """Merge flags, config file and defaults (in that order of precedence)."""
    options = OPTIONS[command]
    cfg = read_config(args.config) if args.config else {}
    unknown = sorted(set(cfg) - set(options))
    if unknown:
        raise ValidationError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for name, (conv, default) in options.items():
        flag = getattr(args, name, None)
        if flag is not None and flag != []:
            val = flag
        elif name in cfg:
            val = cfg[name]
        else:
            val = default
        if val is not None and not (isinstance(val, list) and conv in (_str_list, _int_list, _float_list)):
            try:
                val = conv(val)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"bad value for {name}: {val!r}") from exc
        out[name] = val
    if command in SEED_REQUIRED and out["seed"] is None:
        raise ValidationError(f"{command} needs --seed (or seed in the config file)")
    if out["out_dir"] is None:
        raise ValidationError("--out-dir is required")
    if out["threads"] < 1:
        raise ValidationError("threads must be >= 1")
    return out


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir, command, config, extra=None):
    files = sorted(str(p.relative_to(out_dir)) for p in Path(out_dir).rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    # the output location is not part of the run's identity
    settings = {k: v for k, v in config.items() if k != "out_dir"}
    manifest = {"command": command, "version": __version__, "config": settings, "outputs": files}
    if extra:
        manifest.update(extra)
    _dump_json(manifest, Path(out_dir) / "manifest.json")


def _schedule(cfg):
    return Schedule(cfg["iterations"], cfg["burn_in"], cfg["thin"], cfg["seed"])


def _prior(cfg):
    return PriorConfig(sigma_e_shape=cfg["sigma_e_shape"], sigma_e_rate=cfg["sigma_e_rate"],
                       wishart_df=cfg["wishart_df"], rho_proposal_sd=cfg["rho_proposal_sd"],
                       beta_prior_var=cfg["beta_prior_var"])


def _load_inputs(cfg, need_attributes=False):
    if not cfg["network"]:
        raise ValidationError("--network is required")
    Y = load_network(cfg["network"], format=cfg["format"], kind=cfg["kind"],
                     max_nominations=cfg["max_nominations"])
    X = None
    if cfg["attributes"]:
        X = center_attributes(align_attributes(load_attributes(cfg["attributes"]), Y.labels))
    elif need_attributes:
        raise ValidationError("--attributes is required")
    W = [load_covariate(path) for path in cfg["covariates"]]
    if cfg["k"] >= Y.n:
        raise ValidationError(f"k={cfg['k']} must be smaller than the number of nodes {Y.n}")
    return Y, X, W


def _write_factors(path, labels, factors):
    k = factors.k
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "a", "b", *(f"u{t + 1}" for t in range(k)), *(f"v{t + 1}" for t in range(k))])
        for i, lab in enumerate(labels):
            w.writerow([lab, *(repr(float(x)) for x in factors.N[i])])


def _write_matrix(path, M, header=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for row in np.atleast_2d(M):
            w.writerow(["nan" if np.isnan(x) else repr(float(x)) for x in row])


def _identified_summary(post: PosteriorSamples, p):
    """Identify every stored draw; return per-draw diagonal D and the mean identified Sigma."""
    k = post.U.shape[2]
    n = post.a.shape[1]
    Ds, Sigmas = [], []
    for s in range(post.n_samples):
        st = ModelState(mu=float(post.mu[s]), beta=post.beta[s], a=post.a[s], b=post.b[s], U=post.U[s],
                        V=post.V[s], Z=np.zeros((0, 0)), sigma2_e=float(post.sigma2_e[s]), rho=float(post.rho[s]),
                        Sigma=post.Sigma[s], X=np.zeros((n, p)))
        ident = to_identified(st)
        iu = slice(p + 2, p + 2 + k)
        Ds.append(np.diag(ident.Sigma[iu, iu]))
        Sigmas.append(ident.Sigma)
    return np.array(Ds), np.mean(Sigmas, axis=0)


def _fit(cfg, Y, X, W):
    return run_chain(Y, X=X, W=W, k=cfg["k"], prior=_prior(cfg), schedule=_schedule(cfg),
                     restrict_cross=cfg["restrict_cross"])


def cmd_fit(cfg):
    out = Path(cfg["out_dir"])
    Y, X, W = _load_inputs(cfg)
    post = _fit(cfg, Y, X, W)
    out.mkdir(parents=True, exist_ok=True)
    post.to_directory(out / "samples")
    k = cfg["k"]
    if k >= 1:
        _write_factors(out / "factors.csv", Y.labels, extract_factors(post, k))
        p = post.meta["p"]
        D, Sigma_mean = _identified_summary(post, p)
        _write_matrix(out / "identified_D.csv", D, [f"d{t + 1}" for t in range(k)])
        _write_matrix(out / "identified_Sigma_mean.csv", Sigma_mean)
    _dump_json(post.ess, out / "ess.json")
    _write_manifest(out, "fit", cfg, {"mode": post.meta["mode"]})
    print(f"stored {post.n_samples} draws in {out / 'samples'} (mode {post.meta['mode']})")
    return 0


def _complete_rows(X):
    vals = np.asarray(X.values)
    keep = ~np.isnan(vals).any(axis=1)
    return vals, keep


def cmd_test(cfg):
    out = Path(cfg["out_dir"])
    if not cfg["attributes"]:
        raise ValidationError("--attributes is required")
    if cfg["run_dir"]:
        post = PosteriorSamples.from_directory(Path(cfg["run_dir"]) / "samples")
        with open(Path(cfg["run_dir"]) / "manifest.json", encoding="utf-8") as fh:
            labels = None
            prev = json.load(fh)["config"]
        k = int(post.meta["k"])
        if prev.get("network"):
            labels = load_network(prev["network"], format=prev["format"], kind=prev["kind"],
                                  max_nominations=prev["max_nominations"]).labels
        X = load_attributes(cfg["attributes"])
        X = align_attributes(X, labels) if labels else X
    else:
        net_cfg = dict(cfg)
        net_cfg["attributes"] = None
        Y, _, W = _load_inputs(net_cfg)
        X = align_attributes(load_attributes(cfg["attributes"]), Y.labels)
        post = run_chain(Y, W=W, k=cfg["k"], prior=_prior(cfg), schedule=_schedule(cfg), mode="network_only",
                         restrict_cross=cfg["restrict_cross"])
        k = cfg["k"]
    if k < 1:
        raise ValidationError("testing needs k >= 1")
    N = extract_factors(post, k).N
    vals, keep = _complete_rows(X)
    res = test_independence(vals[keep], N[keep], alpha=cfg["alpha"], num_draws=cfg["num_draws"],
                            seed=cfg["seed"], center=True)
    out.mkdir(parents=True, exist_ok=True)
    res.to_json(out / "test.json")
    _write_manifest(out, "test", cfg, {"complete_rows": int(keep.sum())})
    print(f"reject H0 at alpha={cfg['alpha']}: {'yes' if res.reject else 'no'} (p = {res.p_value!r})")
    return 0


def cmd_decompose(cfg):
    out = Path(cfg["out_dir"])
    if cfg["run_dir"]:
        M = posterior_mean_uv(PosteriorSamples.from_directory(Path(cfg["run_dir"]) / "samples"))
    elif cfg["matrix"]:
        M, _ = read_dense_matrix(cfg["matrix"])
    else:
        raise ValidationError("give --run-dir or --matrix")
    prof = scree_proportions(M, cfg["k_max"])
    out.mkdir(parents=True, exist_ok=True)
    prof.to_csv(out / "scree.csv")
    rank = prof.select_rank(cfg["cutoff"])
    _write_manifest(out, "decompose", cfg, {"selected_rank": rank})
    print(f"selected k = {rank} (cumulative proportion cutoff {cfg['cutoff']})")
    return 0


def cmd_simulate(cfg):
    out = Path(cfg["out_dir"])
    sched = Schedule(cfg["iterations"], cfg["burn_in"], cfg["thin"], cfg["seed"])
    rows = power_grid(cfg["scenarios"], cfg["observations"], cfg["sizes"], cfg["gamma_sq"], cfg["reps"],
                      cfg["alpha"], sched, cfg["seed"], cfg["threads"], cfg["num_draws"])
    out.mkdir(parents=True, exist_ok=True)
    write_power_csv(rows, out / "power.csv")
    _write_manifest(out, "simulate", cfg)
    print(f"wrote {len(rows)} power cells to {out / 'power.csv'}")
    return 0


def cmd_crossval(cfg):
    out = Path(cfg["out_dir"])
    Y, X, W = _load_inputs(cfg, need_attributes=True)
    rep = crossval(Y, X.values, W, cfg["k"], cfg["folds"], cfg["holdout_fraction"], _schedule(cfg),
                   cfg["seed"], cfg["threads"], names=X.names, prior=_prior(cfg))
    out.mkdir(parents=True, exist_ok=True)
    rep.to_csv(out / "cv.csv")
    with open(out / "cv_folds.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "method", *rep.names])
        for f in range(rep.folds):
            w.writerow([f + 1, "regression", *(repr(float(x)) for x in rep.fold_baseline[f])])
            w.writerow([f + 1, "joint", *(repr(float(x)) for x in rep.fold_joint[f])])
    _write_manifest(out, "crossval", cfg)
    print("improvement (%): " + ", ".join(f"{n}={v:.2f}" for n, v in zip(rep.names, rep.improvement)))
    return 0


COMMANDS = {"fit": cmd_fit, "test": cmd_test, "decompose": cmd_decompose, "simulate": cmd_simulate,
            "crossval": cmd_crossval}


def build_parser():
    parser = argparse.ArgumentParser(prog="netattr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in OPTIONS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="flat key = value settings file")
        for opt in options:
            flag = "--" + opt.replace("_", "-")
            if opt == "covariates":
                sp.add_argument("--covariate", dest="covariates", action="append", default=None,
                                help="dyadic covariate CSV (repeatable)")
            elif opt == "k":
                sp.add_argument("-k", "--k", dest="k", default=None)
            else:
                sp.add_argument(flag, dest=opt, default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = getattr(args, "out_dir", None)
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except (ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        code, kind = 2, "validation"
        err = exc
    except (NumericalError, np.linalg.LinAlgError) as exc:
        code, kind = 3, "numerical"
        err = exc
    print(f"error ({kind}): {err}", file=sys.stderr)
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _dump_json({"command": args.command, "error": kind, "exit_code": code, "message": str(err)},
                   Path(out_dir) / "error.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
