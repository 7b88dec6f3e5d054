"""Command-line interface: fit, sample, density, contour and select."""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .density import density_batch
from .em import CONSTRAINTS, CONVERGENCE_RULES, FitOptions, fit
from .errors import CfustError, InputError, NumericalError
from .initialization import model_select
from .mvt import CdfSettings
from .params import DataMatrix
from .sampling import RngHandle, sample_mixture

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


def _csv_list(text, conv=str):
    return [conv(x) for x in text.split(",") if x.strip()]


def _int_range(text):
    """"1:4" (inclusive) or "1,3,5"."""
    if ":" in text:
        lo, hi = text.split(":", 1)
        return list(range(int(lo), int(hi) + 1))
    return _csv_list(text, int)


def _limits(text):
    vals = _csv_list(text, float)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("limits must be given as lo,hi")
    return tuple(vals)


def _looks_like_header(path):
    with open(path) as fh:
        first = fh.readline()
    for cell in first.strip().split(","):
        try:
            float(cell)
        except ValueError:
            return True
    return False


def _load_data(args) -> DataMatrix:
    if not Path(args.data).is_file():
        return io.read_csv(args.data)  # raises DataFileNotFound
    header = {"yes": True, "no": False}.get(args.header)
    if header is None:
        header = _looks_like_header(args.data)
    cols = _csv_list(args.columns) if args.columns else None
    return io.read_csv(args.data, has_header=header, select_columns=cols)


def _add_data_args(p, required=True):
    p.add_argument("--data", required=required, help="CSV file of observations")
    p.add_argument("--header", choices=("auto", "yes", "no"), default="auto", help="first row is a header")
    p.add_argument("--columns", help="comma-separated column names or 0-based indices")


def _add_fit_args(p):
    p.add_argument("--q", type=int, help="columns of the skewness matrix (default p)")
    p.add_argument("--init", default="moments", help="moments | transformation | nested:<normal|t|rmst|umst> | file:<model.json>")
    p.add_argument("--a", type=float, default=0.9, help="moments shrink proportion")
    p.add_argument("--convergence", choices=CONVERGENCE_RULES, default="aitken")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--itmax", type=int, default=100)
    p.add_argument("--nkmeans", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", "-v", action="store_true", help="print the log-likelihood at each iteration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfustmix", description="Finite mixtures of CFUST distributions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a g-component mixture by EM")
    _add_data_args(p)
    p.add_argument("--g", type=int, required=True)
    _add_fit_args(p)
    p.add_argument("--constraint", choices=CONSTRAINTS, default="full")
    p.add_argument("--out", default="model.json")
    p.add_argument("--labels", help="write 1-based cluster labels here (posteriors go to <stem>_tau.csv)")

    p = sub.add_parser("sample", help="draw from a model")
    p.add_argument("--model", required=True)
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--n", type=int)
    grp.add_argument("--counts", help="comma-separated per-component counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("density", help="mixture density at each observation")
    p.add_argument("--model", required=True)
    _add_data_args(p)
    p.add_argument("--log", action="store_true", help="write log-densities")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("contour", help="density values on a lattice plus contour levels")
    p.add_argument("--model", required=True)
    _add_data_args(p, required=False)
    p.add_argument("--dims", type=int, choices=(2, 3), default=2)
    p.add_argument("--axes", help="comma-separated 0-based variable indices (default first dims)")
    p.add_argument("--grid", type=int)
    p.add_argument("--xlim", type=_limits)
    p.add_argument("--ylim", type=_limits)
    p.add_argument("--zlim", type=_limits)
    p.add_argument("--components", help="comma-separated 1-based components (unweighted)")
    p.add_argument("--nlevels", type=int, default=10)
    p.add_argument("--levels", default="0.9", help="comma-separated levels for 3-D grids")
    p.add_argument("--level-mode", choices=io.LEVEL_MODES, default="hdr")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--levels-out", help="levels sidecar (default <out stem>_levels.csv)")

    p = sub.add_parser("select", help="fit a grid of (g, q) and rank by AIC or BIC")
    _add_data_args(p)
    p.add_argument("--g-range", type=_int_range, required=True, help='e.g. "1:4" or "1,2,3"')
    p.add_argument("--q-range", type=_int_range, help="default p")
    p.add_argument("--criterion", choices=("aic", "bic"), default="bic")
    _add_fit_args(p)
    p.add_argument("--out", default="selection.csv")
    p.add_argument("--model-out", help="write the selected model here")
    return parser


def _options(args) -> FitOptions:
    init = args.init if not args.init.startswith("file:") else "moments"
    return FitOptions(
        itmax=args.itmax,
        eps=args.eps,
        convergence=args.convergence,
        seed=args.seed,
        init=init,
        a=args.a,
        nkmeans=args.nkmeans,
        verbose=args.verbose,
    )


def cmd_fit(args):
    data = _load_data(args)
    options = _options(args)
    initial = io.read_model(args.init[5:]) if args.init.startswith("file:") else None
    res = fit(data, args.g, q=args.q, initial=initial, options=options, constraint=args.constraint)
    io.write_model(args.out, res.model, res)
    if args.labels:
        io.write_labels(args.labels, res.clusters)
        lp = Path(args.labels)
        io.write_tau(lp.with_name(lp.stem + "_tau.csv"), res.tau)
    print(f"loglik = {res.loglik:.6f}  aic = {res.aic:.6f}  bic = {res.bic:.6f}  "
          f"iterations = {res.iterations}  converged = {res.converged}")


def cmd_sample(args):
    model = io.read_model(args.model)
    n = args.n if args.counts is None else _csv_list(args.counts, int)
    sample = sample_mixture(n, model, RngHandle(args.seed))
    header = [f"y{i + 1}" for i in range(model.p)] + ["label"]
    rows = [list(map(float, v)) + [int(l)] for v, l in zip(sample.values, sample.labels)]
    with open(args.out, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(io._fmt(x) for x in r) + "\n")


def cmd_density(args):
    model = io.read_model(args.model)
    data = _load_data(args)
    dens = density_batch(data, model, CdfSettings(seed=args.seed))
    if args.log:
        with np.errstate(divide="ignore"):
            io.write_matrix(args.out, np.log(dens)[:, None], header=["logdensity"])
    else:
        io.write_matrix(args.out, dens[:, None], header=["density"])


def cmd_contour(args):
    model = io.read_model(args.model)
    data = _load_data(args) if args.data else None
    lims = [args.xlim, args.ylim, args.zlim][: args.dims]
    if all(l is not None for l in lims):
        ranges = lims
    elif any(l is not None for l in lims):
        raise InputError("give all of --xlim/--ylim" + ("/--zlim" if args.dims == 3 else "") + " or none")
    else:
        ranges = None
    grid = io.contour_grid(
        model,
        dims=args.dims,
        ranges=ranges,
        data=data,
        grid=args.grid,
        components=_csv_list(args.components, int) if args.components else None,
        nlevels=args.nlevels,
        levels=_csv_list(args.levels, float),
        level_mode=args.level_mode,
        axes=_csv_list(args.axes, int) if args.axes else None,
        settings=replace(io.GRID_SETTINGS, seed=args.seed),
        seed=args.seed,
    )
    out = Path(args.out)
    grid.write(out, args.levels_out or out.with_name(out.stem + "_levels.csv"))


def cmd_select(args):
    data = _load_data(args)
    best, table = model_select(data, args.g_range, args.q_range, args.criterion, _options(args))
    header = ["g", "q", "loglik", "n_params", "aic", "bic", "status"]
    with open(args.out, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in table:
            vals = [r.g, r.q, r.loglik, r.n_params, r.aic, r.bic]
            fh.write(",".join(io._fmt(v) for v in vals) + "," + r.status.replace(",", ";") + "\n")
    if args.model_out:
        io.write_model(args.model_out, best.model, best)
    print(f"selected g = {best.model.g}, q = {best.model.q}, {args.criterion} = "
          f"{best.aic if args.criterion == 'aic' else best.bic:.6f}")


COMMANDS = {"fit": cmd_fit, "sample": cmd_sample, "density": cmd_density, "contour": cmd_contour, "select": cmd_select}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    warnings.simplefilter("default")
    try:
        COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CfustError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
