"""Command-line entry point: ``wildsim <command> [action] [options]``.

Exit status: 0 on success, 1 when a selftest check fails, 2 on invalid
input (bad flags, missing or malformed config), 3 when a computation would
exceed its numeric budget.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericBudgetError

EXIT_OK, EXIT_FAIL, EXIT_INVALID, EXIT_BUDGET = 0, 1, 2, 3


def fmt(v) -> str:
    """Round-trip text for a CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def header_line(args) -> str | None:
    if args.no_header:
        return None
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    return f"# wildsim {__version__} {args.command} generated {stamp}"


def write_rows(path, columns, rows, header=None):
    buf = io.StringIO()
    if header:
        buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    _emit(path, buf.getvalue())


def write_json(path, obj):
    _emit(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _emit(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)


def resolve_threads(value) -> int:
    if value is None:
        value = os.environ.get("WILDSIM_THREADS")
    if value is None or value == "":
        return os.cpu_count() or 1
    n = int(value)
    if n < 1:
        raise ValueError("--threads must be at least 1")
    return n


def floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _need_seed(args):
    if args.seed is None:
        raise ValueError(f"{args.command} needs --seed (results must be reproducible)")


# commands


def cmd_trees(args):
    from .trees import count_trees, enumerate_trees, sample_tree

    if args.action == "count":
        print(count_trees(args.m, args.n))
    elif args.action == "enumerate":
        trees = enumerate_trees(args.m, args.n, args.cap)
        write_json(args.out, [t.to_json() for t in trees])
    else:
        _need_seed(args)
        rng = np.random.default_rng(args.seed)
        write_json(args.out, [sample_tree(args.m, args.n, rng).to_json() for _ in range(args.draws)])
    return EXIT_OK


def cmd_branching(args):
    from .branching import (closed_law, p_finite_N, p_kolmogorov, redundant_mean_bound,
                            redundant_mean_exact)

    if args.action == "pn":
        if args.finite_n is not None:
            law = p_finite_N(args.m, args.finite_n, args.n_max or 40, args.t, args.step)
        elif args.kolmogorov:
            law = p_kolmogorov(args.m, args.n_max or 40, args.t, args.step)
        else:
            law = closed_law(args.m, args.t, args.n_max)
        write_rows(args.out, ["n", "probability"], enumerate(law.probs), header_line(args))
    else:
        if args.pop is None:
            raise ValueError("branching bound needs --pop N")
        n_max = args.n_max or 40
        bound = redundant_mean_bound(args.m, args.pop, args.t, n_max, args.step)
        exact = redundant_mean_exact(args.m, args.pop, args.t, step=args.step)
        write_rows(args.out, ["m", "N", "t", "n_max", "bound", "exact_mean"],
                   [(args.m, args.pop, args.t, n_max, bound, exact)], header_line(args))
    return EXIT_OK


def _config(args):
    from .config import load_config

    if args.config is None:
        raise ValueError(f"{args.command} needs --config FILE.json")
    return load_config(args.config)


def cmd_solve(args):
    from .laws import DiscreteLaw
    from .wildsum import cauchy_residual_panel, exact_mu_t_discrete, expect_panel, test_panel

    cfg = _config(args)
    if args.action != "exact":  # the exact law involves no sampling
        _need_seed(args)
    if args.t is None:
        raise ValueError("solve needs --t")
    panel = test_panel()
    if args.action == "estimate":
        est = expect_panel(panel, args.t, cfg.kernel, cfg.initial, args.samples, args.seed, args.threads)
        rows = [(name, v, se) for name, (v, se) in est.items()]
        write_rows(args.out, ["f_name", "estimate", "stderr"], rows, header_line(args))
    elif args.action == "residual":
        reps = cauchy_residual_panel(panel, args.t, args.dt, cfg.kernel, cfg.initial,
                                     args.samples, args.seed, args.threads)
        rows = [(r.name, r.t, r.dt, r.lhs, r.lhs_se, r.rhs, r.rhs_se, r.residual, r.stderr) for r in reps]
        write_rows(args.out, ["f_name", "t", "dt", "lhs", "lhs_se", "rhs", "rhs_se", "residual", "stderr"],
                   rows, header_line(args))
    else:
        if not isinstance(cfg.initial, DiscreteLaw):
            raise ValueError("solve exact needs a discrete initial law")
        sol = exact_mu_t_discrete(cfg.initial, cfg.kernel, args.t, args.n_max, method="recursive")
        rows = list(zip(sol.support, sol.probs)) + [("tail", sol.tail)]
        write_rows(args.out, ["value", "probability"], rows, header_line(args))
    return EXIT_OK


def _sim_config(cfg, args):
    from .particles import SimConfig

    cfg.require("N")
    T = cfg.T if cfg.T is not None else args.t
    return SimConfig(N=cfg.N, kernel=cfg.kernel, initial=cfg.initial, T=T, lam=cfg.lam, seed=args.seed)


def cmd_simulate(args):
    from .branching import redundant_mean_bound, redundant_mean_exact
    from .particles import SimConfig, redundant_stats, tagged_law

    cfg = _config(args)
    _need_seed(args)
    if args.t is None:
        raise ValueError("simulate needs --t")
    if args.action == "tagged":
        sim = _sim_config(cfg, args)
        ens = tagged_law(sim, args.t, args.replicas, args.threads)
        write_rows(args.out, ["replica", "value"], enumerate(ens.values), header_line(args))
    else:
        if not args.pops:
            raise ValueError("simulate redundancy needs --pops N1,N2,...")
        rows = []
        for N in args.pops:
            sim = SimConfig(N=N, kernel=cfg.kernel, initial=cfg.initial, T=args.t, lam=cfg.lam, seed=args.seed)
            rep = redundant_stats(sim, args.t, args.replicas, args.threads)
            m = cfg.kernel.m
            rows.append((N, args.t, args.replicas, rep.mean, rep.stderr, rep.tree_fraction,
                         redundant_mean_bound(m, N, args.t, 40), redundant_mean_exact(m, N, args.t)))
        write_rows(args.out, ["N", "t", "replicas", "mean", "stderr", "tree_fraction", "bound", "exact_mean"],
                   rows, header_line(args))
    return EXIT_OK


def cmd_compare(args):
    from .particles import compare_micro_macro

    cfg = _config(args)
    _need_seed(args)
    if args.t is None:
        raise ValueError("compare needs --t")
    res = compare_micro_macro(_sim_config(cfg, args), args.t, args.replicas, args.samples, args.threads)
    write_rows(args.out, ["N", "t", "replicas", "samples", "ks"],
               [(res["N"], res["t"], res["replicas"], res["samples"], res["ks"])], header_line(args))
    return EXIT_OK


def cmd_econo(args):
    from .econo import eta, fixed_point, rate_fit
    from .kernels import WealthKernel
    from .laws import SampleEnsemble

    cfg = _config(args)
    _need_seed(args)
    if not isinstance(cfg.kernel, WealthKernel):
        raise ValueError("econo needs a wealth kernel in the config")
    spec = cfg.kernel.weights
    if args.action == "eta":
        value, se = eta(spec, args.mc_samples, np.random.default_rng(args.seed))
        write_rows(args.out, ["m", "eta", "stderr", "a"],
                   [(spec.m, value, se, (1 - value) / (spec.m - 1))], header_line(args))
    elif args.action == "fixed-point":
        init_seq, fp_seq = np.random.SeedSequence(args.seed).spawn(2)
        init = SampleEnsemble(cfg.initial.sample(np.random.default_rng(init_seq), args.ensemble))
        res = fixed_point(spec, init, args.iterations, args.ensemble, fp_seq)
        print(f"iterations={res.iterations} converged={str(res.converged).lower()} "
              f"mean={res.mean!r} mean_se={res.mean_se!r} "
              f"second_moment={res.second_moment!r} second_moment_se={res.second_moment_se!r}",
              file=sys.stderr)
        write_rows(args.out, ["value"], ((v,) for v in res.ensemble.values), header_line(args))
    else:
        rep = rate_fit(spec, cfg.initial, args.t_grid, args.samples, args.seed, workers=args.threads)
        status = "insufficient_signal" if rep.insufficient_signal else "ok"
        print(f"eta={rep.eta!r} fitted_rate={rep.fitted_rate!r} constant={rep.fitted_constant!r} "
              f"status={status}", file=sys.stderr)
        write_rows(args.out, ["t", "gap", "stderr", "f_name"], rep.gap_curve, header_line(args))
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest

    if args.seed is None:
        raise ValueError("selftest needs --seed")
    ok = run_selftest(args.seed, Path(args.out_dir), args.threads, quick=args.quick)
    return EXIT_OK if ok else EXIT_FAIL


# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wildsim", description="Wild sums, tree expansions and random-matching simulation.")
    p.add_argument("--version", action="version", version=f"wildsim {__version__}")
    p.add_argument("--threads", default=None, help="worker count (default: WILDSIM_THREADS or all cores)")
    p.add_argument("--no-header", action="store_true", help="omit the timestamp comment line in CSV output")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="model description (JSON, see docs/config.md)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output file (default: stdout)")

    t = sub.add_parser("trees", help="count, enumerate or sample ordered trees")
    t.add_argument("action", choices=["count", "enumerate", "sample"])
    t.add_argument("--m", type=int, required=True)
    t.add_argument("--n", type=int, required=True)
    t.add_argument("--draws", type=int, default=1)
    t.add_argument("--cap", type=int, default=10**6)
    common(t, config=False)

    b = sub.add_parser("branching", help="laws of the interaction count")
    b.add_argument("action", choices=["pn", "bound"])
    b.add_argument("--m", type=int, required=True)
    b.add_argument("--t", type=float, required=True)
    how = b.add_mutually_exclusive_group()
    how.add_argument("--closed", action="store_true")
    how.add_argument("--kolmogorov", action="store_true")
    how.add_argument("--finite-n", type=int)
    b.add_argument("--n-max", type=int)
    b.add_argument("--pop", type=int)
    b.add_argument("--step", type=float, default=1e-3)
    common(b, config=False)

    s = sub.add_parser("solve", help="macroscopic law: estimates, residuals, exact laws")
    s.add_argument("action", nargs="?", default="estimate", choices=["estimate", "residual", "exact"])
    s.add_argument("--t", type=float)
    s.add_argument("--dt", type=float, default=1e-2)
    s.add_argument("--samples", type=int, default=10**5)
    s.add_argument("--n-max", type=int, default=12)
    common(s)

    sim = sub.add_parser("simulate", help="N-agent simulation")
    sim.add_argument("action", nargs="?", default="tagged", choices=["tagged", "redundancy"])
    sim.add_argument("--t", type=float)
    sim.add_argument("--replicas", type=int, default=10**4)
    sim.add_argument("--pops", type=ints)
    common(sim)

    c = sub.add_parser("compare", help="KS distance between simulation and macroscopic law")
    c.add_argument("--t", type=float)
    c.add_argument("--replicas", type=int, default=10**4)
    c.add_argument("--samples", type=int, default=10**4)
    common(c)

    e = sub.add_parser("econo", help="wealth-exchange rate, fixed point and convergence")
    e.add_argument("action", choices=["eta", "fixed-point", "rate"])
    e.add_argument("--mc-samples", type=int, default=0)
    e.add_argument("--iterations", type=int, default=50)
    e.add_argument("--ensemble", type=int, default=10**5)
    e.add_argument("--samples", type=int, default=10**5)
    e.add_argument("--t-grid", type=floats, default=[0, 0.5, 1, 2, 3, 4, 6])
    common(e)

    st = sub.add_parser("selftest", help="run the invariant checks and write their results")
    st.add_argument("--seed", type=int, default=None)
    st.add_argument("--out-dir", default="selftest-results")
    st.add_argument("--quick", action="store_true", help="smaller sample sizes")
    return p


HANDLERS = {
    "trees": cmd_trees,
    "branching": cmd_branching,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "econo": cmd_econo,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.threads = resolve_threads(args.threads)
        return HANDLERS[args.command](args)
    except NumericBudgetError as exc:
        print(f"wildsim: numeric budget exceeded: {exc}; lower the size or raise the cap", file=sys.stderr)
        return EXIT_BUDGET
    except BrokenPipeError:
        # reader closed early (e.g. `| head`); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_OK
    except (ValueError, OSError) as exc:
        print(f"wildsim: error: {exc}; see `wildsim {args.command} --help`", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
