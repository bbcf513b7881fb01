"""Command-line entry point: ``weaksep {test,fve,simulate,plv,max-cov}``."""
from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

from .datagrid import load_dataset, save_dataset
from .fpca import fit_marginals, fve
from .plv import load_phase_tensor, plv_dataset, stack_subjects
from .separability import run_test
from .simlab import PAIR_SINGLE, PAIRS_TRIPLE, RejectionTable, SimulationScenario, build_V, \
    max_pd_cov, run_scenario

DEFAULT_SEED = 20240101


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _pk(text):
    try:
        P, K = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected P,K but got {text!r}") from None
    return P, K


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("WEAKSEP_THREADS")
    return int(env) if env else (os.cpu_count() or 1)


def build_parser():
    p = _Parser(prog="weaksep", description="Weak separability test for two-way functional data.")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $WEAKSEP_THREADS or all cores)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="dataset -> TestResult JSON")
    t.add_argument("--input", required=True)
    t.add_argument("--format", choices=("binary", "csv-long"), default="binary")
    t.add_argument("--method", choices=("chi2", "bootstrap"), default="chi2")
    sel = t.add_mutually_exclusive_group()
    sel.add_argument("--pk", type=_pk, help="fixed P,K")
    sel.add_argument("--pk-auto", action="store_true", help="variance-explained rule (default)")
    t.add_argument("--B", type=int, default=1000)
    t.add_argument("--seed", type=int, default=DEFAULT_SEED)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--out")

    f = sub.add_parser("fve", help="dataset -> FveReport JSON")
    f.add_argument("--input", required=True)
    f.add_argument("--format", choices=("binary", "csv-long"), default="binary")
    f.add_argument("--out")

    s = sub.add_parser("simulate", help="scenario JSON -> rejection table CSV")
    s.add_argument("--scenario", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    s.add_argument("--out")

    v = sub.add_parser("plv", help="two phase tensors per subject -> PLV dataset")
    v.add_argument("--pairs", nargs="+", required=True, metavar="A.mwfd:B.mwfd",
                   help="one phase-tensor pair per subject")
    v.add_argument("--out", required=True)

    m = sub.add_parser("max-cov", help="largest PD off-diagonal covariance")
    m.add_argument("--variant", choices=("V1", "V2"), default="V1")
    m.add_argument("--pairs", choices=("single", "triple"), default="single")
    return p


def _emit(text, path):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_test(args, threads):
    data = load_dataset(args.input, args.format)
    P, K = args.pk if args.pk else (None, None)
    res = run_test(data, P, K, method=args.method, B=args.B, seed=args.seed, n_jobs=threads)
    out = res.to_dict()
    out["alpha"] = args.alpha
    out["reject"] = res.p_value < args.alpha
    _emit(json.dumps(out, indent=2) + "\n", args.out)


def _cmd_fve(args, threads):
    fit = fit_marginals(load_dataset(args.input, args.format))
    rep = fve(fit.eig, fit.scores).to_dict()
    rep["eigensystem"] = {"lambda": fit.eig.lam.tolist(), "gamma": fit.eig.gamma.tolist(),
                          "warnings": list(fit.eig.warnings)}
    _emit(json.dumps(rep, indent=2) + "\n", args.out)


def _cmd_simulate(args, threads):
    with open(args.scenario) as fh:
        spec = json.load(fh)
    items = spec["scenarios"] if isinstance(spec, dict) and "scenarios" in spec else \
        (spec if isinstance(spec, list) else [spec])
    table = RejectionTable()
    for item in items:
        if args.seed is not None:
            item = {**item, "seed": args.seed}
        table.rows.extend(run_scenario(SimulationScenario.from_dict(item), n_jobs=threads).rows)
    _emit(table.to_csv(), args.out)


def _cmd_plv(args, threads):
    subjects = []
    for pair in args.pairs:
        a, sep, b = pair.partition(":")
        if not sep:
            raise ValueError(f"expected A:B, got {pair!r}")
        p1, s_axis, t_axis = load_phase_tensor(a)
        p2, s2, t2 = load_phase_tensor(b)
        if s2 != s_axis or t2 != t_axis:
            raise ValueError(f"{pair}: phase tensors are on different grids")
        subjects.append(plv_dataset(p1, p2, s_axis, t_axis))
    save_dataset(stack_subjects(subjects), args.out)


def _cmd_max_cov(args, threads):
    pairs = (PAIR_SINGLE,) if args.pairs == "single" else PAIRS_TRIPLE
    val = max_pd_cov(build_V(args.variant), pairs)
    print(json.dumps({"variant": args.variant, "pairs": args.pairs,
                      "max_cov": val if isinstance(val, float) else list(val)}))


COMMANDS = {"test": _cmd_test, "fve": _cmd_fve, "simulate": _cmd_simulate,
            "plv": _cmd_plv, "max-cov": _cmd_max_cov}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            COMMANDS[args.command](args, _threads(args))
    except Exception as exc:  # runtime failures map to exit code 1
        print(f"weaksep {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
