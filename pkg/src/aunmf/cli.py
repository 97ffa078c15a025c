"""Benchmark driver: run factorizations, print modeled costs, sweep configs.

Exit codes: 0 success, 1 usage error (bad flags, refused request), 2 runtime
or convergence failure (missing input file, kernel breakdown).

The `run` command writes two report files into --report-dir:
  trace.csv       one `iter,rel_error` row per recorded error (row 0 is the
                  error of the initial factors)
  breakdown.json  exactly the keys mm, luc, gram, allgather, reducescatter,
                  allreduce (wall seconds summed over iterations) plus
                  counterWords and counterMessages
`cost` prints the model without running anything; `sweep` repeats `run`
along one axis (ranks, k, or grid) and emits one CSV row per configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from aunmf import costmodel, datasets, distributed, sequential
from aunmf.distributed import ProcessorGrid, make_grid
from aunmf.sequential import TIME_CATEGORIES, NmfConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

# Default machine parameters for modeled seconds: ~1 us latency, ~1 ns/word,
# ~100 Gflop/s.  Purely illustrative; override with --alpha/--beta/--gamma.
DEFAULT_ALPHA = 1e-6
DEFAULT_BETA = 1e-9
DEFAULT_GAMMA = 1e-11

_BUILTIN_SWEEP_SIZES = (256, 1024, 4096)
_BUILTIN_SWEEP_RANKS = (4, 16, 64)
_BUILTIN_SWEEP_K = 16


class UsageError(Exception):
    """Flag-level problem; main() turns this into exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _parse_grid(text: str):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise UsageError(f"grid must look like RxC, got {text!r}")
    try:
        p_r, p_c = int(parts[0]), int(parts[1])
    except ValueError:
        raise UsageError(f"grid must look like RxC, got {text!r}") from None
    if p_r < 1 or p_c < 1:
        raise UsageError(f"grid dimensions must be >= 1, got {text!r}")
    return p_r, p_c


def _effective_ranks(args) -> int:
    ranks = args.ranks
    if ranks < 1:
        raise UsageError(f"--ranks must be >= 1, got {ranks}")
    cap = os.environ.get("FAUN_THREADS")
    if cap is not None:
        try:
            cap = int(cap)
        except ValueError:
            raise UsageError(f"FAUN_THREADS must be an integer, got {cap!r}") from None
        if ranks > cap:
            raise UsageError(f"--ranks {ranks} exceeds FAUN_THREADS={cap}")
    return ranks


def _load_matrix(args):
    if args.input is not None:
        if not os.path.exists(args.input):
            # runtime failure, not a flag problem: the flag was well-formed
            raise FileNotFoundError(f"input file not found: {args.input}")
        return datasets.read_matrix_market(args.input)
    spec = args.synthetic
    kind = spec[0]
    if kind == "dense-lowrank":
        if len(spec) != 4:
            raise UsageError("--synthetic dense-lowrank needs M N R")
        try:
            m, n, r = (int(s) for s in spec[1:])
        except ValueError:
            raise UsageError(f"bad dense-lowrank sizes {spec[1:]}") from None
        return datasets.gen_dense_lowrank(m, n, r, args.seed)
    if kind == "sparse-uniform":
        if len(spec) != 4:
            raise UsageError("--synthetic sparse-uniform needs M N DENSITY")
        try:
            m, n = int(spec[1]), int(spec[2])
            density = float(spec[3])
        except ValueError:
            raise UsageError(f"bad sparse-uniform parameters {spec[1:]}") from None
        return datasets.gen_sparse_uniform(m, n, density, args.seed)
    raise UsageError(f"unknown synthetic kind {kind!r} "
                     "(choose dense-lowrank or sparse-uniform)")


def _memory_guard(impl, m, n, k, ranks, grid_pair, algo, limit_gb) -> None:
    """Refuse requests whose working set clearly exceeds the memory budget.

    All ranks live in one process, so the estimate is the sum of per-rank
    model memory plus one copy of A.
    """
    model = costmodel.luc_flop_model(algo)
    if impl == "seq":
        total_words = costmodel.per_iter_cost("faun", m, n, k, (1, 1), model).memory_words
    else:
        if impl == "faun":
            if grid_pair is None:
                auto = make_grid(m, n, ranks)
                grid_pair = (auto.p_r, auto.p_c)
            grid = grid_pair
        else:
            grid = (ranks, 1)
        per_rank = costmodel.per_iter_cost(impl, m, n, k, grid, model).memory_words
        total_words = m * n + ranks * per_rank
    est_bytes = 8.0 * total_words
    if est_bytes > limit_gb * 2**30:
        raise UsageError(
            f"refusing: estimated working set {est_bytes / 2**30:.2f} GiB "
            f"({total_words:.0f} words) exceeds --memory-limit-gb {limit_gb}"
        )


def _execute(A, impl, algo, k, iters, seed, tolerance, ranks, grid_pair):
    """Run one factorization; returns (W, H, trace, counter snapshot|None)."""
    config = NmfConfig(k=k, max_iters=iters, algo=algo, seed=seed, tolerance=tolerance)
    if impl == "seq":
        W, H, trace = sequential.aunmf_run(A, config)
        return W, H, trace, None
    padded, (orig_m, orig_n) = datasets.pad_to_grid(A, ranks)
    if impl == "faun":
        grid = ProcessorGrid(*grid_pair) if grid_pair else make_grid(orig_m, orig_n, ranks)
        blocks = distributed.distribute(padded, grid, "twoD", (orig_m, orig_n))
        result = distributed.mpifaun_run(blocks, config)
    else:
        grid = ProcessorGrid(ranks, 1)
        blocks = distributed.distribute(padded, grid, "naive", (orig_m, orig_n))
        result = distributed.naive_run(blocks, config)
    W, H = distributed.gather_factors(
        result.w_blocks, result.h_blocks, grid, blocks.mode, orig_m, orig_n)
    return W, H, result.trace, result.counters[0]


def _write_trace(path, rel_errors) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("iter,rel_error\n")
        for i, err in enumerate(rel_errors):
            fh.write(f"{i},{err:.17g}\n")


def _write_breakdown(path, trace, counters) -> None:
    report = {cat: float(sum(trace.seconds[cat])) for cat in TIME_CATEGORIES}
    if counters is None:
        report["counterWords"] = 0.0
        report["counterMessages"] = 0
    else:
        report["counterWords"] = float(sum(counters["words"].values()))
        report["counterMessages"] = int(sum(counters["messages"].values()))
    with open(path, "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def cmd_run(args) -> int:
    ranks = _effective_ranks(args)
    if args.impl == "seq" and ranks != 1:
        raise UsageError("--impl seq runs on a single rank; drop --ranks")
    grid_pair = None
    if args.grid is not None:
        if args.impl != "faun":
            raise UsageError("--grid applies to --impl faun only")
        grid_pair = _parse_grid(args.grid)
        if grid_pair[0] * grid_pair[1] != ranks:
            raise UsageError(
                f"grid {args.grid} has {grid_pair[0] * grid_pair[1]} ranks, "
                f"--ranks says {ranks}")
    A = _load_matrix(args)
    m, n = A.shape
    if args.k > min(m, n):
        raise UsageError(f"-k {args.k} exceeds min(m, n) = {min(m, n)}")
    _memory_guard(args.impl, m, n, args.k, ranks, grid_pair, args.algo,
                  args.memory_limit_gb)

    W, H, trace, counters = _execute(
        A, args.impl, args.algo, args.k, args.iters, args.seed,
        args.tolerance, ranks, grid_pair)

    os.makedirs(args.report_dir, exist_ok=True)
    trace_path = os.path.join(args.report_dir, "trace.csv")
    breakdown_path = os.path.join(args.report_dir, "breakdown.json")
    _write_trace(trace_path, trace.rel_errors)
    _write_breakdown(breakdown_path, trace, counters)
    written = [trace_path, breakdown_path]
    if args.output is not None:
        written.extend(datasets.write_factors(W, H, args.output, args.output_format))
    print(f"final relative error: {trace.rel_errors[-1]:.17g}")
    print("wrote: " + " ".join(written))
    return EXIT_OK


def _cost_rows(m, n, k, p, grid_pair, algos):
    grid = grid_pair or costmodel.optimize_grid_exhaustive(m, n, k, p)
    rows = []
    for impl in ("naive", "faun"):
        impl_grid = grid if impl == "faun" else (p, 1)
        for algo in algos:
            rep = costmodel.per_iter_cost(impl, m, n, k, impl_grid,
                                          costmodel.luc_flop_model(algo))
            rows.append(rep)
    return grid, rows


def cmd_cost(args) -> int:
    if args.builtin_sweep:
        print("m,n,k,p,p_r,p_c,words,lowerBound,ratio")
        for m in _BUILTIN_SWEEP_SIZES:
            for n in _BUILTIN_SWEEP_SIZES:
                for p in _BUILTIN_SWEEP_RANKS:
                    k = _BUILTIN_SWEEP_K
                    bound = costmodel.bandwidth_lower_bound(m, n, k, p)
                    if bound is None:
                        continue
                    grid = costmodel.optimize_grid_exhaustive(m, n, k, p)
                    rep = costmodel.per_iter_cost(
                        "faun", m, n, k, grid, costmodel.luc_flop_model("mu"))
                    print(f"{m},{n},{k},{p},{grid[0]},{grid[1]},"
                          f"{rep.words:.17g},{bound:.17g},{rep.words / bound:.6g}")
        return EXIT_OK

    for name in ("m", "n", "k", "p"):
        if getattr(args, name) is None:
            raise UsageError(f"cost needs -{name} (or --builtin-sweep)")
    grid_pair = _parse_grid(args.grid) if args.grid is not None else None
    if grid_pair is not None and grid_pair[0] * grid_pair[1] != args.p:
        raise UsageError(f"grid {args.grid} does not use p = {args.p} ranks")
    algos = sequential.ALGORITHMS if args.algo == "all" else (args.algo,)
    grid, rows = _cost_rows(args.m, args.n, args.k, args.p, grid_pair, algos)

    bound = costmodel.bandwidth_lower_bound(args.m, args.n, args.k, args.p)
    print(f"optimal grid: {grid[0]}x{grid[1]}")
    print("lower bound (words): " + ("n/a" if bound is None else f"{bound:.17g}"))
    print("impl,algo,p_r,p_c,flops,words,messages,memoryWords,modeledSeconds,"
          "flopsSurrogate,ratio")
    records = []
    for rep in rows:
        pr, pc = (grid if rep.impl == "faun" else (args.p, 1))
        seconds = rep.modeled_seconds(args.alpha, args.beta, args.gamma)
        ratio = ""
        if rep.impl == "faun" and bound is not None:
            ratio = f"{rep.words / bound:.6g}"
        print(f"{rep.impl},{rep.algo},{pr},{pc},{rep.flops:.17g},{rep.words:.17g},"
              f"{rep.messages},{rep.memory_words:.17g},{seconds:.17g},"
              f"{str(rep.flops_surrogate).lower()},{ratio}")
        records.append({
            "impl": rep.impl, "algo": rep.algo, "grid": [pr, pc],
            "flops": rep.flops, "words": rep.words, "messages": rep.messages,
            "memoryWords": rep.memory_words, "modeledSeconds": seconds,
            "flopsSurrogate": rep.flops_surrogate,
            "breakdown": rep.breakdown, "notes": list(rep.notes),
        })
    for note in {note for rep in rows for note in rep.notes}:
        print(f"note: {note}")
    if args.json is not None:
        payload = {
            "m": args.m, "n": args.n, "k": args.k, "p": args.p,
            "optimalGrid": list(grid),
            "lowerBoundWords": bound,
            "reports": records,
        }
        with open(args.json, "w", encoding="ascii") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


_SWEEP_HEADER = ("axis,value,impl,algo,ranks,grid,k,iters,"
                 + ",".join(TIME_CATEGORIES)
                 + ",agWords,rsWords,arWords,words,messages,"
                 "modeledFlopsPerIter,finalRelError")


def _sweep_configs(args, ranks):
    """Yield (value label, ranks, grid pair or None, k) per configuration."""
    axis = args.axis
    if axis == "ranks":
        values = args.values or ["1", "2", "4"]
        for v in values:
            try:
                p = int(v)
            except ValueError:
                raise UsageError(f"ranks sweep values must be integers, got {v!r}") from None
            yield v, p, None, args.k
    elif axis == "k":
        values = args.values or ["2", "4", "8"]
        for v in values:
            try:
                k = int(v)
            except ValueError:
                raise UsageError(f"k sweep values must be integers, got {v!r}") from None
            yield v, ranks, None, k
    else:
        if args.impl != "faun":
            raise UsageError("grid sweep requires --impl faun")
        if args.values:
            pairs = [_parse_grid(v) for v in args.values]
        else:
            pairs = costmodel.divisor_pairs(ranks)
        for pair in pairs:
            if pair[0] * pair[1] != ranks:
                raise UsageError(
                    f"grid {pair[0]}x{pair[1]} does not use --ranks {ranks}")
            yield f"{pair[0]}x{pair[1]}", ranks, pair, args.k


def cmd_sweep(args) -> int:
    ranks = _effective_ranks(args)
    A = _load_matrix(args)
    m, n = A.shape
    lines = [_SWEEP_HEADER]
    for value, p, grid_pair, k in _sweep_configs(args, ranks):
        if k > min(m, n):
            raise UsageError(f"k {k} exceeds min(m, n) = {min(m, n)}")
        if grid_pair is not None:
            grid = grid_pair
        elif args.impl == "naive":
            grid = (p, 1)
        else:
            auto = make_grid(m, n, p)
            grid = (auto.p_r, auto.p_c)
        _memory_guard(args.impl, m, n, k, p, grid if args.impl == "faun" else None,
                      args.algo, args.memory_limit_gb)
        W, H, trace, counters = _execute(
            A, args.impl, args.algo, k, args.iters, args.seed, None, p,
            grid if args.impl == "faun" else None)
        pad_m, pad_n = m + (-m) % p, n + (-n) % p
        rep = costmodel.per_iter_cost(args.impl, pad_m, pad_n, k, grid,
                                      costmodel.luc_flop_model(args.algo))
        words = counters["words"]
        totals = trace.totals()
        secs = ",".join(f"{totals[cat]:.6g}" for cat in TIME_CATEGORIES)
        lines.append(
            f"{args.axis},{value},{args.impl},{args.algo},{p},"
            f"{grid[0]}x{grid[1]},{k},{args.iters},{secs},"
            f"{words['allgather']:.17g},{words['reducescatter']:.17g},"
            f"{words['allreduce']:.17g},"
            f"{sum(words.values()):.17g},{sum(counters['messages'].values())},"
            f"{rep.flops:.17g},{trace.rel_errors[-1]:.17g}")
    text = "\n".join(lines) + "\n"
    if args.report is not None:
        with open(args.report, "w", encoding="ascii") as fh:
            fh.write(text)
        print(f"wrote: {args.report}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_problem_flags(p: argparse.ArgumentParser, *, impls) -> None:
    p.add_argument("--impl", choices=impls, default=impls[0])
    p.add_argument("--algo", choices=sequential.ALGORITHMS, default="bpp")
    p.add_argument("-k", type=int, required=True, help="factorization rank")
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--ranks", type=int, default=1)
    p.add_argument("--grid", help="processor grid RxC (default: auto)")
    p.add_argument("--seed", type=int, default=0)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="Matrix Market file")
    src.add_argument("--synthetic", nargs="+", metavar="ARG",
                     help="dense-lowrank M N R | sparse-uniform M N DENSITY")
    p.add_argument("--memory-limit-gb", type=float, default=4.0)


def build_parser() -> _Parser:
    parser = _Parser(prog="nmfbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one factorization and write reports")
    _add_problem_flags(run, impls=("seq", "naive", "faun"))
    run.add_argument("--tolerance", type=float, default=None,
                     help="stop when the error improvement drops below this")
    run.add_argument("--report-dir", default=".",
                     help="where trace.csv and breakdown.json go")
    run.add_argument("--output", default=None, help="directory for W/H factors")
    run.add_argument("--output-format", choices=("matrixmarket", "csv"),
                     default="matrixmarket")
    run.set_defaults(func=cmd_run)

    cost = sub.add_parser("cost", help="print modeled per-iteration costs")
    cost.add_argument("-m", type=int, default=None)
    cost.add_argument("-n", type=int, default=None)
    cost.add_argument("-k", type=int, default=None)
    cost.add_argument("-p", type=int, default=None)
    cost.add_argument("--algo", choices=sequential.ALGORITHMS + ("all",),
                      default="all")
    cost.add_argument("--grid", help="override the optimal grid, RxC")
    cost.add_argument("--alpha", type=float, default=DEFAULT_ALPHA,
                      help="seconds per message")
    cost.add_argument("--beta", type=float, default=DEFAULT_BETA,
                      help="seconds per word")
    cost.add_argument("--gamma", type=float, default=DEFAULT_GAMMA,
                      help="seconds per flop")
    cost.add_argument("--json", default=None, help="also write a JSON report")
    cost.add_argument("--builtin-sweep", action="store_true",
                      help="print the words-vs-lower-bound table over a "
                           "built-in (m, n, p) sweep")
    cost.set_defaults(func=cmd_cost)

    sweep = sub.add_parser("sweep", help="run along one axis, one CSV row each")
    sweep.add_argument("--axis", choices=("ranks", "k", "grid"), required=True)
    sweep.add_argument("--values", nargs="+", default=None,
                       help="axis values (ranks/k: integers; grid: RxC)")
    _add_problem_flags(sweep, impls=("faun", "naive"))
    sweep.add_argument("--report", default=None, help="CSV output path")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"nmfbench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"nmfbench: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"nmfbench: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except RuntimeError as exc:
        print(f"nmfbench: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
