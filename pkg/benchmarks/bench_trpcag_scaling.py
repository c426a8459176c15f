import argparse

from config import parse_int_list
from benchmarks.performance_test import run_benchmark


def main(argv=None):
    parser = argparse.ArgumentParser(description="Benchmark per-iteration time of the robust solver.")
    parser.add_argument("--n-values", type=parse_int_list, default=(200, 400, 800), help="Sizes of the growing mode")
    parser.add_argument("--k", type=int, default=20, help="Basis size per mode")
    parser.add_argument("--m", type=int, default=500, help="Size of the fixed mode")
    parser.add_argument("--iterations", type=int, default=10, help="Iterations timed per size")
    parser.add_argument("--out", type=str, default=None, help="Optional CSV for the timing table")
    args = parser.parse_args(argv)

    result = run_benchmark(args.n_values, args.k, args.m, args.iterations)
    for row in result["table"].itertuples():
        print(f"n={row.n}: {row.per_iteration_seconds:.6f} seconds per iteration")
    print(f"fit: time = {result['slope']:.3g} n + {result['intercept']:.3g}  (R^2 = {result['r_squared']:.4f})")
    print(f"time ratio of the two largest sizes: {result['last_ratio']:.3f}")
    if args.out:
        result["table"].to_csv(args.out, index=False)
    return result


if __name__ == "__main__":
    main()
