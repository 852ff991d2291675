"""Timing comparison of the numpy and numba kernel backends.

Runs the grid log-sum-exp and the finite-volume step on default-sized
problems, reports per-call wall time for each backend, and checks that
the two agree. Usage::

    python benchmarks/bench_kernels.py [--size 64] [--repeats 20]
"""

import argparse
import time

import numpy as np

from sparsebary import _kernels


def _time(fn, args, repeats: int) -> float:
    fn(*args)  # warm-up; also triggers jit compilation on the numba path
    tick = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - tick) / repeats


def bench_lse(size: int, repeats: int, rng: np.random.Generator) -> list[str]:
    px = 12.0 / size
    coords = (np.arange(size) + 0.5) * px
    gaps = (coords[:, None] - coords[None, :]) ** 2
    lam = 2.0 * px ** 2
    gibbs = np.exp(-gaps / lam)
    pot = lam * np.log(rng.random((size, size)))
    pot[rng.random((size, size)) < 0.3] = -np.inf

    rows = []
    args = (pot, gaps, gaps, gibbs, gibbs, lam)
    t_np = _time(_kernels.lse_grid_numpy, args, repeats)
    rows.append(f"lse_grid   numpy  {size}x{size}  {t_np * 1e3:8.3f} ms")
    if _kernels.lse_grid_numba is not None:
        t_nb = _time(_kernels.lse_grid_numba, args, repeats)
        rows.append(f"lse_grid   numba  {size}x{size}  {t_nb * 1e3:8.3f} ms"
                    f"  ({t_np / t_nb:.1f}x)")
        a = _kernels.lse_grid_numpy(*args)
        b = _kernels.lse_grid_numba(*args)
        mask = np.isfinite(a)
        assert np.array_equal(mask, np.isfinite(b))
        assert np.abs(a[mask] - b[mask]).max() < 1e-12
    return rows


def bench_burgers(size: int, repeats: int,
                  rng: np.random.Generator) -> list[str]:
    u = rng.random((size, size))
    dx = 12.0 / size
    dt = 0.1 * dx * dx  # stays diffusion-stable for the benchmark values
    args = (u, dt, dx, 0.5, True)

    rows = []
    t_np = _time(_kernels.burgers_step_numpy, args, repeats)
    rows.append(f"fv_step    numpy  {size}x{size}  {t_np * 1e3:8.3f} ms")
    if _kernels.burgers_step_numba is not None:
        t_nb = _time(_kernels.burgers_step_numba, args, repeats)
        rows.append(f"fv_step    numba  {size}x{size}  {t_nb * 1e3:8.3f} ms"
                    f"  ({t_np / t_nb:.1f}x)")
        a = _kernels.burgers_step_numpy(*args)
        b = _kernels.burgers_step_numba(*args)
        assert np.abs(a - b).max() < 1e-14
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(42)
    print(f"selected backend: {_kernels.BACKEND}")
    for line in bench_lse(args.size, args.repeats, rng):
        print(line)
    for line in bench_burgers(args.size, args.repeats, rng):
        print(line)


if __name__ == "__main__":
    main()
