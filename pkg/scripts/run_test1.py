#!/usr/bin/env python3
"""Run the two-circle experiment and leave a complete output directory.

Example:
    python scripts/run_test1.py --epsilon 0.08 --tol 0.1 --t-end 0.05 -o out/test1
"""

import argparse

from spinodal import runner


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon", type=float, default=0.08)
    ap.add_argument("--tol", type=float, default=0.1)
    ap.add_argument("--t-end", type=float, default=0.05)
    ap.add_argument("--preset", default="test1",
                    choices=["test1", "test2", "test3", "manufactured"])
    ap.add_argument("-o", "--output", default="out/test1")
    ap.add_argument("--vtk", action="store_true")
    args = ap.parse_args()

    cfg = runner.RunConfig(
        preset=args.preset, epsilon=args.epsilon, tol=args.tol,
        t_end=args.t_end, dt_init=3e-5, dt_max=5e-3, temporal_rtol=1e-3,
        snapshot_every_blocks=1, output_dir=args.output,
    )
    result = runner.run_from_config(cfg, vtk=args.vtk)
    accepted = [r for r in result.records if r.action == "accept+coarsen"]
    print(f"finished at t={result.state.t:g} with {len(accepted)} accepted blocks, "
          f"{result.mesh.n_elements} elements")


if __name__ == "__main__":
    main()
