"""Full-pipeline surrogate run: 50k samples, 4-16x6-1 MLP, 20x20 ensemble,
new test inputs with 100 perturbations each, plus the source decomposition."""

import argparse

from uqnet.config import surrogate_preset
from uqnet.experiments import run_surrogate_pipeline


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--n", type=int, default=50000)
    p.add_argument("--inputs", type=int, default=10)
    p.add_argument("--decompose", type=int, default=3, help="number of inputs to decompose")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/surrogate")
    args = p.parse_args()

    cfg = surrogate_preset()
    cfg.seed = args.seed
    cfg.dataset.n = args.n
    summary, _ = run_surrogate_pipeline(cfg, args.inputs, args.decompose, args.workers, args.out,
                                        echo=lambda s: print(s, flush=True))
    print(f"total {summary['total_seconds'] / 60:.1f} min")


if __name__ == "__main__":
    main()
