"""Run the synthetic color ablation for several seeds and print median best accuracies.

    python scripts/color_ablation.py --delta 30 --modes rgb,grayscale,mixed --seeds 0,1,2 --out runs/abl30
"""
import argparse
import os
import time

from fimcb.experiment import AblationProtocol, median_best, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--delta", type=float, default=30.0)
    ap.add_argument("--modes", default="rgb,grayscale")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--n-per-class", type=int, default=2500)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--parallel", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    protocol = AblationProtocol(chroma_delta=args.delta, modes=tuple(args.modes.split(",")),
                                n_per_class=args.n_per_class, max_epochs=args.epochs)
    runs = []
    for seed in (int(s) for s in args.seeds.split(",")):
        t0 = time.time()
        run = run_ablation(protocol, seed, os.path.join(args.out, f"seed{seed}"), args.parallel)
        runs.append(run)
        accs = "  ".join(f"{m}={run.best(m):.4f}" for m in protocol.modes)
        print(f"seed {seed}: {accs}  ({time.time() - t0:.0f}s)", flush=True)
    print("median: " + "  ".join(f"{m}={median_best(runs, m):.4f}" for m in protocol.modes))


if __name__ == "__main__":
    main()
