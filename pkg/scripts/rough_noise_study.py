"""
Strong-rate study with rough noise profiles.

Runs the 1D converge experiment with the single profile
``series(K, s) = sum_{k<=K} k**-s sin(k pi x)`` for several decay exponents
``s`` and prints the fitted slopes. Smaller ``s`` means rougher noise.

    python scripts/rough_noise_study.py [--s 1.5 1.0 0.75] [--K 256]
"""
import argparse
import warnings

from smrlab.config import NoiseSpec, default_config
from smrlab.experiments import run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--s", type=float, nargs="+", default=[1.5, 1.0, 0.75])
    ap.add_argument("--K", type=int, default=256)
    args = ap.parse_args(argv)
    warnings.simplefilter("ignore", RuntimeWarning)
    print("s      " + "  ".join(f"{n:>16s}" for n in ("conv1", "conv2 alpha=1/4", "conv2 alpha=0")))
    for s in args.s:
        cfg = default_config("converge", noise=NoiseSpec(profiles=(f"series({args.K},{s})",)))
        res = run(cfg)
        vals = "  ".join(f"{c.value:16.4f}" for c in res.checks)
        print(f"{s:<6g} {vals}")


if __name__ == "__main__":
    main()
