"""Synthesize episodes, identify object physics and PD gains, and compare with the truth.

Runs through the command-line entry point so every step leaves a manifest.
"""
import argparse
from pathlib import Path

import yaml

from twin_ident.cli import main as cli


def run(*argv) -> None:
    code = cli([str(a) for a in argv])
    if code != 0:
        raise SystemExit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="demo_identify")
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--noise", type=float, default=0.0, help="pose noise, RMS metres")
    ap.add_argument("--particles", type=int, default=32)
    ap.add_argument("--iterations", type=int, default=150)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "config.yaml"
    cfg.write_text(yaml.safe_dump({
        "seed": args.seed,
        "threads": args.threads,
        "swarm": {"particles": args.particles, "iterations": args.iterations},
        "synth": {"episodes": args.episodes, "noise": {"translation": args.noise}},
    }))
    run("synth", "--config", cfg, "--out-dir", out / "data")
    run("identify-object", out / "data" / "episodes", "--config", cfg, "--out-dir", out / "object")
    run("identify-robot", out / "data" / "episodes", "--config", cfg, "--out-dir", out / "robot")
    truth = yaml.safe_load((out / "data" / "episodes" / "ep_000" / "ground_truth.yaml").read_text())
    print("ground truth:", truth)


if __name__ == "__main__":
    main()
