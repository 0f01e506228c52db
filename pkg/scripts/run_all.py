"""Run every subcommand on a config, then build the report."""

import argparse
import sys

from perciso.cli import run

COMMANDS = ("gen", "cluster", "iso", "spectrum", "kernel", "walk", "channels", "renorm", "verify")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/default.ini")
    ap.add_argument("--out", default="out")
    ap.add_argument("--workers", default="1")
    args = ap.parse_args()
    status = 0
    for cmd in COMMANDS:
        code = run([cmd, "--config", args.config, "--out", args.out, "--workers", args.workers])
        print(f"{cmd:9s} exit {code}")
        status = max(status, code)
    status = max(status, run(["report", "--config", args.config, "--out", args.out]))
    return status


if __name__ == "__main__":
    sys.exit(main())
