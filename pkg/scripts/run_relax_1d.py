"""Relaxation with one parameter: variants, tau and h refinement.

Usage: python scripts/run_relax_1d.py [--out DIR] [--n-div N] [--set key=value ...]
"""
import sys

from llgrb.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment", "relax-1d", *sys.argv[1:]]))
