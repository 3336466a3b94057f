"""Singular value decay for s = 1, 10, 100.

Usage: python scripts/run_relax_nd.py [--out DIR] [--n-div N] [--set key=value ...]
"""
import sys

from llgrb.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment", "relax-nd", *sys.argv[1:]]))
