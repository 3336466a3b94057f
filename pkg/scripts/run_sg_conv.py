"""Sparse-grid RBP convergence for two basis tolerances.

Usage: python scripts/run_sg_conv.py [--out DIR] [--n-div N] [--set key=value ...]
"""
import sys

from llgrb.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment", "sg-conv", *sys.argv[1:]]))
