"""Switching runs: final m_z histogram and per-time diagnostics.

Usage: python scripts/run_switching.py [--out DIR] [--n-div N] [--set key=value ...]
"""
import sys

from llgrb.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment", "switching", *sys.argv[1:]]))
