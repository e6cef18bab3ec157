#!/usr/bin/env python3
"""Diagnose an external codebook dump from the command line.

Example:
    python scripts/diagnose_dump.py artifacts/reproduce_fig2/baseline_d2/seed0/codebook.csv \
        --embeddings artifacts/reproduce_fig2/baseline_d2/seed0/embeddings.csv
"""

import sys

from shrinklab.cli import main

if __name__ == "__main__":
    sys.exit(main(["diagnose", *sys.argv[1:]]))
