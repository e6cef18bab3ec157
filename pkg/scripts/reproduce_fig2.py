#!/usr/bin/env python3
"""Run the bundled baseline-vs-deferred comparison and print the seed means.

Equivalent to `shrinklab run reproduce_fig2`; writes the artifact tree under
artifacts/reproduce_fig2 (override with --out-dir).
"""

import sys

from shrinklab.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "reproduce_fig2", *sys.argv[1:]]))
