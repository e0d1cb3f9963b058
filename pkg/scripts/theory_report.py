"""
Evaluate the asymptotic optimal bandwidths for a simulation scenario.

Equivalent to `deconvmode theory ...`; all flags are forwarded.
"""

import sys

from deconvmode.cli import main

if __name__ == "__main__":
    sys.exit(main(["theory", *sys.argv[1:]]))
