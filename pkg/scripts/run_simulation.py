"""
Run the Monte-Carlo ISE study described by a simulation config.

Equivalent to `deconvmode simulate ...`; all flags are forwarded.
"""

import sys

from deconvmode.cli import main

if __name__ == "__main__":
    sys.exit(main(["simulate", *sys.argv[1:]]))
