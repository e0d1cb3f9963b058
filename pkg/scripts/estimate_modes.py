"""
Trace mode curves of p(y|x) for a w,y CSV.

Equivalent to `deconvmode estimate ...`; all flags are forwarded.
"""

import sys

from deconvmode.cli import main

if __name__ == "__main__":
    sys.exit(main(["estimate", *sys.argv[1:]]))
