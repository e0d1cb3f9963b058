"""
Select (h1, h2) for a w,y CSV by CV-SIMEX, naive CV or the normal reference rule.

Equivalent to `deconvmode bandwidth ...`; all flags are forwarded.
"""

import sys

from deconvmode.cli import main

if __name__ == "__main__":
    sys.exit(main(["bandwidth", *sys.argv[1:]]))
