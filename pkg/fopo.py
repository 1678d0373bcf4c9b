"""Entry point: python fopo.py <command> [flags] (see foresight/QUICK_REFERENCE.md)."""

import sys

from foresight.cli import main

if __name__ == "__main__":
    sys.exit(main())
