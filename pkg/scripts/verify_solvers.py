#!/usr/bin/env python3
"""Cross-check the price coordination against the monolithic solver."""

import os
import sys

from shipems.cli import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

if __name__ == "__main__":
    sys.exit(main([
        "verify",
        "--config", os.path.join(ROOT, "configs", "default.json"),
        "--out", os.path.join(ROOT, "out", "verify"),
        *sys.argv[1:],
    ]))
