#!/usr/bin/env python3
"""Run the default pulsed-load scenario and write CSV logs to out/run."""

import os
import sys

from shipems.cli import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

if __name__ == "__main__":
    sys.exit(main([
        "run",
        "--config", os.path.join(ROOT, "configs", "default.json"),
        "--out", os.path.join(ROOT, "out", "run"),
        *sys.argv[1:],
    ]))
