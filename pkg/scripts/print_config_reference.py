#!/usr/bin/env python3
"""Print the generated reference of all configuration keys and defaults."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from mracsim import config_reference

if __name__ == "__main__":
    print(config_reference(), end="")
