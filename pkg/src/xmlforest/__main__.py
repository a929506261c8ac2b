#!/usr/bin/env python3
"""Allows running the package with: python -m xmlforest"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
