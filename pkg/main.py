"""
Main entry point for the Layout4D command line.
"""

import sys

from layout4d.cli import main

if __name__ == "__main__":
    sys.exit(main())
