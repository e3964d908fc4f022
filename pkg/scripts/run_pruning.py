"""Run the pruning suite; see configs/pruning.json for the default settings."""
import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("pruning"))
