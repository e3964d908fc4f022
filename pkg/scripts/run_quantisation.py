"""Run the quantisation suite; see configs/quantisation.json for the default settings."""
import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("quantisation"))
