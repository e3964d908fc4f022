"""Run the worstcase suite; see configs/worstcase.json for the default settings."""
import sys

from _common import main

if __name__ == "__main__":
    sys.exit(main("worstcase"))
