import sys

from gauge_arb.cli import main

if __name__ == "__main__":
    sys.exit(main())
