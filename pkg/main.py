import sys

from hric_iab_lab.harness.cli import main

if __name__ == "__main__":
    sys.exit(main())
