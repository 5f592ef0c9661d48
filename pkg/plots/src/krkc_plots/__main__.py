"""Allow ``python -m krkc_plots`` to behave like the ``krkc-plot`` script."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
