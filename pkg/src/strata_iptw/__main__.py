"""CLI entry point for strata-iptw.

Allows running the package as a module:
    python -m strata_iptw
"""

from strata_iptw.cli import main

if __name__ == "__main__":
    main()
