#!/usr/bin/env python3
"""
PDE-ICL launcher

Runs `pdeicl run` from a source checkout without installing the package.
"""

import sys
from pathlib import Path

# prefer the checkout over an installed copy
pkg_root = Path(__file__).parent
if (pkg_root / "pdeicl").exists():
    sys.path.insert(0, str(pkg_root))


def main():
    try:
        from pdeicl.cli import main as cli_main
    except ImportError as e:
        print(f"❌ import error: {e}", file=sys.stderr)
        print("💡 install the dependencies first: pip install -r requirements.txt", file=sys.stderr)
        sys.exit(1)

    sys.exit(cli_main(["run", *sys.argv[1:]]))


if __name__ == "__main__":
    main()
