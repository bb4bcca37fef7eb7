#!/usr/bin/env python3
"""
etc_stab - Root Launcher Script

This script provides a convenient way to run etc-stab directly from a cloned
repository without installing it. It checks that the numerical dependencies
are importable and then calls the command-line interface of the `etcstab`
package.
"""
import sys

if __name__ == '__main__':
    try:
        import numpy
        import scipy
        import networkx
    except ImportError as e:
        print(f"Error: A required dependency is not installed: {e.name}", file=sys.stderr)
        print("Please install the required packages by running:", file=sys.stderr)
        print("pip install numpy scipy networkx", file=sys.stderr)
        sys.exit(1)

    from etcstab.cli import cli
    cli()
