"""
EPNet - lightweight image super-resolution
Command line launcher
"""
import sys

from cli.epnet_cli import main

if __name__ == "__main__":
    sys.exit(main())
