#!/usr/bin/env python3
"""
Runner script for brwcap.
Provides a convenient way to launch the command line tool from a checkout.
"""

import sys
import os

if __name__ == "__main__":
    # Add project root to path
    sys.path.insert(0, os.path.abspath(os.path.dirname(__file__)))

    from brwcap.main import main
    sys.exit(main())
