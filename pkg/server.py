#!/usr/bin/env python3
"""Run the server from a checkout without installing it."""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from mcp_server_magnetostatics import main

if __name__ == "__main__":
    main()
