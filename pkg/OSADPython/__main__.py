# -*- coding: utf-8 -*-
"""
Entry point for `python -m OSADPython`.
"""

import sys

from OSADPython.cli import main

sys.exit(main())
