"""
python -m multilevel_qi
"""

import sys

from multilevel_qi.main import main

sys.exit(main())
