"""Entry point for ``python3 -m fedbatt``."""

import sys

from .cli import main

sys.exit(main())
