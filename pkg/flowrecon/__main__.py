"""Allow ``python -m flowrecon``."""

import sys

from .cli import main

sys.exit(main())
