"""Allow ``python -m gyronn``."""
import sys

from .cli import main

sys.exit(main())
