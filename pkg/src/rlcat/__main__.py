import sys

from rlcat.cli import main

sys.exit(main())
