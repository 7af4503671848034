import sys

from mcusum.cli import main

sys.exit(main())
