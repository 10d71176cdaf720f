import sys

from bsa.cli import main

sys.exit(main())
