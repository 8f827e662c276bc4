import sys

from roijscc.cli import main

sys.exit(main())
