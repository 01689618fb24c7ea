import sys

from kgloop.cli import main

sys.exit(main())
