import sys

from leb.deloc.cli import main

sys.exit(main())
