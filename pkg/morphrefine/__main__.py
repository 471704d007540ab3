import sys

from morphrefine.cli import main

sys.exit(main())
