import sys

from fedspace.cli import main

sys.exit(main())
