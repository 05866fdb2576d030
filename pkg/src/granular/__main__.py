import sys

from granular.cli import main

sys.exit(main())
