import sys

from gamfq.cli import main

sys.exit(main())
