import sys

from cara_retire.cli import main

sys.exit(main())
