import sys

from madae.cli import main

sys.exit(main())
