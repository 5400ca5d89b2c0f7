import sys

from subnet_bne.cli import main

sys.exit(main())
