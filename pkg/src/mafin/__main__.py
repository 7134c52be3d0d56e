import sys

from mafin.cli import main

sys.exit(main())
