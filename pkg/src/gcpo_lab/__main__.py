import sys

from gcpo_lab.cli import main

sys.exit(main())
