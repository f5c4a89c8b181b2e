import sys

from mlmcmc.cli import main

sys.exit(main())
