import sys

from cersa_forge.cli import main

sys.exit(main())
