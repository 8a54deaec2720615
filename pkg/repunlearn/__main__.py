import sys

from repunlearn.cli import main

sys.exit(main())
