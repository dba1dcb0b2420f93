import sys

from randaug.cli import main

sys.exit(main())
