import sys

from tilestream.harness import main

sys.exit(main())
