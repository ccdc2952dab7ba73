import sys

from adg.main import main

sys.exit(main())
