import sys

from phantom_insight.main import main

sys.exit(main())
