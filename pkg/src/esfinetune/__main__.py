import sys

from esfinetune.harness.cli import main

sys.exit(main())
