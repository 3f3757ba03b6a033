"""Run the experiment harness: python -m experiments <command> [options]."""

import sys

from experiments.cli import main

sys.exit(main())
