#!/usr/bin/env python3

# command-line entry point, run from the repository root as e.g.
# python . fk tests/testdata/small_arm.urdf tool --set shoulder=0.3 --set elbow=-0.2
# python . serve --store /tmp/model.kmodel

import sys

from src.cli_commands import main

if __name__ == '__main__':
    sys.exit(main())
