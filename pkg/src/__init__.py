# Package-wide helpers: the unit registry used by all configuration classes.
# Internally everything is computed in SI magnitudes (m, rad, s).

import pint
ureg = pint.UnitRegistry()
# Initialize logging
import logging
logging.basicConfig(level=logging.INFO)
