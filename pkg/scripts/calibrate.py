"""Derive the reference peak Rabi frequency and the phonon coupling.

Usage: python scripts/calibrate.py [--config FILE] [--seed N] [--output-dir DIR]
Writes calibration.json and manifest.json; copy the chosen values into
laser.peak_rabi and phonons.coupling.
"""

import sys

from reexsim.calibration import main

if __name__ == "__main__":
    sys.exit(main())
