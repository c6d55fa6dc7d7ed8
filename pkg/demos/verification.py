"""Print the refinement studies behind the command-line verify suites."""

import sys

from surfchns.oracles import SUITES, run_suite

suite = sys.argv[1] if len(sys.argv) > 1 else "laplace"
if suite not in SUITES:
    sys.exit(f"suite must be one of {SUITES}")
for report in run_suite(suite):
    print(report.summary())
