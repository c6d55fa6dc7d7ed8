"""Run the oscillating-sphere example and print the conserved quantities.

Usage: python demos/oscillating_droplet.py [out_dir]
"""

import sys
from pathlib import Path

from surfchns.fileio import parse_config, run_to_directory

here = Path(__file__).parent
config = parse_config(here / "oscillating_droplet.toml")
out = Path(sys.argv[1]) if len(sys.argv) > 1 else here / "out_droplet"
traj, _ = run_to_directory(config, out)

first = traj.rows[0]
print(f"{'t':>8} {'mass drift':>12} {'area':>10} {'energy':>10} {'max|phi|':>9} {'div res':>10}")
for row in traj.rows:
    print(f"{row.t:8.4f} {row.mass - first.mass:12.3e} {row.area:10.6f} {row.energy:10.5f} "
          f"{row.max_abs_phi:9.4f} {row.div_residual:10.2e}")
print(f"snapshots and diagnostics.csv written to {out}")
