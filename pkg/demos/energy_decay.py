"""Spinodal decomposition on a fixed sphere with a very viscous fluid.

With the flow frozen out the free energy must not increase, which this
script prints step by step.
"""

import numpy as np

from surfchns import InitialSpec, MaterialSpec, NumericsSpec, SimConfig
from surfchns.stepper import run

config = SimConfig(
    subdivisions=3,
    material=MaterialSpec(nu1=1e6, nu2=1e6),
    numerics=NumericsSpec(dt=1e-3, t_end=0.1),
    initial=InitialSpec(phi0="0.3*sin(4*x)*cos(3*y) + 0.2*z"),
)
traj = run(config, keep_states=False)
e = np.array([r.energy for r in traj.rows])
print(f"E(0) = {e[0]:.6f}, E(T) = {e[-1]:.6f}, largest increase {np.diff(e).max():.3e}")
