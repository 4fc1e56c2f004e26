"""CPI suboptimality against K on the gridworld for a few values of nu."""
import warnings

import numpy as np

from vgdlab import policy_space as ps
from vgdlab.algos import AlgoConfig, run
from vgdlab.envs import gridworld
from vgdlab.vgd import class_optimum, d_infty

warnings.simplefilter("ignore", RuntimeWarning)
m = gridworld()
cls = ps.full_simplex(m.num_states, m.num_actions)
star = class_optimum(m, cls).value
Ks = np.array([16, 32, 64, 128, 256])
for nu in (1.0, 2.0, 4.0, m.horizon * d_infty(m, cls)):
    subs = np.array([run(m, cls, AlgoConfig("CPI", K=int(K), nu=nu)).values[-1] - star for K in Ks])
    pos = subs > 0
    slope = np.polyfit(np.log(Ks[pos]), np.log(subs[pos]), 1)[0] if pos.sum() >= 2 else float("nan")
    print(f"nu={nu:8.2f}  subopt={np.array2string(subs, precision=3)}  slope={slope:.2f}")
