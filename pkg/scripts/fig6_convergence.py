"""Long run at xi = 0.2 compared with the equilibrium on the same mesh."""

import numpy as np
from _common import output_dir

from tearfilm.cli import write_profile_csv, write_series_csv
from tearfilm.experiments import equilibrium_on, step_params, steady_run

out, _ = output_dir("out/fig6")
r = steady_run(0.2)
final = r.final.to_solution()
eq = equilibrium_on(final.mesh, 0.2)
params = step_params(3.5, 0.2)
write_series_csv(out / "series.csv", r.series)
write_profile_csv(out / "profile_final.csv", final, params)
write_profile_csv(out / "equilibrium.csv", eq.to_solution(), params)
print(f"{r.event.kind.value} at t = {r.event.t_stop:.4g}; "
      f"|h - h_eq| = {np.max(np.abs(final.h - eq.h)):.2e}, "
      f"|s - s_eq| = {np.max(np.abs(final.s - eq.s)):.2e}")
