"""Rupture-shock run at two resolutions."""

from _common import output_dir

from tearfilm.cli import write_profile_csv, write_series_csv
from tearfilm.experiments import fig3_params, rupture_run

out, _ = output_dir("out/fig3")
for n in (1001, 2001):
    r = rupture_run(n)
    write_series_csv(out / f"series_N{n}.csv", r.series)
    write_profile_csv(out / f"profile_N{n}.csv", r.final.to_solution(), fig3_params())
    print(f"N={n}: {r.event.kind.value} at t_c = {r.event.t_stop:.5f}, x_c = {r.event.x_c:.4f}, "
          f"h_min = {r.series['h_min'][-1]:.2e}, max|s_x| = {r.series['max_abs_sx'][-1]:.2e}")
