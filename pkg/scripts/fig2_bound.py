"""Maximum-principle monitor on the step and tanh capacity configurations."""

from _common import output_dir

from tearfilm.cli import write_profile_csv, write_series_csv
from tearfilm.experiments import bound_run, fig1_params, fig2_params

out, _ = output_dir("out/fig2")
for name, params, n in (("fig1", fig1_params(), 1601), ("fig2", fig2_params(), 1001)):
    result, rep = bound_run(params, n)
    write_series_csv(out / f"series_{name}.csv", result.series)
    write_profile_csv(out / f"profile_{name}.csv", result.final.to_solution(), params)
    print(f"{name}: lower {rep.lower_violation:.2e}, upper {rep.upper_violation:.2e}, "
          f"max(s - Sbar) {rep.max_pointwise_excess:.4g}, within bounds {rep.ok}")
