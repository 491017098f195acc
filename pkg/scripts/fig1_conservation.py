"""Salt conservation on the regime (c) configuration, fixed and adaptive meshes."""

from _common import output_dir

from tearfilm.cli import write_profile_csv, write_series_csv
from tearfilm.experiments import conservation_run, fig1_params

out, _ = output_dir("out/fig1")
for adaptive in (False, True):
    tag = "adaptive" if adaptive else "fixed"
    result, drift = conservation_run(801, adaptive=adaptive)
    write_series_csv(out / f"series_{tag}.csv", result.series)
    write_profile_csv(out / f"profile_{tag}.csv", result.final.to_solution(), fig1_params())
    print(f"{tag:8s} mesh: relative salt drift {drift:.3e}, event {result.event.kind.value}")
