"""Equilibrium branches in xi and in m, with critical-value extrapolation."""

from _common import output_dir

from tearfilm.cli import BRANCH_COLUMNS, write_table
from tearfilm.experiments import critical_values, m_branch, xi_branch

out, _ = output_dir("out/branches")
for name, branch in (("xi", xi_branch()), ("m", m_branch())):
    write_table(out / f"branch_{name}.csv", BRANCH_COLUMNS, branch.rows())
    est = critical_values(branch)
    print(f"{name}: {len(branch.points)} points, stop reason {branch.termination}, "
          f"critical value {est.value:.5f} +- {est.uncertainty:.1e} ({est.pattern})")
