"""Regime map over m for the two step half-widths."""

from _common import output_dir

from tearfilm.cli import write_table
from tearfilm.experiments import regime_sweep


def main():
    out, args = output_dir("out/regimes")
    columns = ("xi", "m", "regime", "event", "t_stop", "h_min_final", "exponent", "predicted")
    rows = []
    for xi in (0.3, 0.5):
        for r in regime_sweep(xi, workers=args.workers):
            rows.append((xi, r.m, r.regime, r.event, r.t_stop, r.h_min, r.exponent, r.predicted))
            print(f"xi={xi} m={r.m:<4g} {r.regime:22s} exponent {r.exponent:.4f} "
                  f"(law {r.predicted:.4f})")
    write_table(out / "regimes.csv", columns, rows)


if __name__ == "__main__":
    main()
