"""Compare SCC, FRCC and FNNCC on the absolute-value scenario.

Trains each predictor once on in-control data, sets limits on the tuning
set and prints ARL estimates for a range of response shifts.

    python demos/01_scenario_c_charts.py
"""

from fnncc.arl import estimate_arl
from fnncc.charts import build_chart, make_fnn_predictor, make_scc_predictor, make_sof_predictor
from fnncc.simgen import DESK_SIZES, SHIFT_MULTIPLES, ShiftSpec, make_datasets

data = make_datasets("C", ShiftSpec((0.0,) + SHIFT_MULTIPLES), DESK_SIZES, seed=1)
print(f"s_y = {data.s_y:.3f}")

fnn, history = make_fnn_predictor(data.train, data.validation)
print(f"network stopped at epoch {history.stopped_epoch}, best epoch {history.best_epoch}")

charts = [
    build_chart(make_scc_predictor(), data.tuning),
    build_chart(make_sof_predictor(data.train), data.tuning),
    build_chart(fnn, data.tuning),
]
for chart in charts:
    print(f"{chart.name:6s} limits [{chart.lcl:+.3f}, {chart.ucl:+.3f}]")

print("\nshift  " + "  ".join(f"{c.name:>14s}" for c in charts))
for m, oc in data.oc.items():
    cells = [estimate_arl(c, oc, "C") for c in charts]
    print(f"{m:5.1f}  " + "  ".join(f"{e.arl:7.2f} +- {e.se_arl:4.2f}" for e in cells))
