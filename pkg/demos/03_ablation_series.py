"""
Projection-ratio sweep written as a CSV series
==============================================

Longer projection windows push the forged detection rate down and, past a
point, start eating into benign bit accuracy as well.  The harness writes
one CSV row per (grid point, trial kind) for external plotting.
"""

import sys
import tempfile
from pathlib import Path

from csguard.harness import ExperimentConfig, run_experiment
from csguard.harness.report import write_series_csv

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 32
cfg = ExperimentConfig(mode="ablate_proj", trials=trials, grid=(0.1, 0.2, 0.4, 0.6, 0.8))
report = run_experiment(cfg)

print(f"{'proj_ratio':>10}  {'benign TPR':>10}  {'benign BitAcc':>13}  {'ASR':>5}  {'ASR 95% CI':>13}")
for value in cfg.grid:
    b = report.group("benign", value)
    f = report.group("forge", value)
    print(
        f"{value:>10}  {b['detection_rate']:>10.2f}  {b['mean_bit_accuracy']:>13.4f}  "
        f"{f['detection_rate']:>5.2f}  [{f['ci_low']:.2f}, {f['ci_high']:.2f}]"
    )

out = Path(tempfile.gettempdir()) / "csguard_proj_series.csv"
write_series_csv(out, [report])
print(f"series written to {out}")
