"""Compare raw channel distributions of robot and human runs.

The robot repeats each motion with little jitter, so its window means vary
less than a person's.

    python3 demos/distributions.py
"""

from toolsense.core import Source
from toolsense.evaluation import distribution_report
from toolsense.synth import DatasetSpec, generate_dataset

runs, _ = generate_dataset(DatasetSpec.uniform(human_subjects=2, human_runs_per_task=4, robot_runs_per_task=8), seed=1)
report = distribution_report(runs)

print(f"{'channel':<10}{'robot var':>12}{'human var':>12}{'ratio':>8}{'IQR overlap':>13}")
for ch, ov in report.overlap.items():
    r = report.window_mean_variance[(ch, Source.ROBOT)]
    h = report.window_mean_variance[(ch, Source.HUMAN)]
    print(f"{ch:<10}{r:>12.4g}{h:>12.4g}{r / h:>8.2f}{ov:>13.2f}")
