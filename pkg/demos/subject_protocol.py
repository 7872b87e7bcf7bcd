"""In- vs. out-of-distribution accuracy per synthetic human subject.

ID trains on every subject's train runs; OoD withholds the subject entirely.
Both score the subject's own test runs.

    python3 demos/subject_protocol.py
"""

from toolsense.evaluation import format_subjects_csv
from toolsense.experiment import subject_experiment

rows = subject_experiment(seed=0, human_subjects=4)
print(format_subjects_csv(rows), end="")
