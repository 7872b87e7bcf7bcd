"""Synthesize a small dataset, pretrain on robot runs and score human test windows.

    python3 demos/quickstart.py
"""

from toolsense.evaluation import evaluate
from toolsense.experiment import human_data, prepare
from toolsense.model import TrainConfig, train
from toolsense.synth import DatasetSpec

# Two human subjects and one robot; 9 human runs per task give the 3/3/3 split.
spec = DatasetSpec.uniform(human_subjects=2, robot_runs_per_task=6, duration=90.0)
config = TrainConfig(epochs=60, patience=15)

# prepare() generates, featurizes, cleans, splits, normalizes and pretrains.
pools, norm, pretrained = prepare(spec, seed=0, config=config)
print(f"robot pretraining windows: {len(pools.robot_train)}, best epoch {pretrained.best_epoch}")

data = human_data(pools, norm)
zero_shot = train(data.x_train, data.y_train, data.x_val, data.y_val, config)
fine_tuned = train(data.x_train, data.y_train, data.x_val, data.y_val, config, init=pretrained.params)

for name, params in [("robot only", pretrained.params), ("zero-shot", zero_shot.params), ("fine-tuned", fine_tuned.params)]:
    report = evaluate(params, data.x_test, data.y_test)
    print(f"{name:>11}: human test accuracy {report.accuracy:.3f}")
print("confusion (fine-tuned):")
print(evaluate(fine_tuned.params, data.x_test, data.y_test).confusion)
