"""Train the ablation ladder on planted data, then drive the minimum-force policy.

Full size (2,000 train / 500 test, 3 folds, 30 epochs) takes about 13 minutes
on one CPU core.  ``--quick`` finishes in about a minute but only exercises the
pipeline: at that size the models barely beat the majority class.
"""
import argparse
import time

import numpy as np

from graspfusion import DataConfig, FusionConfig, ModelPredictor, TrainConfig, ablation_suite, generate_dataset
from graspfusion.data import generate_scenes
from graspfusion.training import fixed_force_success, run_policy


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    n_train, n_test, epochs = (300, 100, 8) if args.quick else (2000, 500, 30)
    data = generate_dataset(DataConfig(), n_train + n_test, seed=args.seed)
    train_set, test_set = data.subset(np.arange(n_train)), data.subset(np.arange(n_train, n_train + n_test))
    print(f"{n_train} train / {n_test} test samples, positive fraction {data.label.mean():.3f}")

    start = time.perf_counter()
    results = ablation_suite(train_set, FusionConfig(), TrainConfig.toy(epochs=epochs), k=3, test_set=test_set,
                             keep_models=True)
    print(f"\nablation ({time.perf_counter() - start:.0f}s), mean test metrics over 3 fold models:")
    print(f"{'method':<14}{'accuracy':>10}{'precision':>11}{'recall':>9}")
    for name, res in results.items():
        t = res.test
        print(f"{name:<14}{t.accuracy[0]:>10.3f}{t.precision[0]:>11.3f}{t.recall[0]:>9.3f}")

    # The policy asks the fold ensemble at 10, 11, ... 30 N and lifts once it is confident.
    scenes = generate_scenes(DataConfig(), 100, seed=2)[0]
    predictor = ModelPredictor([f.model for f in results["ours"].folds], DataConfig(), TrainConfig.toy(), seed=2)
    rows = run_policy(predictor, scenes)
    print("\npolicy over 100 new scenes:")
    print(f"  learned    mean force {np.mean([r.chosen_force for r in rows]):5.2f} N, "
          f"success {np.mean([r.actual for r in rows]):.2f}")
    for force in (10.0, 30.0):
        print(f"  fixed {force:g}N  mean force {force:5.2f} N, success {fixed_force_success(scenes, force):.2f}")


if __name__ == "__main__":
    main()
