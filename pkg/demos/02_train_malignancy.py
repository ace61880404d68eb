"""Train a small 3-class malignancy CNN on synthetic nodule cubes.

Generates a size-separable cube dataset (class encoded by sphere radius),
trains the shallow architecture with a subject-grouped split, and reports
per-epoch losses and final validation accuracy. Takes about a minute on CPU:

    python3 demos/02_train_malignancy.py
"""

import warnings

import numpy as np

from lungpipe.annotations import split_stratified
from lungpipe.neural import ArchitectureSpec, TrainConfig, build_model, predict_proba, train
from lungpipe.phantom import generate_cube_dataset


def main():
    triples = generate_cube_dataset(40, separability="size", seed=0)
    cubes = [t[0].values for t in triples]
    labels = [t[1] for t in triples]
    subjects = [t[2] for t in triples]
    print(f"dataset: {len(cubes)} cubes, classes {sorted(set(labels))}")

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        split = split_stratified(list(zip(subjects, labels)), train_frac=0.75, seed=0)
    train_ids = set(split.train_scan_ids)
    tr = [i for i, s in enumerate(subjects) if s in train_ids]
    va = [i for i, s in enumerate(subjects) if s not in train_ids]
    print(f"subject-grouped split: {len(tr)} train / {len(va)} validation cubes")

    spec = ArchitectureSpec(kind="shallow", conv_filters=(4, 8, 16), dense_units=32)
    model = build_model(spec, ["1", "4", "5"], seed=0)
    print(f"model: {model.parameter_count()} parameters")

    cfg = TrainConfig(max_epochs=20, batch_size=16, seed=0, early_stop_patience=4)
    model = train(
        model,
        [cubes[i] for i in tr], [labels[i] for i in tr],
        [cubes[i] for i in va], [labels[i] for i in va],
        cfg,
    )
    for row in model.training_log:
        print(f"epoch {row['epoch']:3d}: train loss {row['train_loss']:.4f}, "
              f"val loss {row['val_loss']:.4f}, val acc {row['val_acc']:.3f}")

    probs = predict_proba(model, [cubes[i] for i in va])
    predicted = [model.class_order[i] for i in probs.argmax(axis=1)]
    accuracy = float(np.mean([p == labels[i] for p, i in zip(predicted, va)]))
    print(f"\nfinal validation accuracy: {accuracy:.3f}")


if __name__ == "__main__":
    main()
