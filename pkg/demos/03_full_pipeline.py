"""End-to-end run on the bundled demo cohort.

Uses the shipped config (configs/default.json) and the six phantom scans in
data/: detection, candidate featurization, cross-validated classifier
selection, and per-patient aggregation. Writes nothing; the report is
printed. Takes a few seconds on CPU:

    python3 demos/03_full_pipeline.py
"""

import os

from lungpipe.cli import RunConfig, run_end_to_end

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    cfg = RunConfig.from_json(os.path.join(HERE, "..", "configs", "default.json"))
    cfg.out = ""  # keep this demo read-only
    report = run_end_to_end(cfg)

    print("cross-validation leaderboard (weighted F1, mean +/- std over folds):")
    for row in report["cv"]:
        print(f"  {row['family']:>16} {row['params']}: {row['f1']}")
    print(f"\nselected: {report['best']['family']} {report['best']['params']}")

    print(f"\n{len(report['nodules'])} nodules across {len(report['patients'])} patients:")
    for patient in report["patients"]:
        flag = " (no candidates, defaulted)" if patient["flagged"] else ""
        print(f"  {patient['patient_id']}: {patient['label']} "
              f"(p={patient['probability']:.3f}){flag}")

    metrics = report["metrics"]
    print(f"\npatient-level weighted F1: {metrics['weighted_f1']:.3f}")
    print(f"manifest config hash: {report['manifest']['config_hash'][:16]}...")


if __name__ == "__main__":
    main()
