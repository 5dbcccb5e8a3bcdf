#!/usr/bin/env python3
"""End-to-end smoke test for the fairlend_py extension module.

Builds the cdylib if needed, imports it from a scratch directory, and
drives one pass of the pipeline: simulate, screen, train all three modes,
score, audit invariances, and run a tiny multi-seed experiment.
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    lib = REPO / "target" / "debug" / "libfairlend_py.so"
    if not lib.exists():
        subprocess.run(
            ["cargo", "build", "-p", "fairlend-py"], cwd=REPO, check=True
        )
    return lib


def main() -> None:
    lib = build_extension()
    scratch = Path(tempfile.mkdtemp(prefix="fairlend_smoke_"))
    shutil.copy(lib, scratch / "fairlend_py.so")
    sys.path.insert(0, str(scratch))
    import fairlend_py as fl

    # Deterministic synthetic sample.
    frame = fl.simulate(6000, 7)
    assert len(frame) == 6000
    names = frame.column_names()
    assert names[0] == "a" and names[-1] == "y"
    a = frame.column("a")
    assert set(a) == {"0", "1"}

    # The generator respects its own exclusion: outcomes depend on the
    # protected attribute only through creditworthiness.
    gap, qualifying, total = fl.independence_audit(100_000, 2)
    assert gap is not None and gap < 0.05, gap
    assert 0 < qualifying <= total

    # Proxy screening drops at least the pure proxy column.
    screening = fl.screen(frame, "a", "1")
    report = json.loads(screening)
    assert "p" in report["dropped"], report["dropped"]

    # All three modes train on the same frame.
    train, test = frame.split(0.25, 0)
    aware = fl.Model.train(train, "awareness")
    unaware = fl.Model.train(train, "unawareness", screening_json=screening)
    counter = fl.Model.train(train, "counterfactual")
    assert aware.mode == "awareness"
    assert "a" not in unaware.features()
    assert all(f not in unaware.features() for f in report["dropped"])

    labels = test.labels()
    aucs = {
        m.mode: fl.auc(m.score(test), labels) for m in (aware, unaware, counter)
    }
    assert all(0.5 < v < 1.0 for v in aucs.values()), aucs

    # Counterfactual scores cannot move when only the protected value does.
    policy = json.dumps({"threshold": 0.5, "a_prime": {"a": "0"}})
    base = counter.score(test, policy)
    flipped = counter.score(test, json.dumps({"threshold": 0.5, "a_prime": {"a": "1"}}))
    # Same reference level either way once substitution happens at a fixed
    # level; differing a_prime levels are allowed to differ.
    again = counter.score(test, policy)
    assert base == again
    assert any(x != y for x, y in zip(base, flipped))

    decisions = counter.decide(test, policy)
    approval = sum(decisions) / len(decisions)
    assert 0.0 < approval < 1.0

    # Model artifacts round-trip through files and keep their scores.
    model_path = scratch / "model.json"
    counter.save(str(model_path))
    reloaded = fl.Model.load(str(model_path))
    assert reloaded.score(test, policy) == base

    # Frames round-trip through CSV plus schema.
    csv_path, schema_path = scratch / "data.csv", scratch / "schema.json"
    test.to_csv(str(csv_path))
    test.save_schema(str(schema_path))
    back = fl.Frame.from_csv(str(schema_path), str(csv_path))
    assert len(back) == len(test) and back.labels() == labels

    # Paired t-test distinguishes a shifted copy from noise.
    t, p, diff = fl.significance([0.70, 0.71, 0.69, 0.72], [0.60, 0.62, 0.59, 0.61])
    assert p < 0.01 and diff > 0.05 and t is not None

    # Tiny experiment: deterministic and internally consistent.
    config = {
        "source": {"kind": "scm", "spec": {}, "n_rows": 1500},
        "params": {
            mode: {
                "num_trees": 25,
                "learning_rate": "3fb999999999999a",
                "max_leaves": 8,
                "min_samples_leaf": 10,
                "max_bins": 255,
                "l2_leaf_penalty": "3ff0000000000000",
                "seed": 0,
            }
            for mode in ("awareness", "unawareness", "counterfactual")
        },
        "seeds": [1, 2, 3],
        "cv_folds": 0,
        "group_column": "a",
        "protected_level": "1",
        "reference_level": "0",
    }
    result_json = fl.run_experiment(json.dumps(config))
    assert result_json == fl.run_experiment(json.dumps(config))
    result = json.loads(result_json)
    assert len(result["seeds"]) == 3
    assert set(result["aggregates"]) == {"awareness", "unawareness", "counterfactual"}
    table = fl.render_report(result_json)
    assert "awareness" in table and "AUC" in table

    print(f"auc by mode: {json.dumps(aucs, sort_keys=True)}")
    print(f"independence audit max gap: {gap:.4f}")
    print(f"screened proxies: {report['dropped']}")
    print("smoke test passed")


if __name__ == "__main__":
    main()
