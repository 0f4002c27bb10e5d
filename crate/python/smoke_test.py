"""Smoke test for the drivauth Python bindings on a tiny synthetic fleet."""

import math
import tempfile
from pathlib import Path

import drivauth

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    cfg = drivauth.Config.load(CONFIGS / "smoke.toml")
    cfg.set("scenarios", ["gb1", "bb1"])
    try:
        cfg.set("no_such_key", 1)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown config key accepted")

    assert drivauth.asr(1, 4) == 0.25
    assert drivauth.far(0, 4) == 0.0
    assert drivauth.accuracy(5, 3, 1, 1) == 0.8
    assert math.isclose(drivauth.f1(5, 3, 1, 1), 5 / 6)
    try:
        drivauth.asr(0, 0)
    except drivauth.DrivauthError:
        pass
    else:
        raise AssertionError("asr with nothing sent should fail")
    assert drivauth.arbitrate([(0x20, "b", 0), (0x10, "a", 5)]) == 1

    exp = drivauth.Experiment(cfg)
    assert exp.n_drivers == 3 and len(exp.features) == 46
    base = exp.baseline()
    print("baseline", {s["model"]: round(s["accuracy"], 3) for s in base})

    rows = exp.test_rows(0)[:40]
    assert drivauth.simulate_drive(rows) == rows
    ens = exp.ensemble()
    label, probs = ens.predict(rows)
    assert 0 <= label < ens.n_classes and math.isclose(sum(probs), 1.0)

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "ensemble.json"
        ens.save(path)
        assert drivauth.Ensemble.load(path).predict(rows) == (label, probs)
        files = drivauth.run_experiment(cfg, tmp)
        names = {Path(f).name for f in files}
        assert {"summary.txt", "gb1_asr_grid.csv", "bb1_sweep.csv"} <= names, names

    out = exp.attack("gb1", 0)
    print("gb1 campaign asr", out["asr"], "unsafe frames", out["unsafe_attacker_frames"])
    assert out["unsafe_attacker_frames"] == 0
    print("smoke test ok")


if __name__ == "__main__":
    main()
