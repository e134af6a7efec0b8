"""End-to-end smoke run of the Python bindings on a tiny budget.

    pip install -e crates/py --no-build-isolation
    python python/smoke.py
"""

import sys
import tempfile
from pathlib import Path

import drivestack as ds

TINY = [
    "collect.frames=120",
    'collect.maps=["straight"]',
    'collect.scenarios=["traffic"]',
    "perception.train.steps=2",
    "privileged.steps=2",
    "privileged.batch=2",
    "distill.steps=2",
    "distill.batch=1",
    "brake.train.steps=2",
    'eval.routes=[{"map":"straight","scenario":"empty","seed":100}]',
    "eval.repeats=[0]",
    "eval.episode.time_budget=4.0",
]


def main():
    cfg = ds.Config(TINY)
    print(cfg)
    assert "collect.frames" in ds.Config.keys()
    assert cfg.with_overrides(["seed=9"]).seed == 9
    try:
        ds.Config(["no.such.key=1"])
        raise AssertionError("unknown key accepted")
    except ValueError:
        pass

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        rep = ds.collect(cfg, root / "frames")
        print("collected", rep["frames"], "frames in", rep["episodes"], "episodes")
        data = ds.Dataset(root / "frames")
        assert len(data) == rep["frames"] > 0

        models = root / "models"
        perception = ds.train_perception(cfg, root / "frames", models)
        teacher, brake = ds.train_privileged(cfg, root / "frames", models)
        student = ds.distill(cfg, root / "frames", teacher, models, perception=perception)
        print("checkpoints:", *(Path(p).name for p in (perception, teacher, brake, student)))

        model = ds.Student.load(student)
        points, scores, goal, command, hl, hw = data.sensor_inputs(len(data) // 2)
        out = model.infer(points, scores, goal, command, refine_iters=2, half_length=hl, half_width=hw)
        assert len(out["ego_refined"]) == model.horizon
        assert len(out["ego_plans"]["likelihoods"]) == len(ds.commands())
        print("detections:", len(out["detections"]), "planned vehicles:", len(out["others"]))

        report = ds.evaluate(cfg, root / "eval", students=[("student", student, brake, 2)], keep_logs=True)
        print(report["table"])
        logs = sorted(p for p in (root / "eval" / "logs" / "student").iterdir() if p.is_dir())
        score = ds.score_log(logs[0])
        assert 0.0 <= score["driving_score"] <= 1.0
        svgs = ds.replay(logs[0], root / "replay")
        print("replayed", len(svgs), "ticks")

        assert ds.cli(["--help"]) == 0
        assert ds.cli(["evaluate", "--checkpoint", str(root / "missing.ckpt")]) != 0
    print("smoke ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
