import json

import numpy as np
import pytest

from flowtrack import cli, distill, flow
from flowtrack.motion import SynthMotionSpec, save_motion, synth_motion


@pytest.fixture(scope="module")
def motions_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("motions")
    specs = [
        ("a_slow", 0.3, 0.25),
        ("b_mid", 0.4, 0.5),
        ("c_static", 0.0, 0.0),
    ]
    for name, amp, freq in specs:
        clip = synth_motion(SynthMotionSpec(2, 4.0, 50.0, amplitude=amp, frequency=freq,
                                            link_lengths=(0.5, 0.4)))
        save_motion(clip, d / f"{name}.json")
    return d


@pytest.fixture(scope="module")
def tiny_policy_dir(tmp_path_factory, motions_dir):
    out = tmp_path_factory.mktemp("train_out")
    rc = cli.main([
        "--seed", "1", "--quiet", "train",
        "--motions", str(motions_dir / "a_slow.json"),
        "--out", str(out),
        "--set", "train.iterations=2", "--set", "train.gradient_steps=40",
        "--set", "train.hidden=[24,24]", "--set", "env.episode_len=80",
    ])
    assert rc == 0
    return out


class TestAnalyze:
    def test_report_entries_sorted(self, motions_dir, tmp_path, capsys):
        out = tmp_path / "report.json"
        rc = cli.main(["--quiet", "analyze", "--motions", str(motions_dir),
                       "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert [e["motion"] for e in report] == ["a_slow", "b_mid", "c_static"]
        for entry in report:
            assert list(entry["raw"]) == ["v_max", "a_max", "j_max", "ang_max",
                                          "v_com_z_max", "airborne", "f_switch"]
            assert len(entry["scores"]) == 6

    def test_static_clip_zero_scores(self, motions_dir, tmp_path):
        out = tmp_path / "report.json"
        cli.main(["--quiet", "analyze", "--motions", str(motions_dir), "--out", str(out)])
        report = json.loads(out.read_text())
        static = [e for e in report if e["motion"] == "c_static"][0]
        assert static["scores"] == [0.0] * 6

    def test_rerun_byte_identical(self, motions_dir, tmp_path):
        o1, o2 = tmp_path / "r1.json", tmp_path / "r2.json"
        cli.main(["--quiet", "analyze", "--motions", str(motions_dir), "--out", str(o1)])
        cli.main(["--quiet", "analyze", "--motions", str(motions_dir), "--out", str(o2)])
        assert o1.read_bytes() == o2.read_bytes()

    def test_bad_file_warns_but_continues(self, motions_dir, tmp_path, capsys):
        d = tmp_path / "mixed"
        d.mkdir()
        (d / "bad.json").write_text("{not json")
        clip = synth_motion(SynthMotionSpec(2, 4.0, 50.0, amplitude=0.1, frequency=0.3,
                                            link_lengths=(0.5, 0.4)))
        save_motion(clip, d / "good.json")
        rc = cli.main(["--quiet", "analyze", "--motions", str(d), "--out",
                       str(tmp_path / "r.json")])
        assert rc == 0
        assert "bad.json" in capsys.readouterr().err

    def test_all_bad_files_exit_1(self, tmp_path, capsys):
        d = tmp_path / "allbad"
        d.mkdir()
        (d / "x.json").write_text("{nope")
        rc = cli.main(["--quiet", "analyze", "--motions", str(d)])
        assert rc == 1


class TestActuator:
    def test_hand_value_printed(self, capsys):
        rc = cli.main(["actuator", "7520-22.5", "--v", "18.6", "--tau", "200"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "55.5" in out

    def test_zero_velocity_within_ceiling(self, capsys):
        rc = cli.main(["actuator", "7520-22.5", "--v", "0", "--tau", "50"])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        friction = [l for l in lines if "friction" in l][0]
        applied = [l for l in lines if "applied" in l][0]
        assert friction.split()[-1] == "0"
        assert applied.split()[-1] == "50"

    def test_unknown_name_lists_catalog(self, capsys):
        rc = cli.main(["actuator", "9999"])
        assert rc == 1
        err = capsys.readouterr().err
        assert "7520-22.5" in err and "5020-16" in err

    def test_sweep_limit_non_increasing(self, capsys):
        rc = cli.main(["actuator", "5020-16", "--tau", "100", "--sweep", "50"])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "v,limit,clipped,friction,applied"
        limits = [float(l.split(",")[1]) for l in lines[1:]]
        assert all(b <= a + 1e-12 for a, b in zip(limits, limits[1:]))


class TestTrain:
    def test_outputs_exist_and_load(self, tiny_policy_dir):
        net = flow.load_policy(tiny_policy_dir / "policy.json")
        assert net.action_dim == 2
        lines = (tiny_policy_dir / "loss.csv").read_text().strip().splitlines()
        assert lines[0] == "iteration,loss"
        assert len(lines) == 3

    def test_seeded_rerun_identical(self, motions_dir, tmp_path):
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            rc = cli.main([
                "--seed", "5", "--quiet", "train",
                "--motions", str(motions_dir / "a_slow.json"), "--out", str(out),
                "--set", "train.iterations=1", "--set", "train.gradient_steps=15",
                "--set", "train.hidden=[16]", "--set", "env.episode_len=50",
            ])
            assert rc == 0
            outs.append(out)
        assert (outs[0] / "policy.json").read_bytes() == (outs[1] / "policy.json").read_bytes()
        assert (outs[0] / "loss.csv").read_bytes() == (outs[1] / "loss.csv").read_bytes()

    def test_checkpoint_every(self, motions_dir, tmp_path):
        out = tmp_path / "ck"
        rc = cli.main([
            "--quiet", "train", "--motions", str(motions_dir / "a_slow.json"),
            "--out", str(out),
            "--set", "train.iterations=4", "--set", "train.gradient_steps=5",
            "--set", "train.hidden=[8]", "--set", "train.checkpoint_every=2",
            "--set", "env.episode_len=50",
        ])
        assert rc == 0
        assert (out / "policy_iter2.json").exists()
        assert (out / "policy_iter4.json").exists()
        mid = flow.load_policy(out / "policy_iter2.json")
        assert mid.action_dim == 2

    def test_bad_set_path_exits_1(self, motions_dir, tmp_path, capsys):
        rc = cli.main(["--quiet", "train", "--motions", str(motions_dir),
                       "--out", str(tmp_path / "x"), "--set", "train.nope=1"])
        assert rc == 1

    def test_joint_mismatch_exits_1(self, tmp_path):
        clip = synth_motion(SynthMotionSpec(3, 4.0, 50.0, amplitude=0.1, frequency=0.3))
        save_motion(clip, tmp_path / "three.json")
        rc = cli.main(["--quiet", "train", "--motions", str(tmp_path / "three.json"),
                       "--out", str(tmp_path / "o")])
        assert rc == 1


class TestEval:
    def test_metrics_schema_and_determinism(self, motions_dir, tiny_policy_dir, tmp_path):
        args = ["--seed", "2", "--quiet", "eval",
                "--policy", str(tiny_policy_dir / "policy.json"),
                "--motions", str(motions_dir / "a_slow.json"),
                "--rollouts", "2", "--set", "env.episode_len=80"]
        o1, o2 = tmp_path / "m1.json", tmp_path / "m2.json"
        assert cli.main(args + ["--out", str(o1)]) == 0
        assert cli.main(args + ["--out", str(o2)]) == 0
        assert o1.read_bytes() == o2.read_bytes()
        doc = json.loads(o1.read_text())
        assert set(doc) == {"motions", "aggregate"}
        entry = doc["motions"]["a_slow"]
        assert set(entry) == {"mpjpe_mm", "dvel", "dacc", "success", "n_episodes"}
        assert 0.0 <= entry["success"] <= 1.0

    def test_dim_mismatch_exits_1(self, motions_dir, tmp_path, capsys):
        net = flow.init_net(3, 11, hidden=(4,), rng=np.random.default_rng(0))
        path = tmp_path / "p.json"
        flow.save_policy(net, path)
        rc = cli.main(["--quiet", "eval", "--policy", str(path),
                       "--motions", str(motions_dir / "a_slow.json")])
        assert rc == 1
        assert "not match" in capsys.readouterr().err

    def test_runtime_failure_exits_2(self, motions_dir, tiny_policy_dir, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("synthetic failure")
        monkeypatch.setattr(distill, "evaluate_policy", boom)
        rc = cli.main(["--quiet", "eval",
                       "--policy", str(tiny_policy_dir / "policy.json"),
                       "--motions", str(motions_dir / "a_slow.json"),
                       "--set", "env.episode_len=80"])
        assert rc == 2


class TestRefine:
    def test_reward_csv_monotone_and_rerun_identical(self, motions_dir, tiny_policy_dir, tmp_path):
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            rc = cli.main([
                "--seed", "4", "--quiet", "refine",
                "--policy", str(tiny_policy_dir / "policy.json"),
                "--motions", str(motions_dir / "a_slow.json"), "--out", str(out),
                "--set", "es.generations=2", "--set", "es.population=2",
                "--set", "es.episodes_per_eval=1", "--set", "env.episode_len=60",
            ])
            assert rc == 0
            outs.append(out)
        assert (outs[0] / "residual.json").read_bytes() == (outs[1] / "residual.json").read_bytes()
        lines = (outs[0] / "reward.csv").read_text().strip().splitlines()
        assert lines[0] == "generation,best_reward"
        best = [float(l.split(",")[1]) for l in lines[1:]]
        assert len(best) == 3
        assert all(b >= a for a, b in zip(best, best[1:]))

    def test_zero_generations_keeps_initial_residual(self, motions_dir, tiny_policy_dir, tmp_path):
        out = tmp_path / "zero"
        rc = cli.main([
            "--seed", "4", "--quiet", "refine",
            "--policy", str(tiny_policy_dir / "policy.json"),
            "--motions", str(motions_dir / "a_slow.json"), "--out", str(out),
            "--set", "es.generations=0", "--set", "env.episode_len=60",
        ])
        assert rc == 0
        saved = distill.load_residual(out / "residual.json")
        from flowtrack.env import ArmEnv
        env = ArmEnv({"episode_len": 60})
        fresh = distill.init_residual(env, hidden=(24,), bound=0.4,
                                      rng=np.random.default_rng(4))
        for (W1, b1), (W2, b2) in zip(saved.params, fresh.params):
            assert np.array_equal(W1, W2) and np.array_equal(b1, b2)
