import json

import numpy as np
import pytest

from protostream.checkpoint import load_checkpoint, write_matrix_csv
from protostream.cli import main

BASE_CONFIG = """
sim.regime=decoupled
sim.prototypes=8
sim.latent_dim=4
sim.hidden=6
sim.epochs=2
sim.batch=32
sim.seed=3
data.classes=4
data.input_dim=6
data.samples=160
data.spread=0.2
"""


def write_config(tmp_path, text=BASE_CONFIG):
    path = tmp_path / "experiment.cfg"
    path.write_text(text)
    return path


def cluster_file(tmp_path, n=96, k=4, d=3, seed=0, name="features.csv"):
    rng = np.random.default_rng(seed)
    centers = 3.0 * rng.standard_normal((k, d))
    labels = rng.integers(0, k, size=n)
    pts = centers[labels] + 0.05 * rng.standard_normal((n, d))
    path = tmp_path / name
    write_matrix_csv(pts, path)
    return path, centers


class TestSimulate:
    def test_successful_run(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "run"
        code = main(["simulate", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        telemetry = (out / "telemetry.csv").read_text().splitlines()
        assert len(telemetry) == 1 + 3  # header + epochs + init row
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok"
        assert manifest["config"]["sim.regime"] == "decoupled"

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "sim.regym=decoupled\n")
        out = tmp_path / "run"
        code = main(["simulate", "--config", str(cfg), "--out", str(out)])
        assert code == 2
        assert "sim.regym" in capsys.readouterr().err
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "error"

    def test_missing_config_exit_3(self, tmp_path):
        code = main(["simulate", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "run")])
        assert code == 3

    def test_grid_creates_sixteen_runs(self, tmp_path):
        cfg = write_config(tmp_path, BASE_CONFIG.replace("sim.epochs=2", "sim.epochs=1"))
        out = tmp_path / "grid"
        code = main(["simulate", "--config", str(cfg), "--out", str(out), "--grid"])
        assert code == 0
        subdirs = [p for p in out.iterdir() if p.is_dir()]
        assert len(subdirs) == 16
        for sub in subdirs:
            assert (sub / "telemetry.csv").exists()


class TestAnalyze:
    def test_orthonormal_rows(self, tmp_path):
        protos = tmp_path / "protos.csv"
        write_matrix_csv(np.eye(3), protos)
        out = tmp_path / "sweep.csv"
        code = main(["analyze", "--protos", str(protos), "--out", str(out),
                     "--epsilons", "0.5"])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[1].startswith("0.5,3,1")
        assert (tmp_path / "sweep_angles.csv").exists()

    def test_corrupt_magic_exit_2(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"PDGX" + b"\x00" * 100)
        code = main(["analyze", "--protos", str(bad),
                     "--out", str(tmp_path / "o.csv")])
        assert code == 2

    def test_decoupled_checkpoint_full_uniqueness(self, tmp_path):
        # the no-collapse configuration: slow forgetting, flat responsibilities
        cfg = write_config(tmp_path, BASE_CONFIG + """
sim.latent_dim=8
gmm.eta.start=0.995
gmm.eta.end=0.998
gmm.annealing=false
gmm.beta=0.5
""")
        out = tmp_path / "run"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        snapshot = sorted((out / "snapshots").iterdir())[-1]
        sweep = tmp_path / "sweep.csv"
        code = main(["analyze", "--protos", str(snapshot), "--out", str(sweep)])
        assert code == 0
        rows = [line.split(",") for line in sweep.read_text().splitlines()[1:]]
        assert all(float(r[2]) == 1.0 for r in rows)


class TestExportKde:
    def test_default_kappa_recorded(self, tmp_path):
        protos = tmp_path / "protos.csv"
        rng = np.random.default_rng(1)
        write_matrix_csv(rng.standard_normal((12, 5)), protos)
        prefix = tmp_path / "kde"
        code = main(["export-kde", "--protos", str(protos),
                     "--out-prefix", str(prefix)])
        assert code == 0
        manifest = json.loads((tmp_path / "kde_manifest.json").read_text())
        assert manifest["kappa"] == 20.0
        assert (tmp_path / "kde_gaussian_kde.csv").exists()
        assert (tmp_path / "kde_vmf_kde.csv").exists()

    def test_angular_density_integrates_to_one(self, tmp_path):
        protos = tmp_path / "protos.csv"
        rng = np.random.default_rng(2)
        write_matrix_csv(rng.standard_normal((20, 6)), protos)
        prefix = tmp_path / "kde"
        assert main(["export-kde", "--protos", str(protos),
                     "--out-prefix", str(prefix)]) == 0
        rows = (tmp_path / "kde_vmf_kde.csv").read_text().splitlines()[2:]
        xs = np.array([float(r.split(",")[0]) for r in rows])
        ps = np.array([float(r.split(",")[1]) for r in rows])
        assert np.trapezoid(ps, xs) == pytest.approx(1.0, abs=1e-2)

    def test_two_rows_exit_4(self, tmp_path):
        protos = tmp_path / "protos.csv"
        write_matrix_csv(np.eye(2), protos)
        code = main(["export-kde", "--protos", str(protos),
                     "--out-prefix", str(tmp_path / "kde")])
        assert code == 4


class TestClusterStream:
    def test_recovers_cluster_means(self, tmp_path):
        from scipy.optimize import linear_sum_assignment

        # seed chosen so the sampled initial means cover all eight clusters
        features, centers = cluster_file(tmp_path, n=1024, k=8, d=4, seed=1)
        out = tmp_path / "model.ckpt"
        code = main(["cluster-stream", "--features", str(features),
                     "--out", str(out), "-k", "8", "--epochs", "30",
                     "--seed", "1", "--no-forgetting", "--no-annealing",
                     "--no-resurrect", "--no-rescaling"])
        assert code == 0
        state = load_checkpoint(out)
        cost = np.linalg.norm(state.means[:, None, :] - centers[None, :, :], axis=2)
        r, c = linear_sum_assignment(cost)
        assert cost[r, c].max() < 0.1
        loglik = (tmp_path / "model.ckpt.loglik.csv").read_text().splitlines()
        assert loglik[0] == "step,avg_loglik"
        # streaming should improve the data fit
        first = float(loglik[1].split(",")[1])
        last = float(loglik[-1].split(",")[1])
        assert last > first

    def test_empty_file_exit_2(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        code = main(["cluster-stream", "--features", str(empty),
                     "--out", str(tmp_path / "m.ckpt")])
        assert code == 2

    def test_same_seed_bitwise_identical(self, tmp_path):
        features, _ = cluster_file(tmp_path)
        out_a, out_b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        for out in (out_a, out_b):
            code = main(["cluster-stream", "--features", str(features),
                         "--out", str(out), "-k", "4", "--epochs", "5",
                         "--seed", "11"])
            assert code == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        assert (tmp_path / "a.ckpt.loglik.csv").read_bytes() == \
            (tmp_path / "b.ckpt.loglik.csv").read_bytes()


class TestDeterminismAcrossCommands:
    def test_simulate_bitwise_repeatable(self, tmp_path):
        cfg = write_config(tmp_path)
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["simulate", "--config", str(cfg), "--out", str(out),
                         "--seed", "5"]) == 0
            outs.append(out)
        a, b = outs
        assert (a / "telemetry.csv").read_bytes() == (b / "telemetry.csv").read_bytes()
        for snap_a, snap_b in zip(sorted((a / "snapshots").iterdir()),
                                  sorted((b / "snapshots").iterdir())):
            assert snap_a.read_bytes() == snap_b.read_bytes()
