import numpy as np
import pytest

from protostream.checkpoint import (
    CheckpointError,
    load_checkpoint,
    load_matrix,
    read_matrix_csv,
    save_checkpoint,
    save_state_csv,
    write_matrix_csv,
)
from protostream.mixture import GmmConfig, gmm_update, init_mixture


def trained_state(seed=0, steps=5, k=4, d=3):
    rng = np.random.default_rng(seed)
    config = GmmConfig(total_steps=steps, rng_seed=seed)
    state = init_mixture(k, d, rng=rng)
    for _ in range(steps):
        state = gmm_update(state, rng.standard_normal((32, d)), config)
    return state


class TestBinaryRoundTrip:
    def test_bitwise_round_trip(self, tmp_path):
        state = trained_state()
        path = tmp_path / "state.ckpt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert loaded.step == state.step
        assert loaded.weights.tobytes() == state.weights.tobytes()
        assert loaded.means.tobytes() == state.means.tobytes()
        assert loaded.variances.tobytes() == state.variances.tobytes()
        assert loaded.suffstats.s_pi.tobytes() == state.suffstats.s_pi.tobytes()
        assert loaded.suffstats.s_mu.tobytes() == state.suffstats.s_mu.tobytes()
        assert loaded.suffstats.s_sigma.tobytes() == state.suffstats.s_sigma.tobytes()

    def test_fresh_state_round_trip(self, tmp_path):
        state = init_mixture(3, 2, rng=np.random.default_rng(1))
        path = tmp_path / "fresh.ckpt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert loaded.step == 0
        assert loaded.suffstats is None

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_truncated_payload(self, tmp_path):
        state = trained_state()
        path = tmp_path / "trunc.ckpt"
        save_checkpoint(state, path)
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)


class TestCsv:
    def test_matrix_round_trip_is_lossless(self, tmp_path):
        rng = np.random.default_rng(2)
        m = rng.standard_normal((6, 4)) * np.pi
        path = tmp_path / "m.csv"
        write_matrix_csv(m, path)
        back = read_matrix_csv(path)
        assert back.tobytes() == m.tobytes()

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(CheckpointError):
            read_matrix_csv(path)

    def test_ragged_row_reports_offset(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("d0,d1\n1,2\n3\n")
        with pytest.raises(CheckpointError) as err:
            read_matrix_csv(path)
        assert err.value.offset > 0

    def test_state_csv_export(self, tmp_path):
        state = trained_state()
        files = save_state_csv(state, tmp_path / "dump")
        names = {f.name for f in files}
        assert names == {"weights.csv", "means.csv", "variances.csv",
                         "s_pi.csv", "s_mu.csv", "s_sigma.csv"}
        means = read_matrix_csv(tmp_path / "dump" / "means.csv")
        assert means.tobytes() == state.means.tobytes()


class TestLoadMatrix:
    def test_sniffs_checkpoint(self, tmp_path):
        state = trained_state()
        path = tmp_path / "s.ckpt"
        save_checkpoint(state, path)
        m = load_matrix(path)
        assert m.tobytes() == state.means.tobytes()

    def test_sniffs_csv(self, tmp_path):
        rng = np.random.default_rng(3)
        mat = rng.standard_normal((5, 3))
        path = tmp_path / "m.csv"
        write_matrix_csv(mat, path)
        m = load_matrix(path)
        assert m.tobytes() == mat.tobytes()
