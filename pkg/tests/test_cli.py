import numpy as np
import pytest

from otfs_urllc.harness.cli import load_pair, main, save_pair
from otfs_urllc.harness.sweep import read_csv
from otfs_urllc.link import fer_theory
from otfs_urllc.otfs import make_constellation

TINY = """\
seed: 3
train: {n_examples: 12, seq_len: 8, max_iters: 3, eval_every: 1, batch_size: 4}
sweep:
  snr_grid_db: [10]
  n_channels: 2
  n_frames_per_point: 200
  max_frames_per_point: 400
  min_errors: 1
  perfect_iters: 2
  schemes: [ddcl, ddcl_theory, mmse_baseline]
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return str(p)


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_unknown_flag(self, tmp_path):
        assert main(["gen-data", "-o", str(tmp_path / "x"), "--bogus"]) == 2

    def test_no_subcommand(self):
        assert main([]) == 2

    def test_bad_config_value(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text("link: {K: 99}\n")
        assert main(["gen-data", "-c", str(p), "-o", str(tmp_path / "d")]) == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and "link.K" in err[0]

    def test_unknown_config_key(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("link: {colour: red}\n")
        assert main(["gen-data", "-c", str(p), "-o", str(tmp_path / "d")]) == 1

    def test_missing_config_file(self, tmp_path):
        assert main(["gen-data", "-c", str(tmp_path / "nope.yaml"), "-o", str(tmp_path / "d")]) == 1


class TestGenData:
    def test_same_seed_same_bytes(self, tiny_cfg, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        assert main(["gen-data", "-c", tiny_cfg, "--seed", "7", "-o", str(a)]) == 0
        assert main(["gen-data", "-c", tiny_cfg, "--seed", "7", "-o", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_seed_override_changes_data(self, tiny_cfg, tmp_path):
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        main(["gen-data", "-c", tiny_cfg, "--seed", "7", "-o", str(a)])
        main(["gen-data", "-c", tiny_cfg, "--seed", "8", "-o", str(b)])
        assert a.read_bytes() != b.read_bytes()


class TestTrainAndSweep:
    def test_sweep_needs_model(self, tiny_cfg, tmp_path, capsys):
        assert main(["sweep", "-c", tiny_cfg, "-o", str(tmp_path / "s.csv")]) == 1
        err = capsys.readouterr().err
        assert "checkpoint" in err and len(err.strip().splitlines()) == 1

    def test_sweep_missing_checkpoint_named(self, tiny_cfg, tmp_path, capsys):
        missing = tmp_path / "gone.ckpt"
        assert main(["sweep", "-c", tiny_cfg, "-m", str(missing), "-o", str(tmp_path / "s.csv")]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_train_sweep_plot(self, tiny_cfg, tmp_path):
        data, ckpt, csv, png = (tmp_path / n for n in ("d.bin", "m.ckpt", "s.csv", "s.png"))
        assert main(["gen-data", "-c", tiny_cfg, "-o", str(data)]) == 0
        assert main(["train", "-c", tiny_cfg, "-d", str(data), "-o", str(ckpt)]) == 0
        assert ckpt.stat().st_size > 0
        assert main(["sweep", "-c", tiny_cfg, "-m", str(ckpt), "-o", str(csv), "--plot", str(png)]) == 0
        recs = read_csv(csv)
        assert [r["scheme"] for r in recs] == ["ddcl", "ddcl_theory", "mmse_baseline"]
        assert all(r["seed"] == 3 for r in recs)
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        out = tmp_path / "again.png"
        assert main(["plot", str(csv), "-o", str(out), "--title", "tiny"]) == 0
        assert out.stat().st_size > 0

    def test_train_rejects_mismatched_data(self, tiny_cfg, tmp_path):
        data = tmp_path / "d.bin"
        main(["gen-data", "-c", tiny_cfg, "-o", str(data)])
        other = tmp_path / "other.yaml"
        other.write_text(TINY.replace("seed: 3", "seed: 3\nlink: {tau: 4}"))
        assert main(["train", "-c", str(other), "-d", str(data), "-o", str(tmp_path / "m")]) == 1


class TestEvalTheory:
    @pytest.mark.parametrize("order", [4, 16])
    def test_matches_library(self, tmp_path, capsys, order):
        rng = np.random.default_rng(order)
        H = (rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))) / 8
        P = np.linalg.qr(rng.standard_normal((32, 8)) + 1j * rng.standard_normal((32, 8)))[0]
        H_hat = H + 0.01 * rng.standard_normal((32, 32))
        path = tmp_path / "pair.bin"
        save_pair(path, H, P, H_hat)
        assert main(["eval-theory", str(path), "--snr-db", "12", "--order", str(order)]) == 0
        printed = float(capsys.readouterr().out.strip())
        expected = fer_theory(H, P, 10 ** -1.2, make_constellation(order), H_hat)
        assert abs(printed - expected) <= 1e-12

    def test_pair_round_trip(self, tmp_path):
        H, P = np.eye(4) * (1 + 1j), np.eye(4)[:, :2]
        save_pair(tmp_path / "p", H, P)
        H2, P2, Hh = load_pair(tmp_path / "p")
        np.testing.assert_array_equal(H2, H)
        np.testing.assert_array_equal(P2, P)
        assert Hh is None

    def test_sigma2_and_snr_exclusive(self, tmp_path):
        save_pair(tmp_path / "p", np.eye(2), np.eye(2))
        assert main(["eval-theory", str(tmp_path / "p"), "--snr-db", "1", "--sigma2", "0.1"]) == 2
