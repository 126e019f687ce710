import struct

import numpy as np
import pytest

from spindbm import DbmParams, DbmShape, load_params, save_params
from spindbm.cli import main
from spindbm.data import read_pgm


def write_config(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()), encoding="utf-8")
    return str(path)


def bias_only_checkpoint(path, b_v):
    n_v = len(b_v)
    params = DbmParams(np.zeros((n_v, 2)), np.zeros((2, 1)),
                       np.asarray(b_v, dtype=np.float64), np.zeros(2), np.zeros(1))
    save_params(params, path)
    return str(path)


class TestTrain:
    def test_missing_config_exits_2(self, capsys):
        assert main(["train", "--config", "/nonexistent/cfg.txt"]) == 2
        assert "not found" in capsys.readouterr().err

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.txt", n_v=4, steps=1, data="synthetic:2x4",
                           wat=3)
        assert main(["train", "--config", cfg]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_steps_zero_writes_initial_checkpoint_only(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.txt", n_v=4, n_h1=3, n_h2=2, steps=0,
                           data="synthetic:2x4", out_dir=str(out))
        assert main(["train", "--config", cfg]) == 0
        assert (out / "ckpt-000000.udbm").exists()
        assert len(list(out.glob("ckpt-*.udbm"))) == 1

    def test_smoke_run_logs_every_step(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.txt", n_v=4, n_h1=3, n_h2=2, steps=200,
                           batch_size=1, seed=11, optimizer="adam",
                           tau_max=100000, data="synthetic:4x4", out_dir=str(out))
        assert main(["train", "--config", cfg]) == 0
        lines = (out / "train_log.csv").read_text().splitlines()
        rows = [l for l in lines if l and not l.startswith("#")]
        assert rows[0] == "step,mean_tau_pos,mean_tau_neg,mean_T_pos,mean_T_neg,grad_norm,wall_ms"
        assert len(rows) == 201
        assert rows[-1].split(",")[0] == "200"

    def test_config_echoed_into_log_header(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.txt", n_v=4, steps=1, seed=3,
                           data="synthetic:2x4", out_dir=str(out))
        assert main(["train", "--config", cfg, "--steps", "2"]) == 0
        header = [l for l in (out / "train_log.csv").read_text().splitlines()
                  if l.startswith("#")]
        effective = dict(l[2:].split("=", 1) for l in header)
        assert effective["steps"] == "2"       # flag overrode the file
        assert effective["seed"] == "3"
        assert effective["n_h1"] == "4"        # defaulted to n_v

    def test_flag_overrides_file(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.txt", n_v=4, steps=5,
                           data="synthetic:2x4", out_dir=str(out))
        assert main(["train", "--config", cfg, "--steps", "1"]) == 0
        rows = [l for l in (out / "train_log.csv").read_text().splitlines()
                if l and not l.startswith("#")]
        assert len(rows) == 2  # header + 1 step

    def test_resume_key_continues_from_checkpoint(self, tmp_path):
        out1, out2 = tmp_path / "one", tmp_path / "two"
        cfg1 = write_config(tmp_path / "c1.txt", n_v=4, n_h1=3, n_h2=2, steps=3,
                            data="synthetic:2x4", out_dir=str(out1))
        assert main(["train", "--config", cfg1]) == 0
        ckpt = out1 / "ckpt-000003.udbm"
        assert ckpt.exists()
        cfg2 = write_config(tmp_path / "c2.txt", n_v=4, n_h1=3, n_h2=2, steps=2,
                            data="synthetic:2x4", out_dir=str(out2),
                            resume=str(ckpt))
        assert main(["train", "--config", cfg2]) == 0
        # resumed run starts from the checkpoint, not a fresh init
        assert load_params(out2 / "ckpt-000000.udbm").as_vector().tolist() \
            == load_params(ckpt).as_vector().tolist()


class TestSample:
    def test_n_zero_writes_empty_output(self, tmp_path):
        ckpt = bias_only_checkpoint(tmp_path / "m.udbm", [1.0, -1.0])
        out = tmp_path / "s"
        assert main(["sample", "--checkpoint", ckpt, "--n", "0", "--out", str(out)]) == 0
        arr = np.load(out / "samples.npy")
        assert arr.shape == (0, 2)

    def test_deterministic_under_seed(self, tmp_path):
        ckpt = bias_only_checkpoint(tmp_path / "m.udbm", [0.5, -0.5, 1.5])
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["sample", "--checkpoint", ckpt, "--n", "7",
                         "--out", str(out), "--seed", "3"]) == 0
        assert (a / "samples.npy").read_bytes() == (b / "samples.npy").read_bytes()

    def test_bias_only_checkpoint_gives_sign_of_bias(self, tmp_path):
        # one 1x1 pixel = 8 visible units; biases pick the bit pattern of 123
        bits = np.array([0, 1, 1, 1, 1, 0, 1, 1]) * 2.0 - 1.0
        ckpt = bias_only_checkpoint(tmp_path / "m.udbm", bits * 3.0)
        out = tmp_path / "s"
        assert main(["sample", "--checkpoint", ckpt, "--n", "2", "--out", str(out),
                     "--height", "1", "--width", "1"]) == 0
        img = read_pgm(out / "sample-000.pgm")
        assert img[0, 0] == 123
        rows = np.load(out / "samples.npy")
        np.testing.assert_array_equal(rows[0], bits.astype(np.int8))

    def test_bad_geometry_exits_2(self, tmp_path):
        ckpt = bias_only_checkpoint(tmp_path / "m.udbm", [1.0, -1.0])
        assert main(["sample", "--checkpoint", ckpt, "--n", "1",
                     "--out", str(tmp_path / "s"), "--height", "2", "--width", "2"]) == 2


class TestComplete:
    def _image_checkpoint(self, path, img):
        # bias-dominated model whose visible biases reproduce one 8-bit image
        from spindbm.data import to_spin_dataset
        spins = to_spin_dataset(img[None, :, :]).spins()[0]
        return bias_only_checkpoint(path, spins * 4.0)

    def test_full_observation_mask_is_identity(self, tmp_path):
        img = (np.arange(4, dtype=np.uint8).reshape(2, 2) * 60)
        ckpt = self._image_checkpoint(tmp_path / "m.udbm", img)
        np.save(tmp_path / "in.npy", img[None, :, :])
        out = tmp_path / "c"
        assert main(["complete", "--checkpoint", ckpt, "--input", str(tmp_path / "in.npy"),
                     "--mask", "rect:0:0:0:0", "--out", str(out)]) == 0
        np.testing.assert_array_equal(read_pgm(out / "completed-000.pgm"), img)

    def test_all_masked_still_valid_image(self, tmp_path):
        img = np.full((2, 2), 200, dtype=np.uint8)
        ckpt = self._image_checkpoint(tmp_path / "m.udbm", img)
        np.save(tmp_path / "in.npy", np.zeros((1, 2, 2), dtype=np.uint8))
        out = tmp_path / "c"
        assert main(["complete", "--checkpoint", ckpt, "--input", str(tmp_path / "in.npy"),
                     "--mask", "rect:0:2:0:2", "--out", str(out)]) == 0
        got = read_pgm(out / "completed-000.pgm")
        np.testing.assert_array_equal(got, img)  # bias-dominated fill

    def test_lower_half_mask_keeps_top_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(4, 3)).astype(np.uint8)
        ckpt = self._image_checkpoint(tmp_path / "m.udbm", img)
        np.save(tmp_path / "in.npy", img[None, :, :])
        out = tmp_path / "c"
        assert main(["complete", "--checkpoint", ckpt, "--input", str(tmp_path / "in.npy"),
                     "--out", str(out)]) == 0
        got = read_pgm(out / "completed-000.pgm")
        np.testing.assert_array_equal(got[:2], img[:2])   # observed rows bit-exact

    def test_spin_rows_with_mask_file(self, tmp_path):
        ckpt = bias_only_checkpoint(tmp_path / "m.udbm", [3.0, -3.0, 3.0, -3.0])
        rows = np.array([[1, 1, 1, 1]], dtype=np.int8)
        np.save(tmp_path / "rows.npy", rows)
        np.save(tmp_path / "mask.npy", np.array([True, False, False, True]))
        out = tmp_path / "c"
        assert main(["complete", "--checkpoint", ckpt, "--input", str(tmp_path / "rows.npy"),
                     "--mask-file", str(tmp_path / "mask.npy"), "--out", str(out)]) == 0
        got = np.load(out / "completed.npy")
        np.testing.assert_array_equal(got[0], [1, -1, 1, 1])

    def test_spin_rows_without_mask_file_exits_2(self, tmp_path):
        ckpt = bias_only_checkpoint(tmp_path / "m.udbm", [3.0, -3.0])
        np.save(tmp_path / "rows.npy", np.array([[1, 1]], dtype=np.int8))
        assert main(["complete", "--checkpoint", ckpt, "--input", str(tmp_path / "rows.npy"),
                     "--out", str(tmp_path / "c")]) == 2


class TestBench:
    def test_single_dim_one_replicate_four_rows(self, tmp_path):
        out = tmp_path / "b.csv"
        assert main(["bench", "--dims", "1", "--replicates", "1",
                     "--out", str(out), "--threads", "1"]) == 0
        rows = out.read_text().splitlines()
        assert len(rows) == 5  # header + 4 arms

    def test_seed_repeatability(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            assert main(["bench", "--dims", "2,3", "--replicates", "2",
                         "--seed", "7", "--out", str(path), "--threads", "1"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_summary_flag_prints_table(self, tmp_path, capsys):
        assert main(["bench", "--dims", "2", "--replicates", "2",
                     "--out", str(tmp_path / "b.csv"), "--summary", "--threads", "1"]) == 0
        assert "mh+local_mode" in capsys.readouterr().out

    def test_arm_subset(self, tmp_path):
        out = tmp_path / "b.csv"
        assert main(["bench", "--dims", "2", "--replicates", "3",
                     "--arms", "mh+local_mode", "--out", str(out), "--threads", "1"]) == 0
        rows = out.read_text().splitlines()
        assert len(rows) == 4
        assert all(r.startswith("mh+local_mode") for r in rows[1:])


class TestOracleCheck:
    def test_too_few_samples_exits_2(self, capsys):
        assert main(["oracle-check", "--samples", "100"]) == 2
        assert "power" in capsys.readouterr().out

    def test_passes_with_adequate_samples(self, capsys):
        assert main(["oracle-check", "--samples", "3000", "--min-samples", "1000"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out
