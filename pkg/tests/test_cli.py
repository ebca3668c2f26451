import re

import pytest

from graspfusion.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main

TINY = ["--d", "8", "--heads", "2", "--layers", "1", "--epochs", "2", "--batch-size", "16"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture()
def data_file(tmp_path, capsys):
    path = tmp_path / "d.vtg"
    assert run(capsys, "gen-data", "--n", 40, "--seed", 7, "--out", path)[0] == EXIT_OK
    return path


def test_gen_data_reports_count_and_ratio(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-data", "--n", 300, "--seed", 7, "--out", tmp_path / "d.vtg")
    assert code == EXIT_OK
    assert "samples 300" in out
    ratio = float(re.search(r"positive_fraction (\S+)", out).group(1))
    assert 0.5 <= ratio <= 0.7


def test_gen_data_is_byte_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "gen-data", "--n", 25, "--seed", 3, "--out", tmp_path / f"{name}.vtg")
    assert (tmp_path / "a.vtg").read_bytes() == (tmp_path / "b.vtg").read_bytes()


def test_zero_samples_is_a_usage_error(tmp_path, capsys):
    assert run(capsys, "gen-data", "--n", 0, "--out", tmp_path / "x.vtg")[0] == EXIT_USAGE


def test_unknown_command_and_flags_are_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == EXIT_USAGE
    assert run(capsys, "gen-data", "--bogus", 1)[0] == EXIT_USAGE
    assert run(capsys, "gen-data")[0] == EXIT_USAGE  # missing out


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# comment\nn = 12\nseed = 1\nout = {tmp_path / 'c.vtg'}\n")
    code, out, _ = run(capsys, "gen-data", "--config", cfg, "--n", 15)
    assert code == EXIT_OK
    assert "# n = 15" in out and "# seed = 1" in out
    assert "samples 15" in out


def test_unknown_config_key_fails_closed(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n = 5\nlearning_rate = 3\n")
    code, _, err = run(capsys, "gen-data", "--config", cfg, "--out", tmp_path / "x.vtg")
    assert code == EXIT_USAGE and "learning_rate" in err


def test_malformed_config_line(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("just words\n")
    assert run(capsys, "gen-data", "--config", cfg)[0] == EXIT_USAGE


def test_bad_value_is_a_usage_error(tmp_path, capsys):
    assert run(capsys, "gen-data", "--n", "many", "--out", tmp_path / "x.vtg")[0] == EXIT_USAGE


def test_missing_input_is_an_io_error(tmp_path, capsys):
    assert run(capsys, "eval", "--checkpoint", tmp_path / "none.xmf", "--data", tmp_path / "none.vtg")[0] == EXIT_IO


def test_corrupt_magic_is_a_format_error(tmp_path, capsys, data_file):
    bad = tmp_path / "bad.vtg"
    bad.write_bytes(b"XXXX" + data_file.read_bytes()[4:])
    code, _, err = run(capsys, "train", "--data", bad, "--out", tmp_path / "m.xmf", *TINY)
    assert code == EXIT_IO
    assert "bad file format" in err


def test_train_then_eval_reproduces_final_accuracy(tmp_path, capsys, data_file):
    ckpt, csv_path = tmp_path / "m.xmf", tmp_path / "m.csv"
    code, out, _ = run(capsys, "train", "--data", data_file, "--out", ckpt, "--metrics", csv_path, *TINY)
    assert code == EXIT_OK
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "run,fold,epoch,loss,accuracy,precision,recall"
    assert len(rows) == 1 + 2 + 1
    final_acc = float(rows[-1].split(",")[4])
    code, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--data", data_file)
    assert code == EXIT_OK
    assert float(re.search(r"^accuracy (\S+)", out, re.M).group(1)) == pytest.approx(final_acc, abs=1e-9)


def test_train_metrics_are_reproducible(tmp_path, capsys, data_file):
    for name in ("a", "b"):
        run(capsys, "train", "--data", data_file, "--out", tmp_path / f"{name}.xmf",
            "--metrics", tmp_path / f"{name}.csv", *TINY)
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    assert (tmp_path / "a.xmf").read_bytes() == (tmp_path / "b.xmf").read_bytes()


def test_ablate_prints_five_rows(tmp_path, capsys, data_file):
    code, out, _ = run(capsys, "ablate", "--data", data_file, "--test", data_file, "--epochs", 1,
                       "--d", 8, "--heads", 2, "--layers", 1, "--metrics", tmp_path / "a.csv")
    assert code == EXIT_OK
    table = [line for line in out.splitlines() if not line.startswith("#")]
    assert table[0].startswith("method,")
    assert [row.split(",")[0] for row in table[1:]] == ["visual-only", "tactile-only", "concat", "ours-m", "ours"]
    csv_rows = (tmp_path / "a.csv").read_text().splitlines()
    assert len(csv_rows) == 1 + 5 * 3 * 2


def test_gan_commands(tmp_path, capsys):
    pairs, ckpt = tmp_path / "p.vtp", tmp_path / "g.xmf"
    assert run(capsys, "gen-pairs", "--n", 10, "--out", pairs)[0] == EXIT_OK
    code, out, _ = run(capsys, "train-gan", "--data", pairs, "--out", ckpt, "--epochs", 1, "--width", 4)
    assert code == EXIT_OK
    trained = float(re.search(r"test_mean_ssim (\S+)", out).group(1))
    code, out, _ = run(capsys, "eval-gan", "--data", pairs, "--checkpoint", ckpt)
    assert code == EXIT_OK
    assert float(re.search(r"mean_ssim (\S+)", out).group(1)) == pytest.approx(trained, abs=1e-9)
    lines = [line for line in out.splitlines() if not line.startswith("#")]
    assert lines[0] == "pair,ssim" and len(lines) == 1 + 2 + 1
    assert run(capsys, "eval-gan", "--data", pairs)[0] == EXIT_USAGE


def test_identity_generator_on_identical_pairs(tmp_path, capsys):
    pairs = tmp_path / "same.vtp"
    run(capsys, "gen-pairs", "--n", 10, "--corruption", "none", "--out", pairs)
    code, out, _ = run(capsys, "eval-gan", "--data", pairs, "--generator", "identity", "--split", "all")
    assert code == EXIT_OK
    assert float(re.search(r"mean_ssim (\S+)", out).group(1)) == pytest.approx(1.0, abs=1e-9)


def test_policy_demo_with_oracle(tmp_path, capsys):
    out_csv = tmp_path / "policy.csv"
    code, out, _ = run(capsys, "policy-demo", "--predictor", "oracle", "--grasps", 12, "--out", out_csv)
    assert code == EXIT_OK
    rows = out_csv.read_text().splitlines()
    assert rows[0] == "grasp,chosen_force,predicted,actual"
    assert len(rows) == 13
    assert "fixed 30N" in out and "fixed 10N" in out


def test_policy_demo_averages_checkpoints(tmp_path, capsys, data_file):
    ckpt = tmp_path / "m.xmf"
    run(capsys, "train", "--data", data_file, "--out", ckpt, *TINY)
    code, out, _ = run(capsys, "policy-demo", "--checkpoint", f"{ckpt},{ckpt}", "--grasps", 3,
                       "--lift-threshold", 0.6)
    assert code == EXIT_OK and "# lift_threshold = 0.6" in out
    assert run(capsys, "policy-demo", "--checkpoint", ckpt, "--lift-threshold", 1.5)[0] == EXIT_USAGE


def test_policy_demo_needs_a_checkpoint(tmp_path, capsys):
    assert run(capsys, "policy-demo", "--grasps", 3)[0] == EXIT_USAGE
    assert run(capsys, "policy-demo", "--checkpoint", tmp_path / "missing.xmf")[0] == EXIT_IO
