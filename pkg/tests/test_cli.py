import json
import os

import numpy as np
import pytest

from bitslice.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from bitslice.cli import main
from bitslice.trainkit import MlpModel, init_mlp


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def trained(tmp_path, fake_mnist, capsys):
    out = tmp_path / "run"
    code, _, err = run(capsys, "train", "--data", fake_mnist, "--out", out, "--epochs", 2, "--hidden", 16, "--seed", 3)
    assert code == 0, err
    return out


def test_train_writes_run_directory(trained):
    assert {"checkpoint.ckpt", "history.jsonl", "report.json", "config.txt"} <= set(os.listdir(trained))
    lines = (trained / "history.jsonl").read_text().splitlines()
    assert [json.loads(line)["epoch"] for line in lines] == [1, 2]
    rep = json.loads((trained / "report.json").read_text())
    assert len(rep["slice_ratios"]) == 4 and 0 <= rep["accuracy"] <= 1
    cfg = (trained / "config.txt").read_text()
    assert "hidden = 16" in cfg and "seed = 3" in cfg
    ck = load_checkpoint(trained / "checkpoint.ckpt")
    assert ck.epoch == 2 and ck.model.sizes == [784, 16, 10]


def test_train_learns_fake_digits(tmp_path, fake_mnist, capsys):
    code, _, _ = run(capsys, "train", "--data", fake_mnist, "--out", tmp_path / "r", "--epochs", 15, "--hidden", 32)
    assert code == 0
    assert json.loads((tmp_path / "r" / "report.json").read_text())["accuracy"] > 0.9


def test_train_zero_epochs(tmp_path, fake_mnist, capsys):
    code, _, _ = run(capsys, "train", "--data", fake_mnist, "--out", tmp_path / "r", "--epochs", 0, "--hidden", 8)
    assert code == 0
    assert (tmp_path / "r" / "history.jsonl").read_text() == ""


def test_missing_dataset_names_path(tmp_path, capsys):
    missing = tmp_path / "no-such-data"
    code, _, err = run(capsys, "train", "--data", missing, "--out", tmp_path / "r")
    assert code == 2 and str(missing) in err


def test_bad_idx_is_data_error(tmp_path, fake_mnist, capsys):
    with open(os.path.join(fake_mnist, "train-labels-idx1-ubyte"), "r+b") as fh:
        fh.write(b"\0\0\0\0")
    code, _, err = run(capsys, "train", "--data", fake_mnist, "--out", tmp_path / "r")
    assert code == 2 and "magic" in err


def test_usage_errors(tmp_path, fake_mnist, capsys):
    assert run(capsys, "train", "--out", tmp_path / "r")[0] == 1
    assert run(capsys, "train", "--data", fake_mnist, "--out", tmp_path / "r", "--lr", -1)[0] == 1
    assert run(capsys, "train", "--mode", "l7")[0] == 1
    assert run(capsys)[0] == 1


def test_config_file_and_flag_override(tmp_path, fake_mnist, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text(f"# recipe\ndata = {fake_mnist}\nepochs = 1\nhidden = 12\nmode = l1\nalpha = 1e-4\n")
    code, _, _ = run(capsys, "train", "--config", conf, "--out", tmp_path / "r", "--hidden", 10)
    assert code == 0
    resolved = (tmp_path / "r" / "config.txt").read_text()
    assert "hidden = 10" in resolved and "mode = l1" in resolved and "alpha = 0.0001" in resolved


def test_unknown_config_key(tmp_path, fake_mnist, capsys):
    conf = tmp_path / "bad.conf"
    conf.write_text("momentum = 0.9\n")
    code, _, err = run(capsys, "train", "--config", conf, "--data", fake_mnist, "--out", tmp_path / "r")
    assert code == 1 and "momentum" in err


def test_training_is_byte_reproducible(tmp_path, fake_mnist, capsys):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        args = ["train", "--data", fake_mnist, "--out", out, "--epochs", 2, "--hidden", 16, "--mode", "bl1", "--alpha", 1e-4]
        assert run(capsys, *args)[0] == 0
        outs.append(out)
    for f in ("checkpoint.ckpt", "history.jsonl", "report.json", "config.txt"):
        if f == "config.txt":
            continue  # contains the differing --out path
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_warm_start(tmp_path, trained, fake_mnist, capsys):
    ck = trained / "checkpoint.ckpt"
    args = ["train", "--data", fake_mnist, "--out", tmp_path / "w", "--mode", "bl1", "--warm-start", ck, "--alpha", 1e-5]
    code, _, err = run(capsys, *args, "--seed", 7, "--epochs", 1, "--hidden", 16)
    assert code == 0, err
    code, _, err = run(capsys, *args, "--epochs", 1, "--hidden", 32)
    assert code == 2 and "sizes" in err


def test_quantize_and_slice(tmp_path, trained, capsys):
    ck = trained / "checkpoint.ckpt"
    code, out, _ = run(capsys, "quantize", "--checkpoint", ck, "--out", tmp_path / "q.npz")
    assert code == 0
    info = json.loads(out)
    assert [layer["shape"] for layer in info["layers"]] == [[784, 16], [16, 10]]
    assert np.load(tmp_path / "q.npz")["codes_0"].max() <= 255
    code, out, _ = run(capsys, "slice", "--checkpoint", ck, "--out", tmp_path / "s.npz")
    assert code == 0
    sl = np.load(tmp_path / "s.npz")["slices_0"]
    assert sl.shape == (4, 784, 16) and sl.max() <= 3
    assert json.loads(out)["slice_order"] == "msb_first"


def test_report_from_ratios(capsys):
    code, out, _ = run(capsys, "report", "--ratios", "Bl1=0.84,4.02,4.27,9.58", "--accuracy", 0.9767)
    assert code == 0
    assert "4.68±3.14%" in out and "97.67%" in out
    header = out.splitlines()[0].split()
    assert header == ["Method", "Accuracy", "B^3", "B^2", "B^1", "B^0", "Average"]


def test_report_json(capsys, tmp_path):
    code, out, _ = run(capsys, "report", "--ratios", "0.84,4.02,4.27,9.58", "--json", "--out", tmp_path / "r.json")
    assert code == 0
    d = json.loads(out)
    assert round(100 * d["mean"], 2) == 4.68 and round(100 * d["std"], 2) == 3.14
    assert json.loads((tmp_path / "r.json").read_text()) == d


def test_report_checkpoints_with_accuracy(trained, fake_mnist, capsys):
    ck = trained / "checkpoint.ckpt"
    code, out, _ = run(capsys, "report", "--checkpoint", f"mine={ck}", "--data", fake_mnist)
    assert code == 0 and "mine" in out and "%" in out.splitlines()[2].split()[1]


def test_report_zero_checkpoint(tmp_path, capsys):
    m = init_mlp((6, 4, 3))
    zero = MlpModel([np.zeros_like(w) for w in m.weights], m.biases)
    save_checkpoint(tmp_path / "z.ckpt", Checkpoint(zero))
    code, out, err = run(capsys, "report", "--checkpoint", tmp_path / "z.ckpt")
    assert code == 0, err
    assert out.splitlines()[2].split()[2:] == ["0.00%"] * 4 + ["0.00±0.00%"]


def test_corrupt_checkpoint_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    for cmd in ("report", "map", "map-adc", "quantize"):
        code, _, err = run(capsys, cmd, "--checkpoint", bad)
        assert code == 2 and "bad.ckpt" in err
    assert run(capsys, "report", "--checkpoint", tmp_path / "missing.ckpt")[0] == 2


def test_adc_table(capsys):
    code, out, _ = run(capsys, "adc", "--resolutions", "1,3,3,3")
    assert code == 0
    rows = [line.split() for line in out.splitlines()[1:]]
    assert rows[0] == ["XB3", "8", "bit", "1", "bit", "28.4x", "8x", "2x"]
    assert rows[1] == ["XB2", "8", "bit", "3", "bit", "14.2x", "2.67x", "2x"]


def test_adc_baseline_resolution(capsys):
    code, out, _ = run(capsys, "adc", "--resolutions", "8", "--json")
    row = json.loads(out)["rows"][0]
    assert (row["energy_saving"], row["speedup"], row["area_saving"]) == (1.0, 1.0, 1.0)
    assert run(capsys, "adc", "--resolutions", "9")[0] == 1


def test_map_and_map_adc(trained, fake_mnist, capsys):
    ck = trained / "checkpoint.ckpt"
    code, out, _ = run(capsys, "map", "--checkpoint", ck, "--json")
    assert code == 0
    payload = json.loads(out)
    assert payload["empirical"] is False and [g["group"] for g in payload["groups"]] == [3, 2, 1, 0]
    assert payload["groups"][0]["tile_count_pos"] == 7 + 1
    code, out, _ = run(capsys, "map", "--checkpoint", ck, "--inputs", fake_mnist, "--samples", 5, "--json")
    assert code == 0 and json.loads(out)["empirical"] is True
    code, out, _ = run(capsys, "map-adc", "--checkpoint", ck)
    assert code == 0 and "28.4x" in out and "14.2x" in out
    code, out, _ = run(capsys, "map-adc", "--checkpoint", ck, "--json")
    d = json.loads(out)
    assert {"mapping", "computed", "targets"} <= set(d)


def test_map_json_is_reproducible(trained, capsys):
    ck = trained / "checkpoint.ckpt"
    first = run(capsys, "map-adc", "--checkpoint", ck, "--json")[1]
    assert run(capsys, "map-adc", "--checkpoint", ck, "--json")[1] == first


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "bitslice", "adc", "--resolutions", "1"], capture_output=True, text=True)
    assert res.returncode == 0 and "28.4x" in res.stdout
