import json

import pytest
import torch

from ufaformer import cli, selftest
from ufaformer.checkpoint import load_tensors
from ufaformer.data import decode_pnm
from ufaformer.experiments import box_mask, is_monotone_decreasing, overfit_config, window_means


def run_cli(argv, capsys):
    try:
        code = cli.main(argv)
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cli.main(["gen-fixtures", "--out", str(root / "fx"), "--n", "12", "--seed", "3"])
    cli.main(["train", "--data", str(root / "fx"), "--steps", "3", "--out", str(root / "run"), "--seed", "1"])
    return root


def test_train_writes_checkpoint_config_and_curve(trained):
    run = trained / "run"
    lines = (run / "loss.csv").read_text().splitlines()
    assert lines[0].startswith("step,") and "total" in lines[0] and len(lines) == 4
    cfg = json.loads((run / "config.json").read_text())
    assert cfg["seed"] == 1 and cfg["steps"] == 3
    tensors, meta = load_tensors(run / "model.ckpt")
    assert meta["run"]["seed"] == 1 and meta["vocab"][:3] == ["[PAD]", "[CLS]", "[UNK]"]
    assert any(name.startswith("image_encoder") for name in tensors)


def test_eval_writes_report_and_predictions(trained, capsys):
    out = trained / "ev"
    code, stdout, _ = run_cli(["eval", "--data", str(trained / "fx"), "--checkpoint",
                               str(trained / "run" / "model.ckpt"), "--out", str(out)], capsys)
    assert code == 0 and "Binary" in stdout
    header = (out / "report.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["auc", "eer", "acc"] and header[-1] == "f1_ta"
    rows = [json.loads(x) for x in (out / "predictions.jsonl").read_text().splitlines()]
    assert len(rows) == 12
    assert set(rows[0]) == {"id", "binary_score", "fg_scores", "box", "box_conf", "token_scores"}
    assert len(rows[0]["fg_scores"]) == 4 and len(rows[0]["box"]) == 4


def test_eval_is_repeatable(trained, capsys):
    ck = str(trained / "run" / "model.ckpt")
    for name in ("a", "b"):
        run_cli(["eval", "--data", str(trained / "fx"), "--checkpoint", ck, "--out", str(trained / name)], capsys)
    assert (trained / "a" / "report.csv").read_bytes() == (trained / "b" / "report.csv").read_bytes()


def _first_image(trained):
    return str(sorted((trained / "fx" / "images").iterdir())[0])


def test_infer_prints_prediction(trained, capsys):
    code, stdout, _ = run_cli(["infer", "--checkpoint", str(trained / "run" / "model.ckpt"),
                               "--image", _first_image(trained), "--text", "a man smiles"], capsys)
    pred = json.loads(stdout)
    assert code == 0 and 0 <= pred["binary_score"] <= 1 and len(pred["token_scores"]) == 3


def test_saliency_writes_pgm_of_input_shape(trained, capsys):
    out = trained / "map.pgm"
    code, _, _ = run_cli(["saliency", "--checkpoint", str(trained / "run" / "model.ckpt"),
                          "--image", _first_image(trained), "--text", "a dog", "--out", str(out)], capsys)
    assert code == 0 and out.read_bytes()[:2] == b"P5"
    img = decode_pnm(out.read_bytes())
    assert img.shape == (3, 32, 32)
    assert float(img.max()) == 1.0 and float(img.min()) == 0.0


def test_errors_are_one_json_line(tmp_path, capsys):
    code, _, err = run_cli(["eval", "--data", str(tmp_path), "--checkpoint", str(tmp_path / "x.ckpt")], capsys)
    assert code != 0
    lines = err.strip().splitlines()
    assert len(lines) == 1 and set(json.loads(lines[0])) == {"error", "message"}


def test_usage_errors_are_json(capsys):
    code, _, err = run_cli(["train"], capsys)
    assert code == 2 and json.loads(err)["error"] == "UsageError"
    code, _, err = run_cli(["train", "--data", "x", "--precision", "f16"], capsys)
    assert code == 2 and "f16" in json.loads(err)["message"]


def test_bad_config_is_reported(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"learning_rate": 1}')
    code, _, err = run_cli(["train", "--data", str(tmp_path), "--config", str(cfg)], capsys)
    assert code == 1 and json.loads(err)["error"] == "ConfigError"


def test_empty_manifest_is_an_error(tmp_path, capsys, trained):
    (tmp_path / "manifest.jsonl").write_text("")
    (tmp_path / "vocab.txt").write_text("[PAD]\n[CLS]\n[UNK]\n")
    code, _, err = run_cli(["eval", "--data", str(tmp_path), "--checkpoint",
                            str(trained / "run" / "model.ckpt")], capsys)
    assert code == 1 and "empty" in json.loads(err)["message"]


def test_checkpoint_without_meta_is_rejected(tmp_path, capsys):
    from ufaformer.checkpoint import save_tensors
    ck = tmp_path / "bare.ckpt"
    save_tensors({"w": torch.zeros(2)}, ck)
    code, _, err = run_cli(["infer", "--checkpoint", str(ck), "--image", "x", "--text", "y"], capsys)
    assert code == 1 and "run config" in json.loads(err)["message"]


def test_selftest_reports_every_check():
    lines = []
    assert selftest.run(lines.append)
    assert len(lines) == len(selftest.CHECKS) + 1
    assert all(ln.startswith("PASS") for ln in lines[:-1]) and lines[-1] == "selftest: all checks passed"


def test_selftest_failure_sets_nonzero_exit(monkeypatch, capsys):
    def broken():
        raise AssertionError("injected")

    monkeypatch.setitem(selftest.CHECKS, "dwt", broken)
    for name in list(selftest.CHECKS):
        if name != "dwt":
            monkeypatch.setitem(selftest.CHECKS, name, lambda: "skipped")
    code, stdout, _ = run_cli(["selftest"], capsys)
    assert code == 1 and "FAIL dwt" in stdout and "FAILED" in stdout


def test_window_means_and_monotone():
    assert window_means(list(range(45)), 20) == [9.5, 29.5]
    assert is_monotone_decreasing([3, 2, 2, 1])
    assert not is_monotone_decreasing([3, 2, 2.5])


def test_box_mask_counts_pixel_centres():
    m = box_mask((0.5, 0.5, 0.5, 0.25), 8)
    assert int(m.sum()) == 4 * 2 and bool(m[3:5, 2:6].all())


def test_overfit_profile():
    run = overfit_config()
    assert (run.steps, run.base_lr, run.batch_size, run.augment) == (500, 1e-3, 64, False)
    assert overfit_config(steps=10).steps == 10
