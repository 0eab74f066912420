import json

import pytest

from nmsosd.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main


@pytest.fixture
def cfg(tmp_path):
    f = tmp_path / "exp.json"
    f.write_text(json.dumps({
        "code": "ccsds_128_64", "snr_db": [2.6], "zeta3": 0.644,
        "stop": {"max_frames": 300, "min_frame_errors": 20}, "chunk_frames": 100,
        "osd": {"budget": 3}, "training": {"total_steps": 2, "batch_size": 8},
        "dia_training": {"steps": 3, "min_corpus": 5}, "output": {"output_dir": "out"}}))
    return f


def test_full_pipeline(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("NMSOSD_WORKERS", "2")
    d = tmp_path
    assert main(["train-nms", "--config", str(cfg), "--out", str(d / "p.json"), "--loss-log", str(d / "l.csv")]) == EXIT_OK
    assert main(["capture-failures", "--config", str(cfg), "--count", "12", "--out", str(d / "c.npz")]) == EXIT_OK
    assert main(["train-dia", "--config", str(cfg), "--corpus", str(d / "c.npz"), "--groups", "2",
                 "--out-dir", str(d / "m")]) == EXIT_OK
    assert (d / "m" / "dia_g1.json").exists()
    assert main(["calibrate-path", "--config", str(cfg), "--corpus", str(d / "c.npz"), "--out", str(d / "path.json")]) == EXIT_OK
    assert main(["sweep", "--config", str(cfg)]) == EXIT_OK
    assert (d / "out" / "sweep.csv").exists()
    assert main(["report", "--result", str(d / "out" / "sweep_result.json"), "--out-dir", str(d / "r")]) == EXIT_OK
    assert (d / "r" / "sweep.csv").read_bytes() == (d / "out" / "sweep.csv").read_bytes()


def test_config_errors_exit_1(tmp_path, cfg):
    assert main(["sweep", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"code": "ccsds_128_64", "snr_db": []}))
    assert main(["sweep", "--config", str(bad)]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        main(["frobnicate"])
    assert e.value.code == EXIT_CONFIG


def test_runtime_errors_exit_2(cfg, tmp_path):
    assert main(["capture-failures", "--config", str(cfg), "--count", "5", "--snr", "40",
                 "--max-frames", "100", "--out", str(tmp_path / "c.npz")]) == EXIT_RUNTIME

    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a corpus")
    assert main(["train-dia", "--config", str(cfg), "--corpus", str(bad), "--out-dir", str(tmp_path)]) == EXIT_RUNTIME


def test_missing_input_file_is_config_error(cfg, tmp_path):
    assert main(["train-dia", "--config", str(cfg), "--corpus", str(tmp_path / "nope.npz"),
                 "--out-dir", str(tmp_path)]) == EXIT_CONFIG
