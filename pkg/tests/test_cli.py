import numpy as np
import pytest

from deviceprint import pipeline
from deviceprint.cli import main
from deviceprint.errors import ConfigError

TINY = """
corpus.devices = 3
corpus.clips = 6
corpus.train_fraction = 0.67
corpus.clip_seconds = 2.5
corpus.seed = 7
gmm.components = 8
gmm.seed = 7
train.lr = 0.003
train.epochs = 3
train.batch = 8
train.seed = 7
"""


@pytest.fixture()
def tiny_cfg(tmp_path):
    cfg = pipeline.parse_config_text(TINY)
    cfg.set("paths.workdir", str(tmp_path / "work"))
    return cfg


def _cfg_file(tmp_path, cfg):
    path = tmp_path / "pipeline.cfg"
    path.write_text(cfg.canonical_text())
    return str(path)


def test_config_defaults_contract():
    cfg = pipeline.PipelineConfig()
    assert cfg.get("corpus.devices") == 5
    assert cfg.get("corpus.clips") == 40
    n_train = round(cfg.get("corpus.clips") * cfg.get("corpus.train_fraction"))
    assert (n_train, cfg.get("corpus.clips") - n_train) == (30, 10)


def test_config_round_trip():
    cfg = pipeline.parse_config_text(TINY)
    again = pipeline.parse_config_text(cfg.canonical_text())
    assert again == cfg
    assert again.canonical_text() == cfg.canonical_text()


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError):
        pipeline.parse_config_text("corpus.devices = 3\nbogus.key = 1\n")
    with pytest.raises(ConfigError):
        pipeline.parse_config_text("corpus.devices = not_a_number\n")


def test_config_value_kinds():
    cfg = pipeline.parse_config_text(
        "arch.channels = 4/8/16\ndsp.include_c0 = false\n"
        "ablate.frame_grid = 256:64,128:32\n")
    assert cfg.get("arch.channels") == (4, 8, 16)
    assert cfg.get("dsp.include_c0") is False
    assert cfg.get("ablate.frame_grid") == ((256.0, 64.0), (128.0, 32.0))


def test_synth_counts_and_idempotence(tiny_cfg, capsys):
    pipeline.stage_synth(tiny_cfg)
    out = capsys.readouterr().out
    assert "wrote 18 clips" in out
    assert "3 train / 2 test" not in out  # 4/2 split at 0.67
    assert "4 train / 2 test" in out
    pipeline.stage_synth(tiny_cfg)
    assert "up to date" in capsys.readouterr().out


def test_mfcc_counts_match_manifest(tiny_cfg, capsys):
    pipeline.stage_synth(tiny_cfg)
    manifest = pipeline.stage_mfcc(tiny_cfg)
    out = capsys.readouterr().out
    assert "18 extracted" in out
    files = sorted((tiny_cfg.workdir / "mfcc").glob("*.mfcc"))
    assert len(files) == len(manifest.entries)
    # re-extraction is byte-identical and skipped as up to date
    payloads = {f.name: f.read_bytes() for f in files}
    pipeline.stage_mfcc(tiny_cfg)
    assert "18 up to date" in capsys.readouterr().out
    for f in files:
        assert f.read_bytes() == payloads[f.name]


def test_missing_dependency_errors_name_missing_stage(tiny_cfg):
    from deviceprint.errors import DependencyError
    with pytest.raises(DependencyError, match="synth"):
        pipeline.stage_mfcc(tiny_cfg)
    pipeline.stage_synth(tiny_cfg, log=lambda *a: None)
    with pytest.raises(DependencyError, match="mfcc"):
        pipeline.stage_train_ubm(tiny_cfg, log=lambda *a: None)
    pipeline.stage_mfcc(tiny_cfg, log=lambda *a: None)
    with pytest.raises(DependencyError, match="train-ubm"):
        pipeline.stage_sgmm(tiny_cfg, log=lambda *a: None)
    pipeline.stage_train_ubm(tiny_cfg, log=lambda *a: None)
    pipeline.stage_sgmm(tiny_cfg, log=lambda *a: None)
    with pytest.raises(DependencyError, match="train"):
        pipeline.stage_eval(tiny_cfg, log=lambda *a: None)


def test_train_ubm_log_and_determinism(tmp_path, capsys):
    bytes_by_run = []
    for run in ("a", "b"):
        cfg = pipeline.parse_config_text(TINY)
        cfg.set("paths.workdir", str(tmp_path / run))
        pipeline.stage_synth(cfg, log=lambda *a: None)
        pipeline.stage_mfcc(cfg, log=lambda *a: None)
        out_path = pipeline.stage_train_ubm(cfg)
        bytes_by_run.append(out_path.read_bytes())
    log = capsys.readouterr().out
    lls = [float(line.rsplit(" ", 1)[1]) for line in log.splitlines()
           if "total log-likelihood" in line]
    assert len(lls) >= 2
    assert np.all(np.diff(np.array(lls).reshape(2, -1), axis=1) >= -1e-8)
    assert bytes_by_run[0] == bytes_by_run[1]


def test_ubm_single_component_quick(tiny_cfg, capsys):
    tiny_cfg.set("gmm.components", 1)
    pipeline.stage_synth(tiny_cfg, log=lambda *a: None)
    pipeline.stage_mfcc(tiny_cfg, log=lambda *a: None)
    pipeline.stage_train_ubm(tiny_cfg)
    out = capsys.readouterr().out
    assert "G=1" in out


def test_full_chain_and_eval_consistency(tiny_cfg, capsys):
    for stage in (pipeline.stage_synth, pipeline.stage_mfcc,
                  pipeline.stage_train_ubm, pipeline.stage_sgmm,
                  pipeline.stage_train):
        stage(tiny_cfg, log=lambda *a: None)
    metrics = pipeline.stage_eval(tiny_cfg, log=lambda *a: None)
    kv_text = (tiny_cfg.workdir / "eval" / "metrics.kv").read_text()
    kv = dict(line.split("=") for line in kv_text.splitlines())
    assert float(kv["accuracy"]) == metrics.accuracy
    csv_rows = (tiny_cfg.workdir / "eval" / "confusion.csv").read_text()
    total = sum(int(v) for row in csv_rows.strip().splitlines()
                for v in row.split(","))
    assert total == 6  # test clips
    # training is hash-gated: a rerun is a no-op
    pipeline.stage_train(tiny_cfg)
    assert "up to date" in capsys.readouterr().out


def test_ablate_rows_per_cell(tiny_cfg, capsys):
    tiny_cfg.set("ablate.frame_grid", ((256.0, 64.0), (128.0, 64.0)))
    pipeline.stage_synth(tiny_cfg, log=lambda *a: None)
    rows = pipeline.stage_ablate(tiny_cfg)
    assert len(rows) == 2
    assert (tiny_cfg.workdir / "ablate" / "ablate.csv").read_text().count(
        "\n") == 3


def test_cli_main_error_paths(tmp_path, capsys):
    code = main(["mfcc", "--workdir", str(tmp_path / "nowhere")])
    assert code == 1
    err = capsys.readouterr().err
    assert "error [mfcc]" in err and "synth" in err


def test_cli_main_synth_device_override(tmp_path, capsys):
    cfg = pipeline.parse_config_text(TINY)
    cfg.set("corpus.clips", 2)
    cfg.set("corpus.clip_seconds", 0.5)
    path = _cfg_file(tmp_path, cfg)
    code = main(["synth", "--config", path, "--workdir",
                 str(tmp_path / "w"), "--devices", "4", "--seed", "3"])
    assert code == 0
    out = capsys.readouterr().out
    assert "wrote 8 clips" in out
    assert "device03" in out


def test_cli_gradcheck_exit_zero(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") >= 10 and "FAIL" not in out


def test_small_sample_stage(tiny_cfg, capsys):
    for stage in (pipeline.stage_synth, pipeline.stage_mfcc):
        stage(tiny_cfg, log=lambda *a: None)
    metrics = pipeline.stage_small_sample(tiny_cfg, 3, log=lambda *a: None)
    assert 0.0 <= metrics.accuracy <= 1.0
    assert (tiny_cfg.workdir / "small_sample" / "metrics.kv").exists()
