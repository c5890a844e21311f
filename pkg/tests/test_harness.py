from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from lsrs.config import apply_overrides, load_config, parse_config
from lsrs.data import make_blobs
from lsrs.harness import (
    CSV_COLUMNS,
    CertRow,
    StageError,
    bench_modes,
    depth_to_split,
    evaluate,
    read_cert_csv,
    run,
    summarize,
    write_cert_csv,
)
from lsrs.network import ArchSpec, build_reference_net
from lsrs.smoothing import ABSTAIN, Mode, SmoothingConfig

TINY = Path(__file__).parent / "data" / "tiny.ini"
EXAMPLE = Path(__file__).parents[1] / "docs" / "example_config.ini"


def fixture_rows():
    # idx, label, predict, radius_latent, radius_input, p_lower, correct, time
    return [
        CertRow(0, 1, 1, 0.8, 0.8, 0.9991, 1, 0.1),
        CertRow(1, 0, 0, 0.3, 0.3, 0.88, 1, 0.2),
        CertRow(2, 2, ABSTAIN, 0.0, 0.0, 0.41, 0, 0.3),
        CertRow(3, 2, 1, 0.5, 0.5, 0.97, 0, 0.4),
        CertRow(4, 3, 3, 0.05, 0.05, 0.58, 1, 0.5),
    ]


def test_acr_on_five_example_fixture():
    s = summarize(fixture_rows(), clean_accuracy=0.8, thresholds=(0.0, 0.1, 0.5))
    assert s.acr == pytest.approx((0.8 + 0.3 + 0.05) / 5, abs=1e-15)
    assert s.certified_accuracy == {0.0: 3 / 5, 0.1: 2 / 5, 0.5: 1 / 5}
    assert s.abstain_rate == 1 / 5 and s.error_rate == 1 / 5
    assert s.certified_accuracy[0.0] == pytest.approx(1 - s.abstain_rate - s.error_rate)
    assert s.mean_time_per_example == pytest.approx(0.3)
    vals = list(s.certified_accuracy.values())
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_all_abstain_summary():
    rows = [CertRow(i, 0, ABSTAIN, 0.0, 0.0, 0.3, 0, 0.01) for i in range(4)]
    s = summarize(rows, 0.5)
    assert s.acr == 0.0
    assert set(s.certified_accuracy.values()) == {0.0}
    assert s.abstain_rate == 1.0


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        summarize([], 1.0)


def test_csv_roundtrip_reproduces_summary(tmp_path):
    rows = fixture_rows()
    rows[1].radius_input = 0.1 + 0.2  # a float that needs all 17 digits
    write_cert_csv(rows, tmp_path / "c.csv")
    header = (tmp_path / "c.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    back = read_cert_csv(tmp_path / "c.csv")
    assert back == rows
    assert summarize(back, 0.8).to_text() == summarize(rows, 0.8).to_text()


def test_read_csv_rejects_wrong_columns(tmp_path):
    (tmp_path / "c.csv").write_text("idx,label\n0,1\n")
    with pytest.raises(ValueError):
        read_cert_csv(tmp_path / "c.csv")


def test_summary_text_states_conventions():
    text = summarize(fixture_rows(), 0.8).to_text()
    assert text.startswith("# abstained and misclassified examples contribute radius 0")
    assert "acr = " in text and "certified_accuracy@0.5 = " in text


def test_evaluate_on_untrained_net():
    net = build_reference_net(ArchSpec(in_channels=1, channels=2, spatial=4, n_classes=2, blocks=2,
                                       n_ortho=1, hidden=4), np.random.default_rng(0))
    data = make_blobs(2, 2, (1, 4, 4), 0.1, seed=0, split="test")
    s, rows, results = evaluate(net, data, Mode.LS_RS, SmoothingConfig(n0=10, n=100))
    assert s.n_examples == 4 and len(rows) == 4 == len(results)
    for row, res in zip(rows, results):
        assert row.radius_input == res.radius_input
        assert (row.predict == ABSTAIN) == (row.radius_input == 0.0)


def test_depth_to_split():
    assert [depth_to_split(d) for d in (0, 2, 4, 8)] == [0, 3, 5, 9]


def test_bench_table(tmp_path):
    net = build_reference_net(ArchSpec(in_channels=1, channels=2, spatial=4, n_classes=2, blocks=2,
                                       n_ortho=2, hidden=4), np.random.default_rng(0))
    inputs = np.random.default_rng(1).uniform(size=(2, 1, 4, 4))
    table = bench_modes(net, inputs, SmoothingConfig(n0=10, n=200), depths=(0, 1, 2))
    assert [r.split_index for r in table.rows] == [0, 2, 3]
    assert all(r.ls_time > 0 and r.is_time > 0 for r in table.rows)
    table.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "# n=200 n0=10 sigma=0.25 alpha=0.001 workers=1 examples=2 (held fixed across modes)"
    assert lines[1] == "depth,split_index,ls_rs_time_s,is_rs_time_s,speedup"


def test_example_config_parses():
    cfg = load_config(EXAMPLE)
    assert cfg.arch.n_ortho == 4 and cfg.arch.blocks == 8
    assert cfg.mode is Mode.LS_RS and cfg.train.noise_site == "latent"
    assert cfg.smoothing.n == 10000 and cfg.smoothing.seed == cfg.seed


def test_config_rejects_split_that_excludes_an_orthogonal_block():
    text = EXAMPLE.read_text().replace("split_index = auto", "split_index = 3")
    with pytest.raises(ValueError, match="orthogonal block 2"):
        parse_config(text)


@pytest.mark.parametrize("old, new", [("n_ortho = 4 ", "n_ortho = 9 "),
                                      ("[bench]", "[bench]\nbogus = 1"),
                                      ("[bench]", "[nonsense]\n[bench]"),
                                      ("n_classes = 4\ntrain", "n_classes = 5\ntrain")])
def test_config_validation_errors(old, new):
    text = EXAMPLE.read_text()
    assert old in text
    with pytest.raises(ValueError):
        parse_config(text.replace(old, new))


def test_overrides():
    cfg = apply_overrides(load_config(EXAMPLE), sigma=0.5, mode="is-rs", split=5, seed=7, n=50,
                          alpha=0.01, out="elsewhere")
    assert cfg.train.sigma == cfg.smoothing.sigma == 0.5
    assert cfg.mode is Mode.IS_RS and cfg.train.noise_site == "input"
    assert cfg.train.seed == cfg.smoothing.seed == 7
    assert (cfg.smoothing.n, cfg.smoothing.alpha, cfg.out) == (50, 0.01, "elsewhere")


def strip_time(path):
    lines = Path(path).read_text().splitlines()
    return [line.rsplit(",", 1)[0] for line in lines]


def test_run_pipeline_is_deterministic(tmp_path):
    cfg = load_config(TINY)
    a = run(replace(cfg, out=str(tmp_path / "a")))[0]
    b = run(replace(cfg, out=str(tmp_path / "b")))[0]
    for name in ("checkpoint.json", "train_history.csv", "audit.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert strip_time(tmp_path / "a" / "certification.csv") == \
        strip_time(tmp_path / "b" / "certification.csv")
    assert (tmp_path / "a" / "status.txt").read_text() == "status = complete\n"
    assert a.acr == b.acr
    rows = read_cert_csv(tmp_path / "a" / "certification.csv")
    assert summarize(rows, a.clean_accuracy, cfg.thresholds).acr == a.acr
    text = (tmp_path / "a" / "summary.txt").read_text()
    assert "latent_dim = 32" in text and "for_fraction = 2/3" in text


def test_run_failure_is_stage_tagged(tmp_path):
    cfg = load_config(TINY)
    cfg = replace(cfg, out=str(tmp_path), data=replace(cfg.data, source="idx",
                                                       train_images=str(tmp_path / "missing")))
    with pytest.raises(StageError) as info:
        run(cfg)
    assert info.value.stage == "data"
    assert "status = failed\nstage = data\n" in (tmp_path / "status.txt").read_text()
