import filecmp

import numpy as np
import pytest

from aisimpute.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, main
from aisimpute.config import ConfigError, RunConfig, load_config, parse_config
from aisimpute.evaluation import EvalReport
from aisimpute.ingest import load_dataset, read_grid
from aisimpute.synthetic import synthetic_fleet
from conftest import make_seq, write_ais_csv

TINY = "model.d = 4\nmodel.edge_hidden = 8\ntrain.max_epochs = 2\ntrain.batch_size = 4\n"

# ---------------------------------------------------------------- config


def test_defaults_and_render_round_trip():
    cfg = RunConfig()
    assert cfg.model.d == 32 and cfg.corrupt.mask_ratio == 0.3 and cfg.eval.knn_k == 20
    back = parse_config(cfg.render())
    assert back.render() == cfg.render()


def test_parse_config_values_and_comments():
    cfg = parse_config("# comment\nmodel.d = 8   # inline\n\ntrain.weights.cyc = 2.5\n"
                       "corrupt.block = false\nmodel.leaks = 1, .5, .25, .25, .25\n")
    assert cfg.model.d == 8 and cfg.train.weights.cyc == 2.5 and cfg.corrupt.block is False
    assert cfg.model.leaks == (1.0, 0.5, 0.25, 0.25, 0.25)
    assert cfg.model.input_scale is None
    assert parse_config("model.input_scale = 0.5").model.input_scale == 0.5


@pytest.mark.parametrize("text,fragment", [
    ("model.d = 8\nmodel.depth = 3\n", "cfg.txt:2: unknown key 'model.depth'"),
    ("nosuch.key = 1\n", "cfg.txt:1: unknown key"),
    ("train.weights = 1\n", "cfg.txt:1: unknown key"),
    ("train.weights.foo = 1\n", "cfg.txt:1: unknown key"),
    ("model.d 8\n", "cfg.txt:1: expected 'section.key = value'"),
    ("model.d = eight\n", "cfg.txt:1: model.d:"),
    ("corrupt.point = maybe\n", "cfg.txt:1: corrupt.point: expected a boolean"),
    ("corrupt.mask_ratio = 1.5\n", "cfg.txt:"),
    ("eval.impute_mode = random\n", "eval.impute_mode must be"),
    ("model.leaks = 1, .5\n", "model.leaks must be five values"),
    ("train.weights.coord = -1\n", "cfg.txt:"),
])
def test_parse_config_errors(text, fragment):
    with pytest.raises(ConfigError) as ei:
        parse_config(text, "cfg.txt")
    assert fragment in str(ei.value)


def test_load_config_unreadable(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.cfg")


# ---------------------------------------------------------------- CLI


@pytest.fixture(scope="module")
def fleet_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("fleet")
    return write_ais_csv(d / "ais.csv", synthetic_fleet(10, 30, seed=3))


def test_ingest_reports_and_writes(tmp_path, fleet_csv, capsys):
    assert main(["ingest", str(fleet_csv), "--out", str(tmp_path / "ds")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "# command: ingest" in out and "model.d = 32" in out
    assert "sequences: 10 (train 8, val 1, test 1)" in out
    assert len(load_dataset(tmp_path / "ds").sequences) == 10


def test_exit_codes(tmp_path, fleet_csv, capsys):
    assert main(["train", str(tmp_path / "nope"), "--out", str(tmp_path / "m.ckpt")]) == EXIT_IO
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("model.width = 3\n")
    assert main(["ingest", str(fleet_csv), "--out", str(tmp_path / "ds"), "--config", str(cfg)]) == EXIT_IO
    assert "bad.cfg:1: unknown key 'model.width'" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    g = make_seq(5).values.copy()
    g[2, 1] = 91.0  # latitude out of range
    write_ais_csv(bad, [make_seq(5, lat=g[:, 1])])
    assert main(["ingest", str(bad), "--out", str(tmp_path / "ds2")]) == EXIT_INVALID
    assert "bad.csv:4: lat" in capsys.readouterr().err
    assert main(["ingest", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "ds3")]) == EXIT_IO


def test_corrupt_zero_is_identity(tmp_path, fleet_csv):
    main(["ingest", str(fleet_csv), "--out", str(tmp_path / "ds")])
    assert main(["corrupt", str(tmp_path / "ds"), "--mask-ratio", "0", "--noise", "0",
                 "--out", str(tmp_path / "c")]) == EXIT_OK
    cmp = filecmp.dircmp(tmp_path / "ds", tmp_path / "c")
    assert cmp.left_only == [] and cmp.right_only == []
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "ds", tmp_path / "c", cmp.common_files, shallow=False)
    assert mismatch == [] and errors == []


def test_eval_without_targets(tmp_path, fleet_csv, capsys):
    main(["ingest", str(fleet_csv), "--out", str(tmp_path / "ds")])
    assert main(["baseline", str(tmp_path / "ds"), "--method", "mean", "--out", str(tmp_path / "b.csv")]) == 0
    capsys.readouterr()
    assert main(["eval", str(tmp_path / "b.csv"), str(tmp_path / "ds")]) == EXIT_OK
    assert "(no targets)" in capsys.readouterr().out


def test_full_pipeline(tmp_path, fleet_csv, capsys):
    ds, c, ck = tmp_path / "ds", tmp_path / "c", tmp_path / "m.ckpt"
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["ingest", str(fleet_csv), "--out", str(ds)]) == EXIT_OK
    assert main(["corrupt", str(ds), "--mask-ratio", "0.3", "--noise", "0.01", "--out", str(c), "--seed", "5"]) == 0
    assert main(["train", str(c), "--out", str(ck), "--config", str(cfg)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "model.d = 4" in out and "epoch 2 train" in out
    assert (tmp_path / "m.ckpt.history.csv").read_text().count("\n") == 3
    assert main(["impute", str(c), str(ck), "--part", "test", "--out", str(tmp_path / "imp.csv")]) == EXIT_OK
    grids = read_grid(tmp_path / "imp.csv")
    dataset = load_dataset(c)
    assert len(grids) == 1
    (key, (_, split, grid)), = grids.items()
    assert split == "test"
    seq = next(s for s in dataset.sequences if s.key == key)
    hole = ~seq.visible_mask
    assert np.isfinite(grid[hole]).all()
    assert main(["eval", str(tmp_path / "imp.csv"), str(c), "--out", str(tmp_path / "rep.csv")]) == EXIT_OK
    text = capsys.readouterr().out
    rep = EvalReport.from_csv((tmp_path / "rep.csv").read_text())
    assert rep.counts and rep.method == "imp" and "coordinates" in text
    for method in ("mean", "linitp", "knn"):
        assert main(["baseline", str(c), "--method", method, "--part", "test",
                     "--out", str(tmp_path / f"{method}.csv")]) == EXIT_OK
        assert main(["eval", str(tmp_path / f"{method}.csv"), str(c)]) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", str(tmp_path / "imp.csv"), str(ds)]) == EXIT_OK  # clean set: no targets
    assert "(no targets)" in capsys.readouterr().out


def test_eval_rejects_unknown_sequence(tmp_path, fleet_csv, capsys):
    main(["ingest", str(fleet_csv), "--out", str(tmp_path / "ds")])
    main(["baseline", str(tmp_path / "ds"), "--method", "mean", "--out", str(tmp_path / "b.csv")])
    lines = (tmp_path / "b.csv").read_text().splitlines(keepends=True)
    lines[1] = "nosuch-0" + lines[1][lines[1].index(","):]
    (tmp_path / "b.csv").write_text("".join(lines))
    assert main(["eval", str(tmp_path / "b.csv"), str(tmp_path / "ds")]) == EXIT_INVALID
    assert "'nosuch-0' is not in" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--coords", "20", "--seed", "1"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "max relative error" in out and "model.seed = 1" in out
