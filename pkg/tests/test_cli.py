"""End-to-end CLI behavior: exit codes, file outputs, idempotence."""
import json

import numpy as np
import pytest

from enseep.cli import main
from enseep.datamodel import write_bundle
from enseep.sampler import LabelRaster, write_raster
from enseep.synthetic import example_config, gen_source, gen_target, make_metas

@pytest.fixture(scope="module")
def bundle_15(tmp_path_factory):
    """15 synthetic sources, small n: 455 candidate ensembles."""
    config = example_config(n_sources=15, n_train=400, n_heldout=400, seeds=(0,))
    sample_set = gen_target(config.num_classes, 400, config.class_prior, [0, 0])
    preds = [gen_source(s, sample_set) for s in config.sources]
    metas = make_metas(config.sources, 400)
    path = tmp_path_factory.mktemp("data") / "bundle15"
    write_bundle(sample_set, preds, metas, path)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestValidate:
    def test_ok_bundle(self, bundle_15, capsys):
        assert run("validate", "--bundle", bundle_15) == 0
        out = capsys.readouterr().out
        assert "OK" in out and "sources: 15" in out

    def test_corrupt_bundle_exits_1(self, bundle_15, tmp_path, capsys):
        import shutil

        bad = tmp_path / "bad"
        shutil.copytree(bundle_15, bad)
        pred = bad / "pred_s00.bin"
        blob = bytearray(pred.read_bytes())
        blob[8:12] = np.array([5.0], dtype="<f4").tobytes()  # break a row sum
        pred.write_bytes(bytes(blob))
        assert run("validate", "--bundle", bad) == 1
        assert "row 0" in capsys.readouterr().err

    def test_missing_bundle_exits_2(self, tmp_path):
        assert run("validate", "--bundle", tmp_path / "nope") == 2


class TestSample:
    @pytest.fixture()
    def raster_dir(self, tmp_path, rng):
        d = tmp_path / "rasters"
        d.mkdir()
        for i in range(3):
            labels = rng.integers(0, 4, 400).astype(np.int32)
            write_raster(
                LabelRaster(image_id=f"img{i}", width=20, height=20, labels=labels),
                d / f"img{i}.bin",
            )
        return d

    def test_writes_index_list(self, raster_dir, tmp_path):
        out = tmp_path / "indices.json"
        assert run("sample", "--rasters", raster_dir, "--out", out,
                   "--k", 50, "--seed", 3) == 0
        doc = json.loads(out.read_text())
        assert doc["seed"] == 3 and len(doc["entries"]) == 150

    def test_refuses_overwrite_without_force(self, raster_dir, tmp_path, capsys):
        out = tmp_path / "indices.json"
        assert run("sample", "--rasters", raster_dir, "--out", out) == 0
        assert run("sample", "--rasters", raster_dir, "--out", out) == 1
        assert "--force" in capsys.readouterr().err
        assert run("sample", "--rasters", raster_dir, "--out", out, "--force") == 0

    def test_idempotent_bytes(self, raster_dir, tmp_path):
        out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
        run("sample", "--rasters", raster_dir, "--out", out1, "--seed", 5)
        run("sample", "--rasters", raster_dir, "--out", out2, "--seed", 5)
        assert out1.read_bytes() == out2.read_bytes()

    def test_empty_dir_exits_1(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert run("sample", "--rasters", tmp_path / "empty",
                   "--out", tmp_path / "x.json") == 1


class TestScore:
    def test_455_rows(self, bundle_15, tmp_path, capsys):
        out = tmp_path / "scores"
        assert run("score", "--bundle", bundle_15, "--out", out,
                   "--ensemble-size", 3) == 0
        lines = (out / "score.csv").read_text().splitlines()
        assert len(lines) == 456  # header + C(15,3)
        assert "455" in capsys.readouterr().out

    def test_workers_do_not_change_bytes(self, bundle_15, tmp_path):
        out1, out8 = tmp_path / "w1", tmp_path / "w8"
        run("score", "--bundle", bundle_15, "--out", out1, "--workers", 1)
        run("score", "--bundle", bundle_15, "--out", out8, "--workers", 8)
        assert (out1 / "score.csv").read_bytes() == (out8 / "score.csv").read_bytes()
        assert (out1 / "score.json").read_bytes() == (out8 / "score.json").read_bytes()

    def test_exclude_dataset(self, bundle_15, tmp_path):
        out = tmp_path / "scores"
        # synthetic metas use dataset ds-<id>; dropping one leaves C(14,3)
        assert run("score", "--bundle", bundle_15, "--out", out,
                   "--exclude-dataset", "ds-s00") == 0
        lines = (out / "score.csv").read_text().splitlines()
        assert len(lines) == 1 + 364

    def test_metrics_subset(self, bundle_15, tmp_path):
        out = tmp_path / "scores"
        assert run("score", "--bundle", bundle_15, "--out", out,
                   "--metrics", "ms_leep,e_leep") == 0
        header = (out / "score.csv").read_text().splitlines()[0]
        assert header == "ensemble,ms_leep,e_leep"

    def test_unknown_metric_exits_1(self, bundle_15, tmp_path):
        assert run("score", "--bundle", bundle_15, "--out", tmp_path / "s",
                   "--metrics", "nope") == 1


@pytest.fixture(scope="module")
def scored(bundle_15, tmp_path_factory):
    out = tmp_path_factory.mktemp("scored")
    run("score", "--bundle", bundle_15, "--out", out)
    return out


class TestRankPreselectCorrelate:

    def test_rank(self, scored, tmp_path):
        out = tmp_path / "ranked"
        assert run("rank", "--scores", scored / "score.json",
                   "--metric", "soft_iou_eep", "--out", out, "--top-k", 10) == 0
        lines = (out / "ranked_soft_iou_eep.csv").read_text().splitlines()
        assert lines[0] == "rank,ensemble,soft_iou_eep"
        assert len(lines) == 11

    def test_rank_k_larger_than_table(self, scored, tmp_path):
        out = tmp_path / "ranked"
        assert run("rank", "--scores", scored / "score.json",
                   "--metric", "e_leep", "--out", out, "--top-k", 99999) == 0
        assert len((out / "ranked_e_leep.csv").read_text().splitlines()) == 456

    def test_rank_from_csv_input(self, scored, tmp_path):
        out = tmp_path / "ranked"
        assert run("rank", "--scores", scored / "score.csv",
                   "--metric", "e_leep", "--out", out, "--top-k", 5) == 0

    def test_preselect(self, scored, tmp_path):
        out = tmp_path / "picked.txt"
        assert run("preselect", "--scores", scored / "score.json", "--out", out,
                   "--n-good", 3, "--n-random", 4, "--seed", 1) == 0
        ids = out.read_text().split()
        assert len(ids) == 7 and len(set(ids)) == 7

    def test_correlate_and_scatter(self, scored, tmp_path):
        # synthesize a performance table from one metric column
        from enseep.selection import ScoreTable

        table = ScoreTable.from_json(scored / "score.json")
        perf = tmp_path / "perf.csv"
        # actual := a strictly increasing transform of e_leep, full precision
        rows = ["ensemble,actual_mean_iou"]
        rows += [
            f"{e.key},{np.exp(v):.17g}"
            for e, v in zip(table.ensembles, table.scores["e_leep"])
        ]
        perf.write_text("\n".join(rows) + "\n")
        out = tmp_path / "corr"
        assert run("correlate", "--scores", scored / "score.json",
                   "--performance", perf, "--out", out, "--target", "toy") == 0
        report = (out / "correlation.csv").read_text().splitlines()
        assert report[0] == "target,metric,weighted_tau,tau,pearson,n_pairs"
        assert len(report) == 6
        scatter = (out / "scatter_soft_iou_eep.csv").read_text().splitlines()
        assert scatter[0] == "ensemble,predicted,actual"
        assert len(scatter) == 456
        # rank measures see a perfect ordering for the e_leep column
        e_row = [ln for ln in report if ",e_leep," in ln][0]
        assert e_row.split(",")[2] == "1" and e_row.split(",")[3] == "1"

    def test_correlate_missing_keys_exits_1(self, scored, tmp_path, capsys):
        perf = tmp_path / "perf.csv"
        perf.write_text("ensemble,actual_mean_iou\ns00+s01+s02,0.5\n")
        out = tmp_path / "corr"
        assert run("correlate", "--scores", scored / "score.json",
                   "--performance", perf, "--out", out) == 1
        err = capsys.readouterr().err
        assert "no actual performance" in err and "s00+s01+s03" in err


class TestBench:
    def test_bench_end_to_end(self, tmp_path, capsys):
        config = example_config(
            n_sources=6, n_train=800, n_heldout=800, seeds=(0, 1)
        )
        config_path = tmp_path / "config.json"
        config.to_json(config_path)
        out = tmp_path / "bench"
        assert run("bench", "--config", config_path, "--out", out) == 0
        report = (out / "correlation.csv").read_text().splitlines()
        # 2 seeds x 5 metrics + 5 mean rows
        assert len(report) == 1 + 15
        assert (out / "seed_0" / "score.csv").exists()
        assert (out / "seed_0" / "performance.csv").exists()
        assert (out / "seed_1" / "bundle" / "manifest.json").exists()
        # the emitted bundle revalidates
        assert run("validate", "--bundle", out / "seed_1" / "bundle") == 0

    def test_bench_idempotent(self, tmp_path):
        config = example_config(n_sources=5, n_train=300, n_heldout=300, seeds=(0,))
        config_path = tmp_path / "config.json"
        config.to_json(config_path)
        out1, out2 = tmp_path / "b1", tmp_path / "b2"
        run("bench", "--config", config_path, "--out", out1)
        run("bench", "--config", config_path, "--out", out2)
        assert (out1 / "correlation.csv").read_bytes() == (
            out2 / "correlation.csv"
        ).read_bytes()
        assert (out1 / "seed_0" / "score.csv").read_bytes() == (
            out2 / "seed_0" / "score.csv"
        ).read_bytes()

    def test_bad_config_exits_1(self, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text('{"num_classes": 10}')
        assert run("bench", "--config", config_path, "--out", tmp_path / "o") == 1


class TestUsage:
    def test_unknown_subcommand_exits_1(self):
        with pytest.raises(SystemExit) as exc:
            run("frobnicate")
        assert exc.value.code == 1

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run("--version")
        assert exc.value.code == 0
