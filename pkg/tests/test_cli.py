import csv
import json

import numpy as np
import pytest

from tspkit import cli
from tspkit.data import LabelMap, load_label_map, save_label_map
from tspkit.stats import crowd_rate
from tspkit.tensor import serialize
from tspkit.drd import DetailRefiningDecoder, DrdConfig, preset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("gen")
    assert cli.main(["generate", "--out-root", str(root), "--count", "6", "--width", "48",
                     "--height", "32", "--density", "4", "--seed", "3"]) == 0
    return root


def _copy_labels(src, dst, fn=lambda a: a):
    dst.mkdir(parents=True, exist_ok=True)
    for p in sorted(src.glob("*.png")):
        save_label_map(dst / p.name, LabelMap(fn(load_label_map(p).pixels)))


# ---------------------------------------------------------------- eval-semantic

def test_eval_perfect_prediction(dataset, tmp_path):
    pred = tmp_path / "pred"
    _copy_labels(dataset / "train" / "labels", pred)
    out = tmp_path / "r.json"
    assert cli.main(["eval-semantic", "--gt-dir", str(dataset / "train"), "--pred-dir", str(pred),
                     "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["miou"] == 1.0 and report["iiou"] == 1.0 and report["num_images"] == 6


def test_eval_shifted_prediction_and_threads(dataset, tmp_path):
    pred = tmp_path / "pred"
    _copy_labels(dataset / "train" / "labels", pred, lambda a: np.where(a == 0, 1, a))
    reports = []
    for threads in ("1", "4"):
        out = tmp_path / f"r{threads}.json"
        assert cli.main(["eval-semantic", "--gt-dir", str(dataset / "train"), "--pred-dir", str(pred),
                         "--out", str(out), "--threads", threads]) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1]
    report = json.loads(reports[0])
    assert report["per_class_iou"]["road"] == 0.0
    assert 0.0 < report["miou"] < 1.0


def test_eval_without_instances_reports_no_iiou(dataset, tmp_path):
    gt, pred = tmp_path / "gt", tmp_path / "pred"
    _copy_labels(dataset / "train" / "labels", gt)
    _copy_labels(dataset / "train" / "labels", pred)
    out = tmp_path / "r.json"
    assert cli.main(["eval-semantic", "--gt-dir", str(gt), "--pred-dir", str(pred), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["iiou"] is None


def test_eval_input_errors(dataset, tmp_path, capsys):
    empty_a, empty_b = tmp_path / "a", tmp_path / "b"
    empty_a.mkdir()
    empty_b.mkdir()
    assert cli.main(["eval-semantic", "--gt-dir", str(empty_a), "--pred-dir", str(empty_b)]) == 2
    pred = tmp_path / "pred"
    _copy_labels(dataset / "train" / "labels", pred)
    victim = sorted(pred.glob("*.png"))[0]
    victim.unlink()
    assert cli.main(["eval-semantic", "--gt-dir", str(dataset / "train"), "--pred-dir", str(pred)]) == 2
    assert victim.name in capsys.readouterr().err
    save_label_map(victim, LabelMap(np.full((32, 48), 255)))
    assert cli.main(["eval-semantic", "--gt-dir", str(dataset / "train"), "--pred-dir", str(pred)]) == 2
    assert cli.main(["eval-semantic", "--gt-dir", str(dataset / "train")]) == 2


# ---------------------------------------------------------------- stats

def test_stats_deterministic_json(dataset, tmp_path):
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / f"s{threads}.json"
        assert cli.main(["stats", "--data-root", str(dataset), "--split", "train",
                         "--out", str(out), "--threads", threads]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    report = json.loads(outs[0])
    assert report["num_images"] == 6 and report["avg_tp"] == 4.0


def test_stats_empty_or_bad_split(dataset, tmp_path):
    assert cli.main(["stats", "--data-root", str(dataset), "--split", "val"]) == 2
    assert cli.main(["stats", "--data-root", str(dataset), "--split", "holdout"]) == 2
    assert cli.main(["stats", "--data-root", str(tmp_path / "nowhere")]) == 2


# ---------------------------------------------------------------- crowd-rate

def test_crowd_rate_cli(tmp_path, registry, capsys):
    labels = tmp_path / "labels"
    labels.mkdir()
    a = np.zeros((10, 100), dtype=np.uint8)
    a[:3] = registry.id_of("car")
    save_label_map(labels / "a.png", LabelMap(a))
    save_label_map(labels / "b.png", LabelMap(np.zeros((4, 4), dtype=np.uint8)))
    prefix = tmp_path / "out" / "cr"
    assert cli.main(["crowd-rate", "--label-dir", str(tmp_path), "--out-prefix", str(prefix)]) == 0
    rows = list(csv.reader(open(f"{prefix}.csv")))
    assert rows[1:] == [["a", "300", "700", "0.300000"], ["b", "0", "16", "0.000000"]]
    assert (tmp_path / "out" / "cr.svg").read_text().startswith("<svg")
    assert "images 2" in capsys.readouterr().out


def test_crowd_rate_cli_matches_library(dataset, tmp_path, registry):
    prefix = tmp_path / "cr"
    assert cli.main(["crowd-rate", "--label-dir", str(dataset / "train"), "--out-prefix", str(prefix)]) == 0
    rows = list(csv.DictReader(open(f"{prefix}.csv")))
    assert len(rows) == 6
    for row in rows:
        r = crowd_rate(load_label_map(dataset / "train" / "labels" / f"{row['image_id']}.png"), registry)
        assert (int(row["S_t"]), int(row["S_r"]), row["rate"]) == (r.participant_area, r.road_area, f"{r.rate:.6f}")


def test_crowd_rate_cli_empty(tmp_path):
    assert cli.main(["crowd-rate", "--label-dir", str(tmp_path), "--out-prefix", str(tmp_path / "x")]) == 2


# ---------------------------------------------------------------- drd-demo / grad-check

def test_drd_demo_zero_steps_saves_init(tmp_path):
    out = tmp_path / "demo"
    assert cli.main(["drd-demo", "--steps", "0", "--images", "2", "--size", "32", "--out-dir", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"] == preset("setting2").with_(num_classes=4).to_dict()
    saved = serialize.load(out / "weights.tspk")
    init = DetailRefiningDecoder(DrdConfig(**summary["config"]), seed=0).state_dict()
    assert saved.keys() == init.keys()
    assert all(np.array_equal(saved[k], init[k]) for k in init)
    assert summary["steps"] == 0 and summary["initial_loss"] == summary["final_loss"]
    assert len(list((out / "attention").glob("token_*.png"))) == 5


def test_drd_demo_deterministic(tmp_path):
    args = ["drd-demo", "--steps", "3", "--images", "2", "--size", "32", "--seed", "4"]
    assert cli.main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "loss.csv").read_bytes() == (tmp_path / "b" / "loss.csv").read_bytes()
    assert (tmp_path / "a" / "weights.tspk").read_bytes() == (tmp_path / "b" / "weights.tspk").read_bytes()


def test_drd_demo_errors(tmp_path):
    base = ["drd-demo", "--images", "2", "--out-dir", str(tmp_path)]
    assert cli.main(base + ["--steps", "50", "--size", "32", "--lr", "1e6"]) == 3
    assert cli.main(base + ["--size", "40"]) == 2
    assert cli.main(base + ["--preset", "setting9"]) == 2
    assert cli.main(base + ["--channels", "32", "--steps", "0"]) == 2   # 32 not divisible by 12 heads


def test_grad_check_exit_codes():
    assert cli.main(["grad-check"]) == 0
    assert cli.main(["grad-check", "--corrupt-grad", "1e-2"]) == 1
    assert cli.main(["grad-check", "--tolerance", "1e-12"]) == 1


# ---------------------------------------------------------------- configuration

def test_config_file_precedence(tmp_path, dataset, monkeypatch):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'data-root = "{dataset}"\nsplit = "val"\nthreads = 2\n')
    parser = cli.build_parser()
    monkeypatch.setenv(cli.THREADS_ENV, "5")
    args = parser.parse_args(["stats", "--config", str(cfg), "--split", "train"])
    opts = cli.resolve_options(args, {"data_root": None, "split": "x", "threads": 1})
    assert opts == {"data_root": str(dataset), "split": "train", "threads": 2}
    args = parser.parse_args(["stats"])
    assert cli.resolve_options(args, {"split": "x", "threads": 1})["threads"] == 5
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    with pytest.raises(cli.InputError):
        cli.resolve_options(args, {"threads": 1})


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 'red'\n")
    assert cli.main(["stats", "--config", str(bad)]) == 2
    broken = tmp_path / "broken.toml"
    broken.write_text("= = =\n")
    assert cli.main(["stats", "--config", str(broken)]) == 2
    assert cli.main(["stats", "--config", str(tmp_path / "absent.toml")]) == 2


def test_generate_writes_registry(tmp_path):
    assert cli.main(["generate", "--out-root", str(tmp_path), "--toy", "--count", "2", "--width", "32",
                     "--height", "32", "--density", "2", "--split", "val"]) == 0
    assert (tmp_path / "registry.tsv").read_text().count("\n") == 4
    assert cli.main(["stats", "--data-root", str(tmp_path), "--split", "val",
                     "--registry", str(tmp_path / "registry.tsv")]) == 0
    assert cli.main(["generate", "--out-root", str(tmp_path), "--count", "1", "--width", "8",
                     "--height", "8", "--density", "500"]) == 2
