import json
import os

import numpy as np
import pytest

from tgpop.cli import main
from tgpop.graphstore import SplitSpec, TemporalDataset, chronological_split, write_edge_list
from tgpop.poptrack import run_and_score


@pytest.fixture
def raw(tmp_path):
    rng = np.random.default_rng(0)
    n = 1500
    src = rng.integers(0, 80, n) * 3 + 1000
    dst = ((rng.zipf(1.5, n) - 1) % 120) * 7
    t = rng.integers(0, 5000, n)
    p = tmp_path / "raw.csv"
    p.write_text("".join(f"{s},{d},{x}\n" for s, d, x in zip(src, dst, t)))
    return p


@pytest.fixture
def canon(tmp_path, raw):
    out = tmp_path / "ing"
    assert main(["ingest", "--data", str(raw), "--out", str(out), "--name", "syn"]) == 0
    return out / "edges.csv"


def run(*argv):
    return main([str(a) for a in argv])


def read_json(p):
    with open(p) as fh:
        return json.load(fh)


def test_ingest_outputs_and_idempotence(tmp_path, canon):
    out = canon.parent
    assert sorted(os.listdir(out)) == ["edges.csv", "id_map.csv", "ingest.config.json", "stats.json"]
    stats = read_json(out / "stats.json")
    assert stats["num_edges"] == 1500
    again = tmp_path / "again"
    assert run("ingest", "--data", canon, "--out", again, "--name", "syn") == 0
    assert (again / "edges.csv").read_bytes() == canon.read_bytes()


def test_ingest_malformed_row(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("0,1,2\n0,1,x\n")
    out = tmp_path / "o"
    assert run("ingest", "--data", p, "--out", out) == 1
    assert "2" in capsys.readouterr().err
    assert not out.exists() or not os.listdir(out)


def test_missing_file_is_runtime_error(tmp_path):
    assert run("stats", "--data", tmp_path / "nope.csv", "--out", tmp_path / "o") == 2


def test_bad_flag_is_validation_error(tmp_path, canon):
    assert run("measure", "--data", canon, "--n-windows", "x") == 1
    assert run("poptrack", "--data", canon, "--out", tmp_path / "o", "--all") == 1


def test_stats(tmp_path, canon):
    out = tmp_path / "st"
    assert run("stats", "--data", canon, "--out", out) == 0
    res = read_json(out / "stats.json")
    assert res["train"]["num_edges"] + res["val"]["num_edges"] + res["test"]["num_edges"] == 1500


def test_measure_files_round_trip(tmp_path, canon):
    out = tmp_path / "m"
    assert run("measure", "--data", canon, "--out", out, "--n-windows", 10) == 0
    res = read_json(out / "measure.json")
    assert res["n_windows"] == 10
    for g in ("index-line", "discrete"):
        m = np.loadtxt(out / f"w_long.{g}.txt")
        series = np.loadtxt(out / f"w_short.{g}.txt")
        low = m[np.tril_indices(10, -1)]
        import math
        assert math.fsum(low.tolist()) / 45 == res["ground"][g]["w_long"]
        assert math.fsum(series.tolist()) / 9 == res["ground"][g]["w_short"]
        assert np.array_equal(series, np.diagonal(m, 1))


def test_measure_constant_stream(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("".join(f"0,3,{i}\n" for i in range(200)))
    out = tmp_path / "m"
    assert run("measure", "--data", p, "--out", out) == 0
    res = read_json(out / "measure.json")
    assert all(v["w_short"] == 0 and v["w_long"] == 0 for v in res["ground"].values())


def gen(tmp_path, canon, name, *extra):
    out = tmp_path / name
    assert run("gen-negatives", "--data", canon, "--out", out, *extra) == 0
    return out


@pytest.mark.parametrize("scheme,extra", [
    ("naive", ["--q", "20"]),
    ("topn", ["--n", "20"]),
    ("blend", ["--pool", "50", "--n-top", "20", "--n-hist", "5", "--n-rand", "5"]),
])
def test_gen_negatives_deterministic_and_thread_independent(tmp_path, canon, scheme, extra):
    a = gen(tmp_path, canon, "a", "--scheme", scheme, "--seed", 3, *extra)
    b = gen(tmp_path, canon, "b", "--scheme", scheme, "--seed", 3, *extra)
    c = gen(tmp_path, canon, "c", "--scheme", scheme, "--seed", 3, "--threads", 8, *extra)
    name = f"negatives.{scheme}.test.jsonl"
    assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()
    cfg_name = f"negatives.{scheme}.test.config.json"
    assert (a / cfg_name).read_bytes() == (b / cfg_name).read_bytes()


def test_config_file_and_flag_precedence(tmp_path, canon):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": str(canon), "scheme": "naive", "q": 7, "seed": 1}))
    out = gen(tmp_path, canon, "x", "--config", cfg, "--q", "9")
    resolved = read_json(out / "negatives.naive.test.config.json")
    assert resolved["q"] == 9 and resolved["seed"] == 1
    first = (out / "negatives.naive.test.jsonl").read_text().splitlines()[1]
    assert len(json.loads(first)["negatives"]) == 9
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("gen-negatives", "--data", canon, "--config", cfg, "--out", tmp_path / "y") == 1


def test_poptrack_grid_then_test(tmp_path, canon):
    negs = gen(tmp_path, canon, "n", "--q", "10", "--split", "test")
    gen(tmp_path, canon, "n", "--q", "10", "--split", "val")
    out = tmp_path / "pt"
    args = ["poptrack", "--data", canon, "--out", out, "--grid", "0.9,0.96,0.999",
            "--negatives", negs / "negatives.naive.test.jsonl",
            "--val-negatives", negs / "negatives.naive.val.jsonl", "--per-edge"]
    assert run(*args) == 0
    grid = read_json(out / "poptrack.grid.json")
    best = grid["best_lambda"]
    assert best == max(grid["table"], key=lambda r: (r["val_mrr"], -r["lambda"]))["lambda"]
    rep = read_json(out / "poptrack.report.json")
    assert rep["lambda"] == best and rep["metric"] == "MRR_naive"
    rr = np.loadtxt(out / "poptrack.rr.txt")[:, 1]
    assert rep["value"] == pytest.approx(rr.mean(), abs=1e-12)
    before = (out / "poptrack.report.json").read_bytes()
    assert run(*args) == 0
    assert (out / "poptrack.report.json").read_bytes() == before


def test_poptrack_all_matches_library(tmp_path, canon):
    out = tmp_path / "pt"
    assert run("poptrack", "--data", canon, "--out", out, "--lambda", "1.0", "--all", "--snapshot") == 0
    from tgpop.graphstore import load_edge_list
    sp = chronological_split(load_edge_list(canon), SplitSpec())
    rep = read_json(out / "poptrack.report.json")
    assert rep["metric"] == "MRR_all"
    assert rep["value"] == run_and_score(sp, 1.0, 200).value
    # lambda = 1 leaves plain cumulative counts
    snap = np.loadtxt(out / "poptrack.snapshot.txt", comments="#")
    assert np.array_equal(snap, np.bincount(np.concatenate([sp.train.dst, sp.val.dst, sp.test.dst]),
                                            minlength=sp.full.num_nodes))


@pytest.mark.parametrize("model", ["poptrack", "edgebank-inf", "edgebank-tw"])
def test_eval_models(tmp_path, canon, model):
    negs = gen(tmp_path, canon, "n", "--scheme", "topn", "--n", "20")
    out = tmp_path / "ev"
    assert run("eval", "--data", canon, "--out", out, "--model", model,
               "--negatives", negs / "negatives.topn.test.jsonl") == 0
    rep = read_json(out / f"eval.{model}.report.json")
    assert rep["metric"] == "MRR_top20" and 0 < rep["value"] <= 1
    if model == "edgebank-tw":
        assert rep["window"] > 0
    assert run("eval", "--data", canon, "--out", out, "--model", model, "--all") == 0
    assert read_json(out / f"eval.{model}.report.json")["metric"] == "MRR_all"


def test_eval_requires_one_candidate_source(tmp_path, canon):
    assert run("eval", "--data", canon, "--out", tmp_path / "e") == 1


def test_scores_file_alignment(tmp_path, canon):
    from tgpop.graphstore import load_edge_list
    from tgpop.evaluation import save_score_dump
    sp = chronological_split(load_edge_list(canon), SplitSpec())
    p = tmp_path / "scores.jsonl"
    save_score_dump(p, sp.val, "val", [1.0] * len(sp.val), [[0.5, 1.0]] * len(sp.val))
    out = tmp_path / "ev"
    assert run("eval", "--data", canon, "--out", out, "--model", "scores-file", "--scores", p) == 1
    assert run("eval", "--data", canon, "--out", out, "--model", "scores-file", "--scores", p, "--split", "val") == 0
    rep = read_json(out / "eval.scores-file.report.json")
    assert rep["value"] == pytest.approx(1 / 1.5)


def test_saturation_command(tmp_path):
    dst = [0, 0, 0, 1, 1, 2, 3, 0, 4]
    ds = TemporalDataset.from_arrays([5] * 9, dst, list(range(9)), num_nodes=6, name="sat")
    data = tmp_path / "sat.csv"
    write_edge_list(ds, data)
    from tgpop.graphstore import load_edge_list, split_fingerprint
    test = chronological_split(load_edge_list(data), SplitSpec.boundary(5, 6)).test
    maps = [{0: 1.0, 1: 1.0, 2: 0.5, 5: 1.0}, {4: 1.0, 0: 0.3, 2: 1.0, 1: 1.0}]
    p = tmp_path / "d.jsonl"
    with open(p, "w") as fh:
        fh.write(json.dumps(split_fingerprint(test, "test")) + "\n")
        for i, m in enumerate(maps):
            fh.write(json.dumps({"edge_index": i, "candidates": {str(k): v for k, v in m.items()}}) + "\n")
    out = tmp_path / "s"
    base = ["saturation", "--data", data, "--out", out, "--scores", p, "--split-mode", "boundary",
            "--train-end-t", 5, "--val-end-t", 6]
    assert run(*base, "--k-list", "1,2", "--n-list", "3,7") == 0
    rows = {(r["K"], r["N"]): r["percent"] for r in read_json(out / "saturation.json")["rows"]}
    assert rows == {(1, 3): 50.0, (2, 3): 50.0, (1, 7): 50.0, (2, 7): 75.0}
    table = (out / "saturation.txt").read_text().splitlines()
    assert table[0].split() == ["K", "N", "saturated"] and table[-1].split() == ["2", "7", "75.00%"]
    assert run(*base) == 0
    lines = (out / "saturation.txt").read_text().splitlines()
    assert len(lines) == 10
    # with N = 1 only the previous destination is popular: node 3, then node 0 scored 0.3
    assert run(*base, "--k-list", "1", "--n-list", "1") == 0
    assert (out / "saturation.txt").read_text().splitlines()[1].split() == ["1", "1", "0.00%"]


def test_saturation_na(tmp_path):
    ds = TemporalDataset.from_arrays([5] * 9, [0, 0, 0, 1, 1, 2, 3, 0, 4], list(range(9)), num_nodes=6)
    data = tmp_path / "sat.csv"
    write_edge_list(ds, data)
    from tgpop.graphstore import load_edge_list, split_fingerprint
    test = chronological_split(load_edge_list(data), SplitSpec.boundary(5, 6)).test
    p = tmp_path / "d.jsonl"
    with open(p, "w") as fh:
        fh.write(json.dumps(split_fingerprint(test, "test")) + "\n")
        fh.write(json.dumps({"edge_index": 0, "candidates": {"0": 0.5, "5": 1.0}}) + "\n")
        fh.write(json.dumps({"edge_index": 1, "candidates": {"4": 1.0, "5": 1.0}}) + "\n")
    out = tmp_path / "s"
    assert run("saturation", "--data", data, "--out", out, "--scores", p, "--split-mode", "boundary",
               "--train-end-t", 5, "--val-end-t", 6, "--k-list", "1", "--n-list", "1") == 0
    assert (out / "saturation.txt").read_text().splitlines()[1].split() == ["1", "1", "N/A"]
