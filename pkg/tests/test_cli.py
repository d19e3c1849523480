import csv
import json

import numpy as np
import pytest

from conftest import identity_blob, write_arrays
from snp_search.cli import main
from snp_search.core import read_pool
from snp_search.pipeline import RunConfig, parse_count, resolve_ids, resolve_images, run_search, strip_volatile
from snp_search.stats import accumulate, fid


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(7)
    d = 6
    xa, ia = identity_blob(rng, np.zeros(d), 30, 6)
    xb, ib = identity_blob(rng, np.full(d, 5.0), 30, 6)
    xt, _ = identity_blob(rng, np.zeros(d), 30, 6)
    return {
        "a": write_arrays(tmp_path / "a.snpe", xa, ia, "A"),
        "b": write_arrays(tmp_path / "b.snpe", xb, ib, "B"),
        "t": write_arrays(tmp_path / "t.snpe", xt),
        "dir": tmp_path,
    }


def run(*argv):
    return main([str(a) for a in argv])


def manifest(path):
    return json.loads((path / "manifest.json").read_text())


def pool_args(files):
    return ["--pool", f"A={files['a']}", "--pool", f"B={files['b']}", "--target", files["t"]]


def test_search_prefers_matching_dataset(files):
    out = files["dir"] / "s"
    assert run("search", *pool_args(files), "--clusters", 6, "--out", out) == 0
    m = manifest(out)
    share = {d["name"]: d["image_fraction"] for d in m["composition"]["datasets"]}
    assert share["A"] > 0.9
    assert (out / "trace.csv").exists() and (out / "search_report.json").exists()
    rows = list(csv.DictReader(open(out / "trace.csv")))
    assert [float(r["fid"]) for r in rows] == [t["fid"] for t in m["search"]["trace"]]
    report = json.loads((out / "search_report.json").read_text())
    assert report["best_fid"] == m["search"]["best_fid"]
    assert report["composition"] == m["search"]["composition"]


def test_search_single_cluster_is_whole_pool(files):
    out = files["dir"] / "s1"
    assert run("search", *pool_args(files), "--clusters", 1, "--out", out) == 0
    m = manifest(out)
    assert len(m["selected"]) == m["pool"]["records"] == 360
    pa, pb = read_pool(files["a"]), read_pool(files["b"])
    x = np.concatenate([pa.descriptors, pb.descriptors])
    t = read_pool(files["t"]).descriptors
    assert m["search"]["best_fid"] == pytest.approx(fid(accumulate(x), accumulate(t)), rel=1e-9)


def test_missing_target_exit_1(files, capsys):
    assert run("search", "--pool", f"A={files['a']}", "--target", "nope.snpe") == 1
    err = capsys.readouterr().err
    assert "nope.snpe" in err and err.count("\n") == 1


def test_numeric_failure_exit_3(tmp_path, capsys):
    p = write_arrays(tmp_path / "one.snpe", np.zeros((1, 2)))
    t = write_arrays(tmp_path / "t.snpe", np.random.default_rng(0).normal(size=(5, 2)))
    assert run("search", "--pool", f"X={p}", "--target", t, "--clusters", 1, "--out", tmp_path / "o") == 3
    assert "covariance" in capsys.readouterr().err


def test_format_error_exit_2(files, tmp_path):
    bad = tmp_path / "bad.snpe"
    bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNK")
    assert run("search", "--pool", f"X={bad}", "--target", files["t"], "--out", tmp_path / "o") == 2
    short = write_arrays(tmp_path / "short.snpe", np.zeros((4, 3)))
    assert run("search", "--pool", f"X={short}", "--target", files["t"], "--out", tmp_path / "o") == 2


def test_too_many_clusters_is_config_error(files):
    assert run("search", *pool_args(files), "--clusters", 1000, "--out", files["dir"] / "o") == 1


@pytest.fixture
def three_ids(tmp_path):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(15, 3))
    ids = np.repeat([0, 1, 2], 5)
    return {
        "p": write_arrays(tmp_path / "p.snpe", x, ids, "P"),
        "t": write_arrays(tmp_path / "t.snpe", rng.normal(size=(20, 3))),
        "dir": tmp_path,
    }


def test_prune_budget_arithmetic(three_ids):
    out = three_ids["dir"] / "o"
    rc = run("prune", "--pool", f"P={three_ids['p']}", "--target", three_ids["t"], "--clusters", 1,
             "--ids", 2, "--images", 6, "--out", out)
    assert rc == 0
    m = manifest(out)
    assert len(m["selected"]) == 6
    assert len({s["identity"] for s in m["selected"]}) == 2
    assert set(m["prune"]["id_sample"]) == {s["identity"] for s in m["selected"]}
    assert m["composition"]["budget"] == {"n": 2, "m": 6}


def test_prune_else_branch(three_ids):
    out = three_ids["dir"] / "o"
    run("prune", "--pool", f"P={three_ids['p']}", "--target", three_ids["t"], "--clusters", 1,
        "--ids", 2, "--images", 50, "--out", out)
    m = manifest(out)
    assert len(m["selected"]) == 10
    assert m["prune"]["fps_order"] == []
    assert m["prune"]["cover_radius"] == 0.0


def test_prune_m_below_n_exit_1(three_ids, capsys):
    rc = run("prune", "--pool", f"P={three_ids['p']}", "--target", three_ids["t"], "--ids", 3, "--images", 2)
    assert rc == 1
    assert "m=2" in capsys.readouterr().err


def test_prune_requires_budget(three_ids):
    assert run("prune", "--pool", f"P={three_ids['p']}", "--target", three_ids["t"], "--clusters", 1) == 1


def test_prune_percentages(three_ids):
    out = three_ids["dir"] / "o"
    run("prune", "--pool", f"P={three_ids['p']}", "--target", three_ids["t"], "--clusters", 1,
        "--ids", "50%", "--images", "100%", "--out", out)
    m = manifest(out)
    assert m["prune"]["n"] == 1  # floor(0.5 * 3)
    assert m["prune"]["m"] == 5
    assert len(m["selected"]) == 5


def test_prune_deterministic_bytes(files):
    outs = []
    for k in range(2):
        out = files["dir"] / f"d{k}"
        run("prune", *pool_args(files), "--clusters", 5, "--ids", 8, "--images", 20,
            "--seed-cluster", 3, "--seed-ids", 4, "--seed-fps", 5, "--out", out)
        text = (out / "manifest.json").read_text()
        outs.append("\n".join(line for line in text.splitlines() if '"created_at"' not in line))
    assert outs[0] == outs[1]


def test_search_then_prune_from_manifest_equals_end_to_end(files):
    common = [*pool_args(files), "--clusters", 5, "--seed-cluster", 2]
    budget = ["--ids", 6, "--images", 15, "--seed-ids", 1, "--seed-fps", 9]
    run("search", *common, "--out", files["dir"] / "s")
    run("prune", *common, *budget, "--from-manifest", files["dir"] / "s" / "manifest.json", "--out", files["dir"] / "p1")
    run("prune", *common, *budget, "--out", files["dir"] / "p2")
    assert strip_volatile(manifest(files["dir"] / "p1")) == strip_volatile(manifest(files["dir"] / "p2"))


def test_from_manifest_must_match_config(files):
    run("search", *pool_args(files), "--clusters", 5, "--out", files["dir"] / "s")
    rc = run("prune", *pool_args(files), "--clusters", 4, "--ids", 3, "--images", 9,
             "--from-manifest", files["dir"] / "s" / "manifest.json", "--out", files["dir"] / "p")
    assert rc == 1


def test_rerun_from_embedded_config(files):
    run("prune", *pool_args(files), "--clusters", 4, "--ids", 5, "--images", 12, "--seed-fps", 77,
        "--out", files["dir"] / "a")
    run("prune", "--config", files["dir"] / "a" / "manifest.json", "--out", files["dir"] / "b")
    assert manifest(files["dir"] / "a")["selected"] == manifest(files["dir"] / "b")["selected"]
    assert strip_volatile(manifest(files["dir"] / "a")) == strip_volatile(manifest(files["dir"] / "b"))


def test_dump_partition(files):
    out = files["dir"] / "s"
    run("search", *pool_args(files), "--clusters", 3, "--dump-partition", "--out", out)
    rows = list(csv.reader(open(out / "partition.csv")))
    assert rows[0] == ["identity", "cluster"]
    assert len(rows) - 1 == 60


def test_fid_command(tmp_path, capsys):
    a = write_arrays(tmp_path / "a.snpe", np.array([-1.0, 0.0, 1.0]))
    b = write_arrays(tmp_path / "b.snpe", np.array([2.0, 3.0, 4.0]))
    assert run("fid", a, a) == 0
    assert capsys.readouterr().out.strip() == "0.000000"
    assert run("fid", a, b) == 0
    assert capsys.readouterr().out.strip() == "9.000000"


def test_fid_command_matches_library(tmp_path, capsys):
    rng = np.random.default_rng(5)
    xa, xb = rng.normal(size=(50, 4)), rng.normal(1, 2, size=(40, 4))
    a = write_arrays(tmp_path / "a.snpe", xa)
    b = write_arrays(tmp_path / "b.csv", xb)
    run("fid", a, b)
    expected = fid(accumulate(xa.astype(np.float32)), accumulate(xb.astype(np.float32)))
    assert capsys.readouterr().out.strip() == f"{expected:.6f}"


def test_fid_command_errors(tmp_path):
    a = write_arrays(tmp_path / "a.snpe", np.zeros((3, 2)))
    b = write_arrays(tmp_path / "b.snpe", np.zeros((3, 3)))
    assert run("fid", a, b) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("dataset,identity,image_key,f0\nx,1,k,nan\nx,1,j,1\n")
    assert run("fid", a, bad) == 2


def test_ingest_command(files, capsys):
    out = files["dir"] / "ing"
    assert run("ingest", "--pool", f"A={files['a']}", "--pool", f"B={files['b']}", "--out", out) == 0
    pool = read_pool(out / "pool.snpe")
    assert pool.datasets == ["A", "B"] and len(pool) == 360 and pool.num_identities == 60
    assert "360 records" in capsys.readouterr().out


def test_report_and_correlate(files, tmp_path, capsys):
    run("search", *pool_args(files), "--clusters", 4, "--out", tmp_path / "s")
    capsys.readouterr()
    assert run("report", tmp_path / "s" / "manifest.json") == 0
    out = capsys.readouterr().out
    assert "A" in out and "achieved FID" in out
    assert run("report", tmp_path / "s" / "manifest.json", "--json") == 0
    assert json.loads(capsys.readouterr().out)["total_images"] > 0
    c = tmp_path / "c.csv"
    c.write_text("label,fid,num_ids,score\na,1,3,9\nb,2,1,7\nc,3,2,4\n")
    assert run("correlate", c) == 0
    assert "fid_vs_score: -0.9" in capsys.readouterr().out


def test_budget_parsing():
    assert parse_count("12", "x") == ("abs", 12)
    assert parse_count("2.5%", "x") == ("pct", 2.5)
    assert resolve_ids("2%", 15060) == 301
    assert resolve_ids("1%", 10) == 1
    assert resolve_images("100%", 3, 17) == 17
    assert resolve_images("1%", 3, 17) == 3
    for bad in ("0", "-3", "abc", "0%", "150%"):
        with pytest.raises(Exception):
            parse_count(bad, "x")


def test_manifest_key_order(files):
    cfg = RunConfig(pools=[("A", files["a"])], target=files["t"], clusters=3)
    m = run_search(cfg).manifest
    assert list(m) == ["toolkit", "created_at", "command", "config", "pool", "target", "search",
                       "prune", "composition", "selected"]
    assert m["config"]["conventions"]["covariance_denominator"] == "n-1"
