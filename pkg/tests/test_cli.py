import json
import os
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import random_unit
from dckit.cli import cli
from dckit.conformance import KERNEL_INVARIANTS
from dckit.embedding_store import LabeledEmbeddingSet, StyleFeatureSet, read_embedding_file, write_embedding_file
from dckit.metrics import MetricParams, c_intra, d_intra, fid, metric_report, u_class, unique_count_curve
from dckit.sampling import SamplingPlan, run_sampling


def clustered(rng, classes, per, dim, spread=0.2):
    centers = random_unit(rng, classes, dim)
    labels = np.repeat(np.arange(classes), per)
    return labels, centers[labels] + spread * rng.normal(size=(classes * per, dim))


@pytest.fixture
def files(tmp_path):
    rng = np.random.default_rng(0)
    labels, vecs = clustered(rng, 4, 5, 8)
    write_embedding_file(LabeledEmbeddingSet(labels, vecs), tmp_path / "ids.dceb")
    labels, vecs = clustered(rng, 4, 10, 6, spread=0.5)
    write_embedding_file(StyleFeatureSet(labels, vecs), tmp_path / "real.dceb")
    write_embedding_file(StyleFeatureSet(labels, vecs + 0.1 * rng.normal(size=vecs.shape)), tmp_path / "gen.dceb")
    write_embedding_file(LabeledEmbeddingSet(np.arange(40), random_unit(rng, 40, 8)), tmp_path / "cand.dceb")
    write_embedding_file(LabeledEmbeddingSet(np.arange(10), random_unit(rng, 10, 8)), tmp_path / "bank.dceb")
    (tmp_path / "plan.json").write_text(json.dumps({"subjects": 2, "images_per_subject": 3, "seed": 4}))
    return tmp_path


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args])


class TestMetrics:
    def test_report_matches_library(self, files):
        out = files / "report.json"
        res = invoke("metrics", "--ids", files / "ids.dceb", "--real-styles", files / "real.dceb",
                     "--gen-styles", files / "gen.dceb", "--out", out)
        assert res.exit_code == 0, res.output
        doc = json.loads(out.read_text())
        ids = read_embedding_file(files / "ids.dceb")
        from dckit.embedding_store import read_style_file

        real, gen = read_style_file(files / "real.dceb"), read_style_file(files / "gen.dceb")
        assert doc["u_class"] == u_class(ids, 0.3)
        assert doc["c_intra"] == c_intra(ids, 0.3)
        assert doc["d_intra"] == d_intra(real, gen, 3)
        assert doc["fid"] == fid(real, gen)
        assert doc["input_digests"] == metric_report(ids, real, gen, MetricParams()).to_dict()["input_digests"]
        assert doc["config"]["tau"] == 0.3 and doc["config"]["knn"] == 3

    def test_stdout_and_ids_only(self, files):
        res = invoke("metrics", "--ids", files / "ids.dceb", "--tau", "0.5")
        assert res.exit_code == 0
        doc = json.loads(res.stdout)
        assert doc["d_intra"] is None and doc["fid"] is None
        assert doc["u_class"] == u_class(read_embedding_file(files / "ids.dceb"), 0.5)

    def test_distance_mode(self, files):
        a = json.loads(invoke("metrics", "--ids", files / "ids.dceb", "--tau", "0.7", "--distance-mode", "distance").stdout)
        b = json.loads(invoke("metrics", "--ids", files / "ids.dceb", "--tau", str(1 - 0.7)).stdout)
        assert a["c_intra"] == b["c_intra"] and a["u_class"] == b["u_class"]

    def test_missing_file(self, files):
        res = invoke("metrics", "--ids", files / "nope.dceb")
        assert res.exit_code == 1

    def test_bad_format(self, files):
        (files / "junk.dceb").write_bytes(b"not an embedding file at all")
        assert invoke("metrics", "--ids", files / "junk.dceb").exit_code == 1

    def test_precondition_names_class(self, files):
        rng = np.random.default_rng(1)
        labels = np.array([0] * 10 + [1] * 10)
        write_embedding_file(StyleFeatureSet(labels, rng.normal(size=(20, 3))), files / "r.dceb")
        write_embedding_file(StyleFeatureSet([0] * 10 + [1] * 2, rng.normal(size=(12, 3))), files / "g.dceb")
        res = invoke("metrics", "--ids", files / "ids.dceb", "--real-styles", files / "r.dceb",
                     "--gen-styles", files / "g.dceb")
        assert res.exit_code == 2
        assert "1" in res.stderr and "class" in res.stderr


class TestSample:
    def run(self, files, name, *extra):
        out = files / name
        res = invoke("sample", "--candidates", files / "cand.dceb", "--style-bank", files / "bank.dceb",
                     "--plan", files / "plan.json", "--out", out, *extra)
        return res, out

    def test_six_lines_reproducible(self, files):
        res, out = self.run(files, "a.jsonl")
        assert res.exit_code == 0, res.output
        lines = out.read_text().splitlines()
        assert len(lines) == 6
        assert all(set(json.loads(line)) >= {"label", "id_index", "style_index"} for line in lines)
        _, again = self.run(files, "b.jsonl")
        assert out.read_bytes() == again.read_bytes()
        assert "dedup=" in res.stderr and "unique=" in res.stderr and "selected=2" in res.stderr

    def test_oversample_lines(self, files):
        plan = {"subjects": 2, "images_per_subject": 3, "oversample_count": 5}
        (files / "plan.json").write_text(json.dumps(plan))
        res, out = self.run(files, "o.jsonl")
        assert res.exit_code == 0
        lines = [json.loads(x) for x in out.read_text().splitlines()]
        assert len(lines) == 6 + 2 * 5
        assert sum(x["style_index"] == "self" for x in lines) == 10

    def test_matches_library_and_sidecar(self, files):
        res, out = self.run(files, "c.jsonl", "--seed", "9")
        plan = SamplingPlan(subjects=2, images_per_subject=3, seed=9)
        cand = read_embedding_file(files / "cand.dceb")
        bank = read_embedding_file(files / "bank.dceb")
        result = run_sampling(cand, None, bank, plan)
        assert out.read_text() == result.to_jsonl()
        side = json.loads((files / "c.jsonl.run.json").read_text())
        assert side["stage_counts"] == result.stage_counts
        assert side["input_digests"]["candidates"] == cand.digest()
        assert side["config"]["plan"]["seed"] == 9

    def test_seed_changes_output(self, files):
        _, a = self.run(files, "s1.jsonl", "--seed", "1")
        _, b = self.run(files, "s2.jsonl", "--seed", "2")
        assert a.read_bytes() != b.read_bytes()

    def test_bad_plan(self, files):
        (files / "plan.json").write_text(json.dumps({"subjects": 2, "images_per_subject": 3, "colour": 1}))
        assert self.run(files, "x.jsonl")[0].exit_code == 1
        (files / "plan.json").write_text(json.dumps({"subjects": 100, "images_per_subject": 3}))
        assert self.run(files, "x.jsonl")[0].exit_code == 2


class TestUniqueCurve:
    def test_orthonormal(self, tmp_path):
        write_embedding_file(LabeledEmbeddingSet([0, 1, 2], np.eye(3)), tmp_path / "f.dceb")
        out = tmp_path / "curve.csv"
        res = invoke("unique-curve", "--features", tmp_path / "f.dceb", "--checkpoints", "1,2,3", "--out", out)
        assert res.exit_code == 0
        assert out.read_text() == "n,unique_count\n1,1\n2,2\n3,3\n"
        side = json.loads((tmp_path / "curve.csv.run.json").read_text())
        assert side["input_digests"]["features"]

    def test_duplicates_flat_tail(self, tmp_path):
        rng = np.random.default_rng(2)
        base = np.eye(16)[:5]
        feats = np.vstack([base, base[rng.integers(0, 5, size=95)]])
        write_embedding_file(LabeledEmbeddingSet(np.arange(100), feats), tmp_path / "f.dceb")
        res = invoke("unique-curve", "--features", tmp_path / "f.dceb", "--checkpoints", "5,50,100")
        assert res.stdout.splitlines()[1:] == ["5,5", "50,5", "100,5"]

    def test_matches_library(self, files):
        res = invoke("unique-curve", "--features", files / "cand.dceb", "--checkpoints", "10,20,40", "--tau", "0.2")
        curve = unique_count_curve(read_embedding_file(files / "cand.dceb"), 0.2, [10, 20, 40])
        assert res.stdout == "n,unique_count\n" + "".join(f"{n},{u}\n" for n, u in curve)

    def test_bad_checkpoints(self, files):
        assert invoke("unique-curve", "--features", files / "cand.dceb", "--checkpoints", "a,b").exit_code == 2
        assert invoke("unique-curve", "--features", files / "cand.dceb", "--checkpoints", "50").exit_code == 2


def test_fid_command(files):
    res = invoke("fid", files / "real.dceb", files / "real.dceb")
    assert res.exit_code == 0
    assert json.loads(res.stdout)["fid"] <= 1e-6


class TestKernelCheck:
    def test_default_passes(self, tmp_path):
        out = tmp_path / "k.json"
        res = invoke("kernel-check", "--out", out)
        assert res.exit_code == 0
        report = json.loads(out.read_text())
        assert set(report) == set(KERNEL_INVARIANTS)
        assert all(r["pass"] for r in report.values())

    def test_injected_corruption(self):
        res = invoke("kernel-check", "--inject-corrupt-schedule")
        assert res.exit_code == 3
        assert "schedule_alpha_bar_decreasing" in res.stderr


def test_module_entry_point_with_env(files):
    env = dict(os.environ, DCKIT_THREADS="1", DCKIT_BACKEND="python")
    proc = subprocess.run(
        [sys.executable, "-m", "dckit", "unique-curve", "--features", str(files / "cand.dceb"), "--checkpoints", "40"],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0, proc.stderr
    native = invoke("unique-curve", "--features", files / "cand.dceb", "--checkpoints", "40")
    assert proc.stdout == native.stdout
