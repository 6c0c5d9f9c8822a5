import csv
import json
import subprocess
import sys

import pytest

from conftest import brute_classes
from nlsgrowth.cli import main
from nlsgrowth.lambda_set import GenerationSet, reference_set
from nlsgrowth.modes import zero_potential
from nlsgrowth.resonance import canonical, trivial_permutations


def run_cli(tmp_path, argv, cfg, name="out"):
    conf = tmp_path / f"{name}.json"
    conf.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main(argv + ["--config", str(conf), "--out", str(out), "--quiet"])
    return code, out


def load(path):
    return json.loads(path.read_text())


def test_resonance_scan_radius0(tmp_path):
    code, out = run_cli(tmp_path, ["resonance-scan"], {"radius": 0})
    assert code == 0
    assert (out / "tuples.jsonl").read_text() == ""
    doc = load(out / "run.json")
    assert doc["passed"] and doc["summary"]["NonResonant"] == 1
    assert doc["summary"]["min_abs_rho_ii"] is None  # empty minimum written as null


def test_resonance_scan_counts(tmp_path):
    code, out = run_cli(tmp_path, ["resonance-scan"], {"radius": 4, "kappa0": 0})
    assert code == 0
    summary = load(out / "summary.json")
    want = brute_classes(4, zero_potential(), 0.3, 0)
    assert {c: summary[c] for c in want} == want
    lines = (out / "tuples.jsonl").read_text().splitlines()
    first = json.loads(lines[0])
    assert set(first) == {"n", "rho", "alt_sq", "class"}
    # one canonical representative per class of trivial permutations
    reps = [tuple(tuple(p) for p in json.loads(line)["n"]) for line in lines]
    assert all(canonical(t) == t for t in reps) and len(set(reps)) == len(reps)
    assert sum(len(set(trivial_permutations(t))) for t in reps) == summary["A1"] + summary["IPrime_ii"]


@pytest.mark.parametrize("cfg", [{"radius": 2, "eta": 1.5}, {"radius": 2, "colour": 1}, {}, {"radius": 7, "write_tuples": True}])
def test_resonance_scan_bad_config(tmp_path, cfg):
    assert run_cli(tmp_path, ["resonance-scan"], cfg)[0] == 2


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{radius")
    assert main(["resonance-scan", "--config", str(bad), "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_nf_check(tmp_path):
    code, out = run_cli(tmp_path, ["nf-check"], {"radius": 3}, "a")
    assert code == 0 and load(out / "nf_report.json")["passed"]
    assert run_cli(tmp_path, ["nf-check"], {"box": []}, "b")[0] == 0
    assert run_cli(tmp_path, ["nf-check"], {"radius": 2, "corrupt": 1e-3}, "c")[0] == 1
    assert run_cli(tmp_path, ["nf-check"], {"radius": 2, "box": [[0, 0]]}, "d")[0] == 2


def test_lambda_build(tmp_path):
    code, out = run_cli(tmp_path, ["lambda", "build"], {"N": 3})
    assert code == 0
    S = GenerationSet.from_json(load(out / "set.json"))
    assert [len(g) for g in S.generations] == [4, 4, 4]


def test_lambda_verify_mutated(tmp_path):
    base = reference_set(3, certified=False)
    gens = [list(g) for g in base.generations]
    gens[0].append((1, 40001))
    bad = GenerationSet(gens, list(base.families), base.kappa0, base.eta)
    path = tmp_path / "bad_set.json"
    path.write_text(bad.dumps())
    code, out = run_cli(tmp_path, ["lambda", "verify"], {"set": str(path)})
    assert code == 1
    rep = load(out / "report.json")
    assert rep["conditions"]["2"]["witness"] is not None
    assert run_cli(tmp_path, ["lambda", "verify"], {"N": 4}, "ok")[0] == 0


def test_lambda_certify(tmp_path):
    code, out = run_cli(tmp_path, ["lambda", "certify"], {"N": 3})
    assert code == 0
    assert (out / "certified_set.json").read_text().strip() == reference_set(3).dumps()


def test_toy_run(tmp_path):
    code, out = run_cli(tmp_path, ["toy", "run"], {"b0": [[0, 0], [1, 0], [0, 0]], "t_end": 2.0, "samples": 9})
    assert code == 0
    with open(out / "toy.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["|b_2|^2"]) for r in rows] == pytest.approx([1.0] * 9, abs=1e-12)  # one occupied slot never spreads
    assert all(float(r["|b_1|^2"]) == 0 for r in rows)
    assert max(load(out / "run.json")["summary"]["rescale_residuals"].values()) <= 1e-8


def test_toy_slider(tmp_path):
    code, out = run_cli(tmp_path, ["toy", "slider"], {"N": 4, "start": 2, "end": 3})
    assert code == 0
    res = load(out / "slider.json")
    assert res["achieved"] >= 0.9 and res["T0"] > 0
    assert run_cli(tmp_path, ["toy", "slider"], {"N": 4, "start": 3, "end": 2}, "bad")[0] == 2


def test_cascade_run_zero_potential(tmp_path):
    cfg = {"N": 3, "potential": "zero", "dynamics": "truncated", "lambda": 8, "samples": 16}
    code, out = run_cli(tmp_path, ["cascade", "run"], cfg)
    with open(out / "deviation.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["l1_dev"]) == 0 for r in rows)
    doc = load(out / "run.json")
    assert doc["deviation"]["within_bound"]
    assert code == (0 if doc["sobolev"]["chain_holds"] else 1)


def test_cascade_sweep(tmp_path):
    cfg = {"N": 3, "lambdas": [8, 16], "samples": 16}
    code, out = run_cli(tmp_path, ["cascade", "sweep"], cfg)
    assert code == 0
    doc = load(out / "run.json")
    assert -3.5 <= doc["summary"]["exponent"] <= -2.5
    assert (out / "sweep.csv").read_text().splitlines()[0] == "lambda,peak_l1_dev,bound"
    assert run_cli(tmp_path, ["cascade", "sweep"], {"N": 3}, "nolam")[0] == 2


def test_module_entry_point(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"radius": 1}))
    proc = subprocess.run([sys.executable, "-m", "nlsgrowth", "resonance-scan", "--config", str(conf),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0 and "A1" in proc.stdout
