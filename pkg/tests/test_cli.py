import json
import os

import numpy as np
import pytest

from latepoints.cli import main
from latepoints.report import StatsReport, SvgCanvas, canonical_json, config_digest


def run(args, tmp_path):
    return main(list(args) + ["--out", str(tmp_path)])


def test_green_check(tmp_path):
    assert run(["green", "--d", "3", "--check"], tmp_path) == 0
    assert run(["green", "--d", "4", "--check"], tmp_path) == 0


def test_green_table_csv(tmp_path):
    assert run(["green", "--d", "3", "--radius", "2"], tmp_path) == 0
    path = tmp_path / "green_d3_r2.csv"
    lines = path.read_text().splitlines()
    assert lines[1] == "d,key,value,err"
    assert any(line.startswith("3,0:0:0,1.516386059151") for line in lines)


def test_green_d5_refuses_check(tmp_path, capsys):
    assert run(["green", "--d", "5", "--check"], tmp_path) == 2


def test_cap_named_and_explicit(tmp_path):
    assert run(["cap", "--set", "K1"], tmp_path) == 0
    assert run(["cap", "--set", "0:0:0,1:0:0"], tmp_path) == 0
    report = json.loads((tmp_path / "cap_K1.json").read_text())
    caps = {s["statistic"]: s["value"] for s in report["statistics"]}
    assert caps["cap"] == pytest.approx(1.271113197749, abs=1e-9)


def test_classify_exit_codes(tmp_path):
    assert run(["classify", "--d", "3", "--check"], tmp_path) == 0
    assert run(["classify", "--d", "4", "--check"], tmp_path) == 0


def test_walk_csv_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert run(["walk", "--N", "12", "--alpha", "0.5"], a) == 0
    assert run(["walk", "--N", "12", "--alpha", "0.5"], b) == 0
    fa = a / "late_N12_a0.5_s0.0.csv"
    fb = b / "late_N12_a0.5_s0.0.csv"
    assert fa.read_bytes() == fb.read_bytes()


def test_ri_check(tmp_path):
    assert run(["ri", "--set", "single", "--side", "7", "--u", "1",
                "--replicas", "3000", "--check"], tmp_path) == 0


def test_slt_demo_check(tmp_path):
    assert run(["slt-demo", "--instances", "30", "--check"], tmp_path) == 0
    report = json.loads((tmp_path / "slt_demo.json").read_text())
    assert report["statistics"][0]["value"] == 0


def test_figure1_small(tmp_path):
    assert run(["figure1", "--N", "32", "--alpha", "0.6"], tmp_path) == 0
    svg = (tmp_path / "figure1_N32_a0.6_s0.svg").read_text()
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    csv_lines = (tmp_path / "figure1_N32_a0.6_s0.csv").read_text().splitlines()
    assert csv_lines[1] == "panel,x,y,z,red"


def test_config_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"N": 10, "alpha": 0.5}))
    assert run(["walk", "--N", "99", "--config", str(cfg)], tmp_path) == 0
    assert (tmp_path / "late_N10_a0.5_s0.0.csv").exists()


def test_canonical_json_and_digest():
    a = config_digest({"b": 1, "a": 2})
    b = config_digest({"a": 2, "b": 1})
    assert a == b and len(a) == 16
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


def test_stats_report_roundtrip(tmp_path):
    rep = StatsReport({"x": 1})
    rep.add("m", 2.5, 0.1, 100)
    p = tmp_path / "r.json"
    rep.write(p)
    back = json.loads(p.read_text())
    assert back["statistics"][0]["statistic"] == "m"
    assert back["statistics"][0]["config_digest"] == back["config_digest"]
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "statistic,value,se,replicas,config_digest"


def test_svg_canvas():
    c = SvgCanvas(100, 50, title="t")
    c.rect(0, 0, 10, 10, "white")
    c.circle(5, 5, 2, "red")
    c.text(1, 1, "hi")
    s = c.to_string()
    assert "<title>t</title>" in s
    assert s.count("<circle") == 1
