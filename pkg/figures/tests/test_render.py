import csv
import json
import xml.etree.ElementTree as ET

import pytest

from cfaps_figures import FigureError, render
from cfaps_figures.render import main


def write_eval_csv(path, mean_se="1.2345", active="2.5", rows=3):
    header = ["window", "active_aps", "total_power_w", "se_ue_0", "mean_se", "mean_cost"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for i in range(rows):
            w.writerow([i, active, "5.4", mean_se, mean_se, "0.1"])
        w.writerow(["mean", active, "5.4", mean_se, mean_se, "0.1"])
        w.writerow(["std", "0.5", "0.0", "0.25", "0.25", "0.0"])


def write_bench_csv(path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "rep", "latency_s"])
        for method, base in (("k-strongest", 1e-5), ("aps-gnn", 1e-3)):
            for rep in range(40):
                w.writerow([method, rep, base * (1 + 0.01 * rep)])


def svg_text(path):
    root = ET.parse(path).getroot()
    return " ".join(el.text or "" for el in root.iter() if el.text)


def test_bars_round_trip_annotations(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_eval_csv(a, mean_se="1.2345", active="2.5")
    write_eval_csv(b, mean_se="3.75", active="6.25")
    spec = {"kind": "bars", "se_target": 1.0, "output": str(tmp_path / "fig_bars"),
            "series": [{"label": "ours", "csv": str(a)},
                       {"label": "baseline", "csv": str(b)}]}
    paths = render(spec)
    assert (tmp_path / "fig_bars.png").exists()
    assert (tmp_path / "fig_bars.svg").exists()
    text = svg_text(tmp_path / "fig_bars.svg")
    # annotations carry the exact CSV summary strings
    for val in ("1.2345", "3.75", "2.5", "6.25"):
        assert val in text
    assert len(paths) == 2


def test_pareto_from_eval_series(tmp_path):
    a = tmp_path / "a.csv"
    write_eval_csv(a, mean_se="2.125", active="3.5")
    spec = {"kind": "pareto", "se_target": 1.0, "output": str(tmp_path / "fig_p"),
            "series": [{"label": "ours", "csv": str(a)}]}
    render(spec)
    assert "2.125" in svg_text(tmp_path / "fig_p.svg")


def test_pareto_from_sweep(tmp_path):
    sweep = tmp_path / "sweep.csv"
    with open(sweep, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["eta", "seed", "mean_se", "std_se", "mean_active_aps",
                    "std_active_aps", "mean_cost"])
        w.writerow([0.1, 0, "0.5", "0.1", "1.5", "0.2", "0.5"])
        w.writerow([10, 0, "2.75", "0.2", "4.5", "0.3", "-1.75"])
    spec = {"kind": "pareto", "output": str(tmp_path / "fig_sw"), "sweep_csv": str(sweep)}
    render(spec)
    text = svg_text(tmp_path / "fig_sw.svg")
    assert "0.5" in text and "2.75" in text


def test_latency_log_axis(tmp_path):
    bench = tmp_path / "bench.csv"
    write_bench_csv(bench)
    spec = {"kind": "latency", "output": str(tmp_path / "fig_lat"), "csv": str(bench)}
    render(spec)
    assert (tmp_path / "fig_lat.svg").exists()
    assert "log10" in svg_text(tmp_path / "fig_lat.svg")


def test_empty_csv_errors_and_writes_nothing(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("window,active_aps,total_power_w,mean_se,mean_cost\n")
    spec = {"kind": "bars", "output": str(tmp_path / "fig_e"),
            "series": [{"label": "x", "csv": str(empty)}]}
    with pytest.raises(FigureError, match="no data rows"):
        render(spec)
    assert not (tmp_path / "fig_e.png").exists()
    assert not (tmp_path / "fig_e.svg").exists()


def test_schema_violation_names_column(tmp_path):
    bad = tmp_path / "bad.csv"
    with open(bad, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["window", "active_aps", "mean_se"])  # missing columns
        w.writerow([0, 1, 2])
    spec = {"kind": "bars", "output": str(tmp_path / "fig_b"),
            "series": [{"label": "x", "csv": str(bad)}]}
    with pytest.raises(FigureError, match="total_power_w"):
        render(spec)


def test_missing_summary_rows(tmp_path):
    nosum = tmp_path / "nosum.csv"
    with open(nosum, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["window", "active_aps", "total_power_w", "mean_se", "mean_cost"])
        w.writerow([0, 1, 2, 3, 0.1])
    spec = {"kind": "bars", "output": str(tmp_path / "f"),
            "series": [{"label": "x", "csv": str(nosum)}]}
    with pytest.raises(FigureError, match="summary"):
        render(spec)


def test_rendering_does_not_mutate_inputs(tmp_path):
    a = tmp_path / "a.csv"
    write_eval_csv(a)
    before = a.read_bytes()
    render({"kind": "bars", "output": str(tmp_path / "f"),
            "series": [{"label": "x", "csv": str(a)}]})
    assert a.read_bytes() == before


def test_cli_entry_point(tmp_path, capsys):
    a = tmp_path / "a.csv"
    write_eval_csv(a)
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps({
        "kind": "bars", "output": str(tmp_path / "fig"),
        "series": [{"label": "x", "csv": str(a)}]}))
    assert main(["--spec", str(spec_path)]) == 0
    out = capsys.readouterr().out
    assert "fig.png" in out and "fig.svg" in out
    bad_spec = tmp_path / "bad.json"
    bad_spec.write_text(json.dumps({"kind": "nope", "output": "x"}))
    assert main(["--spec", str(bad_spec)]) == 1
