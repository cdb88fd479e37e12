import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cshap.dataset import (
    CLASSES,
    BackgroundSet,
    Origin,
    ScenarioMeta,
    TraceFormatError,
    WindowProfile,
    cached_background,
    class_index,
    derive_rng,
    export_trace,
    fit_length,
    load_background,
    load_manifest_windows,
    parse_trace,
    phase_windows,
    read_manifest,
    save_background,
    select_background,
    slide_windows,
    stack_windows,
    trace_phases,
    window_balance,
    window_count,
    write_manifest,
)
from cshap.decompose import DecomposeParams
from cshap.signal import Signal, recompose


def _write(path, rows, meta=None):
    path.write_text("timestamp_s,value,phase_kind\n" + "".join(rows))
    meta = meta or {"trace_id": "t0", "scenario": {"workload": "w", "core_type": "big", "condition": "NoFan"}}
    (path.parent / (path.name + ".json")).write_text(json.dumps(meta))


def test_parse_trace_phases(tmp_path):
    rows = [f"{i * 0.001},{0.5 + i},{'cycle-op' if 2 <= i < 5 else 'idle'}\n" for i in range(8)]
    _write(tmp_path / "a.csv", rows)
    t = parse_trace(tmp_path / "a.csv")
    assert t.trace_id == "t0" and t.scenario.label == CLASSES.index("NoFan")
    assert [(m.start, m.end, m.kind) for m in t.phase_marks] == [(0, 2, "idle"), (2, 5, "cycle-op"), (5, 8, "idle")]
    (ph,) = trace_phases(t)
    assert ph.signal.values.tolist() == [2.5, 3.5, 4.5]


def test_non_monotonic_timestamp_reports_row(tmp_path):
    rows = ["0.0,1,cycle-op\n", "0.1,1,cycle-op\n", "0.05,1,cycle-op\n"]
    _write(tmp_path / "b.csv", rows)
    with pytest.raises(TraceFormatError, match="row 3") as e:
        parse_trace(tmp_path / "b.csv")
    assert e.value.line == 4


def test_missing_sidecar(tmp_path):
    (tmp_path / "c.csv").write_text("timestamp_s,value\n0,1\n")
    with pytest.raises(TraceFormatError, match="sidecar"):
        parse_trace(tmp_path / "c.csv")


def test_bad_header_and_values(tmp_path):
    _write(tmp_path / "d.csv", ["0,abc,cycle-op\n"])
    with pytest.raises(TraceFormatError, match="non-numeric"):
        parse_trace(tmp_path / "d.csv")
    (tmp_path / "e.csv").write_text("time,value\n0,1\n")
    (tmp_path / "e.csv.json").write_text((tmp_path / "d.csv.json").read_text())
    with pytest.raises(TraceFormatError, match="header"):
        parse_trace(tmp_path / "e.csv")


def test_export_parse_roundtrip(tmp_path, small_corpus):
    t = small_corpus[0]
    for fmt in ("csv", "tsv"):
        back = parse_trace(export_trace(t, tmp_path / f"t.{fmt}", fmt), fmt)
        assert back.signal == t.signal
        assert back.phase_marks == t.phase_marks
        assert back.scenario == t.scenario and back.trace_id == t.trace_id


def test_window_count_frozen():
    assert window_count(100, 100, 10) == 1
    assert window_count(99, 100, 10) == 0
    assert window_count(1600, 100, 10) == 151
    assert window_count(2000, 400, 10) == 161


@given(st.integers(1, 3000), st.integers(1, 500), st.integers(1, 50))
def test_window_count_formula(n, w, shift):
    expected = (n - w) // shift + 1 if n >= w else 0
    assert window_count(n, w, shift) == expected


def test_slide_windows_content():
    s = Signal(np.arange(30) * 0.5 + 10, np.arange(30.0))
    ws = slide_windows(s, WindowProfile(10, 7), "Normal", trace_id="t", phase_index=2)
    assert len(ws) == 3
    assert ws[1].metric_channel.tolist() == list(range(7, 17))
    assert ws[1].time_channel[0] == 0.0 and ws[1].time_channel[-1] == 4.5
    assert ws[2].instance_id == "t/2/14"
    assert Origin.parse("t/2/14") == Origin("t", 2, 14)
    assert ws[0].as_array().shape == (2, 10)


def test_class_index():
    assert class_index("UnderVolt") == 2 and class_index(1) == 1
    with pytest.raises(ValueError):
        class_index("Broken")
    with pytest.raises(ValueError):
        ScenarioMeta("w", "big", "Broken")


def test_split_holds_out_first_and_last(small_corpus, small_split):
    test_keys = {ph.key for ph in small_split.test}
    train_keys = {ph.key for ph in small_split.train}
    assert not test_keys & train_keys
    for t in small_corpus:
        assert {(t.trace_id, 0), (t.trace_id, 3)} <= test_keys
    assert small_split.balance["test"] == {"Normal": 2, "NoFan": 2, "UnderVolt": 2}


def test_stack_windows_and_balance(small_split):
    ws = phase_windows(small_split.test, WindowProfile(400, 50))
    x, y = stack_windows(ws)
    assert x.shape == (len(ws), 2, 400)
    bal = window_balance(ws)
    assert sum(bal.values()) == len(ws) and set(y.tolist()) == {0, 1, 2}


def test_fit_length():
    assert fit_length([1, 2, 3], 2).tolist() == [1, 2]
    assert fit_length([1, 2, 3], 5).tolist() == [1, 2, 3, 3, 3]


def test_derive_rng_independent_of_order():
    a = derive_rng(5, "x", 1).random()
    derive_rng(5, "y").random()
    assert derive_rng(5, "x", 1).random() == a
    assert derive_rng(5, "x", 2).random() != a


def test_background_selection(tmp_path, small_split):
    p = DecomposeParams()
    bg = select_background(small_split.train, 200, p, seed=1, cycles_per_scenario=2)
    assert isinstance(bg, BackgroundSet) and len(bg) == 6 and bg.window_size == 200
    again = select_background(small_split.train, 200, p, seed=1, cycles_per_scenario=2)
    assert all(np.array_equal(recompose(a), recompose(b)) for a, b in zip(bg.decompositions, again.decompositions))
    save_background(bg, tmp_path / "bg.npz")
    back = load_background(tmp_path / "bg.npz")
    assert back.provenance == bg.provenance
    assert all(np.array_equal(recompose(a), recompose(b)) for a, b in zip(bg.decompositions, back.decompositions))
    cached = cached_background(tmp_path / "cache", small_split.train, 200, p, 1, cycles_per_scenario=2)
    assert len(list((tmp_path / "cache").iterdir())) == 1 and len(cached) == 6
    with pytest.raises(ValueError):
        select_background(small_split.train, 200, p, core_type="LITTLE")


def test_manifest_roundtrip(tmp_path, small_corpus, small_split):
    files = [export_trace(t, tmp_path / f"{t.trace_id}.csv") for t in small_corpus]
    prof = WindowProfile(200, 20)
    inst = {"train": phase_windows(small_split.train, prof), "test": phase_windows(small_split.test, prof)}
    write_manifest(tmp_path / "m.json", [f.name for f in files], prof, small_split, inst)
    doc = read_manifest(tmp_path / "m.json")
    assert len(doc["instances"]) == len(inst["train"]) + len(inst["test"])
    data = load_manifest_windows(tmp_path / "m.json")
    assert sorted(w.instance_id for w in data["test"]) == sorted(w.instance_id for w in inst["test"])
    assert len(data["train"]) == len(inst["train"])
