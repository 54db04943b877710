import json
import pickle

import pytest

from spsca.leakage import (ALL_PIN_STATES, CellType, DriveStrength, LibraryError, PinState,
                           _builtin_table, default_table, ff_leakage, load_table, read_table)

REFERENCE_LEAKAGE = {
    CellType.LVT: (112.8, 136.0, 129.3, 118.3, 138.1, 125.0, 131.5, 93.5),
    CellType.RVT: (9.0, 10.1, 10.1, 9.2, 10.2, 9.1, 9.7, 7.1),
    CellType.HVT: (1.0,) * 8,
}


def test_default_values_exact():
    t = default_table()
    for cell, row in REFERENCE_LEAKAGE.items():
        for pins, expected in zip(ALL_PIN_STATES, row):
            assert t.value(cell, pins) == expected
    assert t.value(CellType.LVT, PinState(0, 0, 0)) == 112.8
    assert t.value(CellType.RVT, PinState(0, 1, 0)) == 10.1


def test_pin_state_order_is_clk_d_q():
    assert [p.code for p in ALL_PIN_STATES] == ["000", "001", "010", "011",
                                               "100", "101", "110", "111"]
    assert default_table().values[CellType.LVT.index, 1, 1, 1] == 93.5


def test_shipped_file_matches_builtin():
    assert default_table() == _builtin_table()


def test_strength_scaling_and_area():
    t = default_table()
    pins = PinState(0, 1, 1)
    assert ff_leakage(t, CellType.LVT, DriveStrength.X2, pins) == 118.3
    assert ff_leakage(t, CellType.LVT, DriveStrength.X8, pins) == pytest.approx(4 * 118.3)
    assert t.ff_area(CellType.HVT, DriveStrength.X4) == 2.0
    assert t.ff_area(CellType.LVT, DriveStrength.X2) == 1.0
    assert (t.mux_area, t.mux_leakage) == (0.35, 0.5)


def test_roundtrip_and_pickle(tmp_path):
    t = default_table()
    assert load_table(t.dumps()) == t
    p = tmp_path / "lib.json"
    p.write_text(t.dumps())
    assert read_table(p) == t
    assert pickle.loads(pickle.dumps(t)) == t


def test_immutable():
    t = default_table()
    with pytest.raises(TypeError):
        t.leakage["LVT.000"] = 0.0
    with pytest.raises(ValueError):
        t.values[0, 0, 0, 0] = 1.0


def _doc():
    return default_table().to_dict()


def test_missing_entry_named():
    doc = _doc()
    del doc["leakage"]["RVT.101"]
    with pytest.raises(LibraryError, match="RVT.101"):
        load_table(json.dumps(doc))


def test_ordering_violation_named():
    doc = _doc()
    doc["leakage"]["HVT.110"] = 50.0
    with pytest.raises(LibraryError, match="110"):
        load_table(json.dumps(doc))


@pytest.mark.parametrize("mutate", [
    lambda d: d["leakage"].__setitem__("LVT.000", -1.0),
    lambda d: d["leakage"].__setitem__("LVT.000", "big"),
    lambda d: d["area"].__setitem__("LVT.X4", 0),
    lambda d: d.pop("mux"),
    lambda d: d.__setitem__("format", "other"),
])
def test_malformed_rejected(mutate):
    doc = _doc()
    mutate(doc)
    with pytest.raises(LibraryError):
        load_table(json.dumps(doc))


def test_not_json():
    with pytest.raises(LibraryError):
        load_table("{not json")


def test_drive_strength_parse():
    assert DriveStrength.parse("x4") is DriveStrength.X4
    assert DriveStrength.parse(8) is DriveStrength.X8
    with pytest.raises(ValueError):
        DriveStrength.parse("X3")
