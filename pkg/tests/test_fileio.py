import numpy as np
import pytest

from toolphys import fileio
from toolphys.errors import ValidationError
from toolphys.table import VariableTable

CHAIN = """\
name: bad
links:
  - name: a
    joint: revolute
    axis: [0, 0, 1]
    mass: 1.0
  - name: b
    joint: revolute
    mass: -2.0
"""


def test_negative_mass_names_field_and_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text(CHAIN)
    with pytest.raises(ValidationError) as e:
        fileio.load_chain(p)
    assert e.value.line == 9 and e.value.field == "links[1].mass"
    assert str(e.value).startswith(f"{p}:9: ")


@pytest.mark.parametrize("text,line,field", [
    ("links:\n  - name: a\n    joint: screw\n", 3, "links[0].joint"),
    ("links:\n  - name: a\n    inertia: [[1, 2, 0], [0, 1, 0], [0, 0, 1]]\n", 3, "links[0].inertia"),
    ("links:\n  - name: a\n    limits: {lower: 1.0, upper: 0.0}\n", 3, "links[0].limits.lower"),
    ("links:\n  - joint: revolute\n", 2, "links[0]"),
    ("name: x\nlinks: [\n", 3, ""),
])
def test_chain_schema_errors(text, line, field):
    with pytest.raises(ValidationError) as e:
        fileio.chain_from_doc(fileio.Doc(text, "c.yaml"))
    assert e.value.line == line and e.value.field == field


def test_tool_normal_must_be_unit():
    text = ("name: t\nmass: 0.1\nbases:\n  - {label: a, position: [0, 0, 0], normal: [0, 0, 2], roles: [affordance]}\n")
    with pytest.raises(ValidationError) as e:
        fileio.tool_from_doc(fileio.Doc(text, "t.yaml"))
    assert e.value.line == 4 and e.value.field == "bases[0].normal"


def test_tool_without_functional_basis_rejected():
    text = ("name: t\nmass: 0.1\nbases:\n  - {label: a, position: [0, 0, 0], normal: [0, 0, 1], roles: [affordance]}\n")
    with pytest.raises(ValidationError):
        fileio.tool_from_doc(fileio.Doc(text, "t.yaml"))


def test_shipped_chains_load():
    dof = {c: fileio.load_chain(c).dof for c in fileio.shipped("chains")}
    assert dof == {"planar3": 3, "arm6": 6, "human7": 7}


def test_table_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = VariableTable.from_arrays(
        {"p": rng.standard_normal(5), "v": rng.standard_normal(5) * 1e-17, "F": rng.standard_normal(5)},
        {"p": "Action", "v": "Action", "F": "Simulation"}, {"v": "p"}, {"F": "N"})
    path = tmp_path / "t.csv"
    fileio.write_table(t, path)
    back = fileio.read_table(path)
    assert back.names == t.names
    for n in t.names:
        np.testing.assert_array_equal(back[n], t[n])
        assert back.columns[n].parent == t.columns[n].parent
        assert back.columns[n].unit == t.columns[n].unit
        assert back.level(n) == t.level(n)
    assert fileio.write_table(back) == path.read_text()


def test_table_errors():
    with pytest.raises(ValidationError) as e:
        fileio.read_table(text="# symbol,level,parent,unit\n# a,Bogus,,\na\n1\n")
    assert e.value.line == 2
    with pytest.raises(ValidationError) as e:
        fileio.read_table(text="# symbol,level,parent,unit\n# a,Action,,\na\n1\nx\n")
    assert e.value.line == 5


def test_json_round_trip_preserves_floats(tmp_path):
    x = {"a": np.array([0.1, 1 / 3, np.inf]), "b": np.float64(2.5e-300)}
    p = tmp_path / "x.json"
    fileio.dump_json(x, p)
    back = fileio.load_json(p)
    assert back["a"][:2] == [0.1, 1 / 3] and back["b"] == 2.5e-300
    assert back["a"][2] == "inf"
