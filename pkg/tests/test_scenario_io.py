import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from isocloth.dynamics import Trajectory, simulate
from isocloth.generators import GENERATORS, generate, grid, nearest_node
from isocloth.io import TrajectoryFormatError, read_trajectory, write_json, write_reports, write_table, write_trajectory
from isocloth.mesh import save_mesh
from isocloth.scenario import (
    Oscillation,
    ScenarioError,
    Scripted,
    apply_overrides,
    dump_resolved,
    from_dict,
    load_scenario,
    parse_override,
)

BASE = {
    "name": "t",
    "mesh": {"generator": {"kind": "grid", "nx": 3, "ny": 3}},
    "handles": [{"nearest": [0, 0, 0]}],
    "integrator": {"dt": 0.01, "duration": 0.05},
}


def test_defaults_and_echo():
    sc = from_dict(BASE)
    assert sc.params.rho == 1.0 and sc.tol == 1e-3 and sc.max_iter == 50 and sc.dt == 0.01
    echo = yaml.safe_load(dump_resolved(sc))
    assert echo["params"]["delta"] == 1.0 and echo["integrator"]["duration"] == 0.05


@pytest.mark.parametrize("bad", [
    {"meshh": {}},
    {"params": {"gamma": 1}},
    {"integrator": {"step": 0.1}},
    {"outputs": {"format": "x"}},
    {"mesh": {"generator": {"kind": "grid", "nx": 3, "ny": 3, "colour": 1}}},
    {"handles": [{"nearest": [0, 0, 0], "speed": 1}]},
    {"handles": [{"nearest": [0, 0, 0], "motion": {"type": "oscillation", "amplitude": 1, "frequency": 1, "phase": 0}}]},
    {"mesh": {"generator": {"kind": "grid", "nx": 3, "ny": 3}, "noise": {"sigma": 1e-3, "mean": 0}}},
])
def test_unknown_keys_rejected(bad):
    doc = {**BASE, **bad}
    with pytest.raises(ScenarioError):
        from_dict(doc)


@pytest.mark.parametrize("change", [
    {"integrator": {"dt": 0}},
    {"integrator": {"duration": -1}},
    {"handles": [{"node": 99}]},
    {"handles": [{"node": 0}, {"node": 0}]},
    {"params": {"alpha": -1}},
    {"mesh": {"path": "missing.mesh", "generator": {"kind": "grid"}}},
    {"obstacles": [{"type": "torus"}]},
    {"integrator": {"regularization": -1e-6}},
    {"integrator": {"polish": -1}},
])
def test_invalid_values(change):
    with pytest.raises(ScenarioError):
        from_dict({**BASE, **change})


def test_overrides():
    assert parse_override("params.delta=0.37") == (["params", "delta"], 0.37)
    assert parse_override("name=abc") == (["name"], "abc")
    doc = apply_overrides(BASE, ["params.delta=0.37", "params.alpha=2.50", "integrator.dt=0.005"])
    sc = from_dict(doc)
    assert sc.params.delta == 0.37 and sc.params.alpha == 2.5 and sc.dt == 0.005
    assert yaml.safe_load(dump_resolved(sc))["params"]["alpha"] == 2.5
    with pytest.raises(ScenarioError):
        parse_override("novalue")
    with pytest.raises(ScenarioError):
        apply_overrides(BASE, ["name.x=1"])


def test_mesh_file_and_within(tmp_path):
    save_mesh(grid(5, 5), tmp_path / "g.mesh")
    (tmp_path / "s.yaml").write_text(yaml.safe_dump({
        "mesh": {"path": "g.mesh"},
        "handles": [{"within": {"center": [0, 0, 0], "radius": 0.3}}],
    }))
    sc = load_scenario(tmp_path / "s.yaml")
    assert sorted(sc.handle_nodes().tolist()) == [0, 1, 5]
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "s.yaml", ["handles=[{within: {center: [5, 5, 5], radius: 0.1}}]"])


def test_motions():
    osc = Oscillation([1.0, 2.0, 3.0], 0.15, 0.3, axis=0, start=1.0, stop=11.0)
    np.testing.assert_allclose(osc(0.0), [1, 2, 3])
    np.testing.assert_allclose(osc(1.0), [1, 2, 3])
    np.testing.assert_allclose(osc(1.0 + 1 / 0.6), [1 - 0.3, 2, 3])
    np.testing.assert_allclose(osc(11.0), osc(20.0))
    s = Scripted([0, 1], [[0, 0, 0], [1, 2, 3]])
    np.testing.assert_allclose(s(0.5), [0.5, 1, 1.5])
    np.testing.assert_allclose(s(5), [1, 2, 3])
    with pytest.raises(ScenarioError):
        Scripted([1, 0], [[0, 0, 0], [1, 1, 1]])


def test_generators():
    for kind in GENERATORS:
        spec = {"grid": {"nx": 3, "ny": 4}, "triangles": {"nx": 5, "ny": 5}, "annulus": {"inner": 0.09, "outer": 0.15, "rings": 3, "sectors": 12},
                "annulus_nodes": {"target": 768}, "annulus_triangles": {"target": 300},
                "tube": {"sectors": 12, "rings": 4}}[kind]
        mesh = generate({"kind": kind, **spec})
        assert mesh.n > 0
    assert abs(generate({"kind": "annulus_nodes", "target": 768}).n - 768) <= 0.05 * 768


def test_annulus_triangles():
    from isocloth.analysis import element_areas
    from isocloth.assembly import interior_hinges
    from isocloth.mesh import stack

    m = generate({"kind": "annulus_triangles", "target": 704, "seed": 3})
    assert m.n == 704 and {len(e) for e in m.elements} == {3}
    r = np.hypot(m.nodes[:, 0], m.nodes[:, 1])
    assert np.all((r >= 0.09 - 1e-12) & (r <= 0.15 + 1e-12))
    assert np.sum(np.isclose(r, 0.09)) == np.sum(np.isclose(r, 0.15)) == 88
    areas = element_areas(m, stack(m.rest_positions))
    assert areas.min() > 0 and abs(areas.sum() - np.pi * (0.15**2 - 0.09**2)) < 1e-3
    # consistent orientation: every interior edge pairs up as a hinge
    T = m.triangles()
    assert len(interior_hinges(T)) == (3 * len(T) - 2 * 88) // 2
    other = generate({"kind": "annulus_triangles", "target": 704, "seed": 4})
    assert not np.array_equal(m.nodes, other.nodes)
    noisy = generate({"kind": "grid", "nx": 4, "ny": 4, "noise": 0.003, "noise_seed": 5})
    again = generate({"kind": "grid", "nx": 4, "ny": 4, "noise": 0.003, "noise_seed": 5})
    np.testing.assert_array_equal(noisy.nodes, again.nodes)
    assert 0 < np.std(noisy.nodes[:, 2]) < 0.01
    assert nearest_node(grid(3, 3), (1.1, 0.9, 0)) == 8
    with pytest.raises(ValueError):
        generate({"kind": "blob"})


def sample_traj(rng, n=4, frames=3):
    return Trajectory(0.01, np.arange(frames) * 0.01, rng.normal(size=(frames, 3 * n)) * 1e3, [])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 5))
def test_trajectory_roundtrip_bit_exact(tmp_path_factory, seed, n, frames):
    traj = sample_traj(np.random.default_rng(seed), n, frames)
    path = tmp_path_factory.mktemp("t") / "x.traj"
    write_trajectory(path, traj, comments=["hello", "params delta=0.37"])
    back = read_trajectory(path)
    np.testing.assert_array_equal(back.frames, traj.frames)
    np.testing.assert_array_equal(back.times, traj.times)
    assert back.dt == traj.dt and back.header["comments"] == ["hello", "params delta=0.37"]


def test_trajectory_layout(tmp_path):
    X = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    traj = Trajectory(0.5, np.array([0.0]), X.ravel(order="F")[None, :], [])
    write_trajectory(tmp_path / "a.traj", traj)
    lines = (tmp_path / "a.traj").read_text().splitlines()
    assert lines == ["n 2 dt 0.5", "0.0 1.0 2.0 3.0 4.0 5.0 6.0"]


@pytest.mark.parametrize("text", ["", "n 2\n", "n 2 dt 0.1\n0 1 2 3\n", "n x dt 1\n", "n 1 dt 0.1\n0 a b c\n"])
def test_trajectory_parse_errors(tmp_path, text):
    (tmp_path / "b.traj").write_text(text)
    with pytest.raises(TrajectoryFormatError):
        read_trajectory(tmp_path / "b.traj")


def test_reports_and_tables(tmp_path):
    sc = from_dict(BASE)
    traj = simulate(sc)
    write_reports(tmp_path / "r.json", traj, {"scenario": "t"})
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["steps"] == 5 and doc["flagged_steps"] == [] and len(doc["reports"]) == 5
    assert {"iterations", "residual", "converged", "active_contacts"} <= set(doc["reports"][0])
    write_table(tmp_path / "t.txt", {"t": [0, 1], "e": [0.5, 0.25]})
    assert (tmp_path / "t.txt").read_text().splitlines() == ["# t e", "0.0 0.5", "1.0 0.25"]
    write_json(tmp_path / "j.json", {"a": np.float64(1.5), "b": np.arange(2)})
    assert json.loads((tmp_path / "j.json").read_text()) == {"a": 1.5, "b": [0, 1]}
