import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pleass.datamodel import (
    DataError,
    EvalGrid,
    GridFunction1D,
    GridFunction2D,
    LabeledSubject,
    SparseDataset,
    SparseTrajectory,
    grid_function_from_dict,
    grid_function_to_dict,
    interpolate1,
    interpolate2,
    load_dataset,
    load_trajectories,
    save_dataset,
)


def write(path, text):
    path.write_text(text)
    return path


def test_csv_single_subject(tmp_path):
    obs = write(tmp_path / "o.csv", "subject_id,time,value\ns1,0.2,1.5\ns1,0.8,2.0\n")
    resp = write(tmp_path / "y.csv", "subject_id,y\ns1,3.0\n")
    d = load_dataset(obs, responses=resp)
    assert d.n == 1
    assert d.subjects[0].trajectory.size == 2
    assert list(d.subjects[0].trajectory.times) == [0.2, 0.8]
    assert d.subjects[0].response == 3.0


def test_empty_observations(tmp_path):
    obs = write(tmp_path / "o.csv", "subject_id,time,value\n")
    resp = write(tmp_path / "y.csv", "subject_id,y\n")
    with pytest.raises(DataError, match="no subjects"):
        load_dataset(obs, responses=resp)


def test_time_out_of_range_names_row(tmp_path):
    obs = write(tmp_path / "o.csv", "subject_id,time,value\ns1,0.2,1\ns1,1.3,2\n")
    resp = write(tmp_path / "y.csv", "subject_id,y\ns1,3.0\n")
    with pytest.raises(DataError, match="row 3"):
        load_dataset(obs, responses=resp)


def test_missing_and_duplicate_responses(tmp_path):
    obs = write(tmp_path / "o.csv", "subject_id,time,value\ns1,0.2,1\ns2,0.5,2\n")
    with pytest.raises(DataError, match="no response"):
        load_dataset(obs, responses=write(tmp_path / "y.csv", "subject_id,y\ns1,1\n"))
    with pytest.raises(DataError, match="duplicate"):
        load_dataset(obs, responses=write(tmp_path / "y2.csv", "subject_id,y\ns1,1\ns2,2\ns1,4\n"))


def test_parse_error_row(tmp_path):
    obs = write(tmp_path / "o.csv", "subject_id,time,value\ns1,0.2,abc\n")
    resp = write(tmp_path / "y.csv", "subject_id,y\ns1,1\n")
    with pytest.raises(DataError, match="row 2"):
        load_dataset(obs, responses=resp)


def test_row_order_preserved(tmp_path):
    obs = write(tmp_path / "o.csv", "subject_id,time,value\na,0.9,1\nb,0.1,5\na,0.3,2\n")
    resp = write(tmp_path / "y.csv", "subject_id,y\na,1\nb,2\n")
    d = load_dataset(obs, responses=resp)
    assert list(d.subjects[0].trajectory.times) == [0.9, 0.3]


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        SparseTrajectory("a", [0.1, 0.2], [1.0])
    with pytest.raises(ValueError):
        SparseTrajectory("a", [], [])
    with pytest.raises(ValueError):
        SparseTrajectory("a", [1.2], [1.0])
    with pytest.raises(ValueError):
        SparseTrajectory("a", [0.5], [np.nan])
    with pytest.raises(ValueError):
        LabeledSubject(SparseTrajectory("a", [0.5], [1.0]), np.inf)


def test_duplicate_ids_rejected():
    tr = SparseTrajectory("a", [0.5], [1.0])
    with pytest.raises(ValueError):
        SparseDataset((LabeledSubject(tr, 1.0), LabeledSubject(tr, 2.0)))


def test_trajectory_immutable():
    tr = SparseTrajectory("a", [0.1, 0.2], [1.0, 2.0])
    with pytest.raises(ValueError):
        tr.times[0] = 0.5


@pytest.mark.parametrize("fmt", ["json", "csv"])
def test_round_trip(tmp_path, rng, fmt):
    subs = []
    for i in range(5):
        L = int(rng.integers(1, 6))
        subs.append(LabeledSubject(SparseTrajectory(f"id{i}", rng.uniform(size=L),
                                                    rng.standard_normal(L)), float(rng.standard_normal())))
    d = SparseDataset(tuple(subs))
    if fmt == "json":
        save_dataset(d, tmp_path / "d.json")
        back = load_dataset(tmp_path / "d.json")
    else:
        save_dataset(d, tmp_path / "o.csv", responses=tmp_path / "y.csv")
        back = load_dataset(tmp_path / "o.csv", responses=tmp_path / "y.csv")
    assert back == d


def test_load_trajectories(tmp_path):
    obs = write(tmp_path / "o.csv", "subject_id,time,value\nx,0.2,1\nx,0.4,2\n")
    (tr,) = load_trajectories(obs)
    assert tr.subject_id == "x" and tr.size == 2


def test_grid():
    g = EvalGrid(51)
    assert g.points[0] == 0.0 and g.points[-1] == 1.0
    assert np.allclose(np.diff(g.points), g.spacing, rtol=0, atol=1e-15)
    assert g.weights.sum() == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        EvalGrid(1)


def test_interpolate1_examples():
    g = EvalGrid(51)
    assert interpolate1(GridFunction1D(g, np.full(51, 5.0)), 0.41) == 5.0
    assert interpolate1(GridFunction1D(g, g.points), 0.337) == pytest.approx(0.337, abs=1e-15)
    g2 = EvalGrid(101)
    assert interpolate1(GridFunction1D(g2, g2.points**2), 0.5) == pytest.approx(0.25, abs=1e-4)
    with pytest.raises(ValueError):
        interpolate1(GridFunction1D(g, g.points), 1.01)


def test_interpolate2_examples():
    g = EvalGrid(51)
    s, t = np.meshgrid(g.points, g.points, indexing="ij")
    assert interpolate2(GridFunction2D(g, np.full((51, 51), 2.0)), 0.3, 0.9) == 2.0
    assert interpolate2(GridFunction2D(g, s + t), 0.3, 0.4) == pytest.approx(0.7, abs=1e-14)
    g2 = EvalGrid(101)
    s2, t2 = np.meshgrid(g2.points, g2.points, indexing="ij")
    assert interpolate2(GridFunction2D(g2, s2 * t2), 0.25, 0.75) == pytest.approx(0.1875, abs=1e-4)
    with pytest.raises(ValueError):
        interpolate2(GridFunction2D(g, s + t), -0.1, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_interpolation_exact_at_nodes(G, seed):
    r = np.random.default_rng(seed)
    g = EvalGrid(G)
    f = GridFunction1D(g, r.standard_normal(G))
    K = GridFunction2D(g, r.standard_normal((G, G)))
    assert np.array_equal(interpolate1(f, g.points), f.values)
    i, j = r.integers(0, G, 2)
    assert interpolate2(K, g.points[i], g.points[j]) == K.values[i, j]


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_symmetric_interpolation(s, t, seed):
    r = np.random.default_rng(seed)
    g = EvalGrid(17)
    K = GridFunction2D(g, r.standard_normal((17, 17)), symmetric=True)
    assert np.array_equal(K.values, K.values.T)
    assert interpolate2(K, s, t) == interpolate2(K, t, s)


def test_grid_function_serialization():
    g = EvalGrid(5)
    f = GridFunction1D(g, [1, 2, 3, 4, 5])
    K = GridFunction2D(g, np.arange(25.0).reshape(5, 5), symmetric=True)
    d = json.loads(json.dumps(grid_function_to_dict(f)))
    assert d == {"grid_size": 5, "values": [1.0, 2.0, 3.0, 4.0, 5.0]}
    assert np.array_equal(grid_function_from_dict(d).values, f.values)
    back = grid_function_from_dict(json.loads(json.dumps(grid_function_to_dict(K))))
    assert np.array_equal(back.values, K.values) and back.symmetric
