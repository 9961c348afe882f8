import json

import numpy as np
import pytest

from diractree import io
from diractree.forward_time import TimeGrid, extract_response
from diractree.halfline import ResponseFunction, recover_potential
from diractree.spectral import SpectralGrid, tw_samples
from diractree.tree import generate_instance


@pytest.fixture(scope="module")
def instance():
    return generate_instance(3, 5)


def test_instance_round_trip_bit_exact(tmp_path, instance):
    tree, pots = instance
    path = tmp_path / "inst.json"
    io.write_instance(path, tree, pots)
    t2, p2 = io.read_instance(path)
    assert t2 == tree
    for eid in pots:
        assert np.array_equal(pots[eid].p, p2[eid].p) and np.array_equal(pots[eid].q, p2[eid].q)
    io.write_instance(tmp_path / "again.json", t2, p2)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_unknown_field_names_the_field(tmp_path, instance):
    tree, pots = instance
    d = io.instance_to_dict(tree, pots)
    d["edges"][0]["colour"] = "red"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(io.ParseError, match="colour"):
        io.read_instance(path)


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n "vertices": [\n')
    with pytest.raises(io.ParseError, match="line"):
        io.read_instance(path)


def test_response_round_trip(tmp_path, instance):
    tree, pots = instance
    R = extract_response(tree, pots, TimeGrid(0.01, 1.0))
    path = tmp_path / "resp.json"
    io.write_response(path, R)
    R2 = io.read_response(path)
    assert R2.labels == R.labels and R2.tau == R.tau
    assert np.array_equal(R2.regular, R.regular)
    assert R2.spikes == R.spikes
    io.write_response(tmp_path / "r2.json", R2)
    assert (tmp_path / "r2.json").read_bytes() == path.read_bytes()


def test_tw_round_trip(tmp_path, instance):
    tree, pots = instance
    tw = tw_samples(tree, pots, SpectralGrid.line(16, (-5, 5), 1.0))
    tw.meta["horizon"] = 2.0
    path = tmp_path / "tw.csv"
    io.write_tw(path, tw)
    tw2 = io.read_tw(path)
    assert np.array_equal(tw2.M, tw.M)
    assert np.array_equal(tw2.grid.points, tw.grid.points)
    assert tw2.labels == tw.labels and tw2.meta["horizon"] == 2.0


def test_potential_and_response_function_round_trip(tmp_path):
    r = ResponseFunction(0.05, 0.1 * np.exp(1j * np.arange(21) * 0.3))
    io.write_response_function(tmp_path / "r.csv", r)
    r2 = io.read_response_function(tmp_path / "r.csv")
    assert r2.tau == r.tau and np.array_equal(r2.r, r.r)
    rec = recover_potential(r)
    io.write_potential(tmp_path / "pq.csv", rec)
    _, x, p, q = io.read_potential(tmp_path / "pq.csv")
    assert np.array_equal(p, rec.p) and np.array_equal(q, rec.q) and np.array_equal(x, rec.x)


def test_csv_column_mismatch(tmp_path):
    path = tmp_path / "pq.csv"
    path.write_text('# {"format": "diractree-potential"}\nx,p\n0.0,1.0\n')
    with pytest.raises(io.ParseError):
        io.read_potential(path)
