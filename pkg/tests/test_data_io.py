import io
import json
import math

import numpy as np
import pytest

from drport.data_io import (
    CorrelationOutOfRange,
    DataError,
    EmptyFile,
    MalformedHeader,
    MissingCorrelation,
    NoUsableColumns,
    ReturnMatrix,
    gap_percent,
    parse_orlibrary,
    parse_returns_csv,
    write_result_json,
    write_returns_csv,
)
from drport.model import AssumptionViolation, Selection, estimate_moments, validate_instance
from drport.synthetic import random_instance
from drport.upper_level import cutting_plane_solve


def test_complete_csv():
    rm = parse_returns_csv(io.StringIO("d,A,B\n1,0.1,0.2\n2,0.3,-0.1\n3,0.0,0.5\n"))
    assert rm.values.shape == (3, 2)
    assert rm.labels == ("A", "B")
    assert rm.periods == ("1", "2", "3")
    assert rm.dropped == 0


def test_blank_cell_drops_column():
    rm = parse_returns_csv(io.StringIO("d,A,B,C\n1,0.1,,0.2\n2,0.3,0.1,0.4\n3,0.0,0.2,0.5\n"))
    assert rm.labels == ("A", "C")
    assert rm.dropped == 1


def test_non_numeric_cell_drops_column():
    rm = parse_returns_csv(io.StringIO("d,A,B\n1,x,0.2\n2,0.3,0.1\n"))
    assert rm.labels == ("B",) and rm.dropped == 1


def test_header_only():
    with pytest.raises(EmptyFile):
        parse_returns_csv(io.StringIO("d,A,B\n"))


def test_no_usable_columns():
    with pytest.raises(NoUsableColumns):
        parse_returns_csv(io.StringIO("d,A\n1,\n2,0.1\n"))


def test_csv_round_trip(tmp_path):
    rm = ReturnMatrix(np.array([[0.1, 1 / 3], [-2.5e-7, 0.0]]), ["a", "b"], ["w1", "w2"])
    path = tmp_path / "r.csv"
    with open(path, "w", newline="") as fh:
        write_returns_csv(rm, fh)
    back = parse_returns_csv(path)
    assert np.array_equal(back.values, rm.values)
    assert back.labels == rm.labels and back.periods == rm.periods


def test_constant_column_is_rejected_downstream():
    rm = parse_returns_csv(io.StringIO("d,A,B\n1,0.1,0.2\n2,0.1,0.4\n3,0.1,0.1\n"))
    inst = random_instance(2, 1, 0)
    singular = type(inst)(estimate_moments(rm.values), inst.ambiguity, inst.utility, inst.gamma, 1)
    with pytest.raises(AssumptionViolation):
        validate_instance(singular)


ORLIB = "2\n0.01 0.1\n0.02 0.2\n1 1 1.0\n1 2 0.5\n2 2 1.0\n"


def test_orlibrary_scaled():
    m = parse_orlibrary(io.StringIO(ORLIB), 100, 10000)
    assert np.allclose(m.mean, [1, 2])
    assert np.allclose(m.covariance, [[100, 100], [100, 400]])


def test_orlibrary_identity_correlation():
    m = parse_orlibrary(io.StringIO("2\n0.01 0.1\n0.02 0.2\n1 1 1\n2 2 1\n1 2 0\n"))
    assert np.allclose(m.covariance, np.diag([0.01, 0.04]))


def test_orlibrary_missing_pair():
    with pytest.raises(MissingCorrelation):
        parse_orlibrary(io.StringIO("2\n0.01 0.1\n0.02 0.2\n1 1 1.0\n2 2 1.0\n"))


def test_orlibrary_out_of_range():
    with pytest.raises(CorrelationOutOfRange):
        parse_orlibrary(io.StringIO("2\n0 1\n0 1\n1 2 1.5\n"))


def test_orlibrary_lower_listing_and_conflict():
    m = parse_orlibrary(io.StringIO("2\n0 1\n0 1\n2 1 0.25\n"))
    assert m.covariance[0, 1] == m.covariance[1, 0] == 0.25
    agree = parse_orlibrary(io.StringIO("2\n0 1\n0 1\n1 2 0.25\n2 1 0.25\n"))
    assert agree.covariance[0, 1] == 0.25
    with pytest.raises(DataError):
        parse_orlibrary(io.StringIO("2\n0 1\n0 1\n1 2 0.25\n2 1 0.3\n"))


@pytest.mark.parametrize("text", ["", "two\n", "3\n0 1\n", "2\n0 1\n0 1\n1 2\n"])
def test_orlibrary_malformed(text):
    with pytest.raises(MalformedHeader):
        parse_orlibrary(io.StringIO(text))


def test_orlibrary_symmetric(tmp_path):
    rng = np.random.default_rng(0)
    n = 5
    lines = [str(n)] + [f"{rng.normal()} {rng.uniform(0.1, 1)}" for _ in range(n)]
    lines += [f"{i + 1} {j + 1} {rng.uniform(-0.3, 0.3)}" for i in range(n) for j in range(i + 1, n)]
    m = parse_orlibrary(io.StringIO("\n".join(lines)))
    assert np.array_equal(m.covariance, m.covariance.T)


def test_gap_percent():
    assert gap_percent(3.034, 3.034) == 0.0
    assert gap_percent(2.0, 1.0) == 50.0


def test_result_json_round_trip():
    res = cutting_plane_solve(random_instance(5, 2, 1))
    sink = io.StringIO()
    write_result_json(res, sink)
    data = json.loads(sink.getvalue())
    for key in ("obj", "gap_pct", "time_s", "cuts", "nodes", "mode", "selection", "weights"):
        assert key in data
    assert data["obj"] == res.objective
    assert data["time_s"] == res.wall_time
    assert data["weights"] == [float(w) for w in res.portfolio.weights]
    assert data["selection"] == [int(i) for i in res.selection.support]
    assert data["lower_bound"] == res.lower_bound
