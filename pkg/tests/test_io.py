import numpy as np
import pytest

from qtensor_fd.fields import GridSpec
from qtensor_fd.io import ensure_writable, read_csv_rows, read_field, write_energy_csv, write_field
from qtensor_fd.scheme import REPORT_COLUMNS, StepReport


def test_tensor_dump_roundtrip(tmp_path, rng):
    g = GridSpec(dim=2, n_interior=4, side=2.0)
    Q = rng.standard_normal(g.padded_shape + (2, 2))
    path = write_field(tmp_path / "Q.dat", "Q", Q, g, 0.25, ["grid.n = 5", "time.dt = 0.01"])
    dump = read_field(path)
    assert (dump.name, dump.dim, dump.n_interior, dump.components) == ("Q", 2, 4, 4)
    assert dump.h == g.h and dump.time == 0.25
    assert dump.config == ["grid.n = 5", "time.dt = 0.01"]
    np.testing.assert_array_equal(dump.values, Q[g.nodes])


def test_payload_layout(tmp_path):
    g = GridSpec(dim=2, n_interior=1)
    f = np.zeros(g.padded_shape + (2,))
    f[g.nodes] = np.arange(18.0).reshape(3, 3, 2)
    path = write_field(tmp_path / "d.dat", "director", f, g, 0.0)
    raw = path.read_bytes()
    header, payload = raw.split(b"end_header\n")
    assert header.decode().splitlines() == ["name director", "dim 2", "N 1", "h 0.5", "components 2", "time 0.0"]
    # little-endian float64, row-major nodes, components fastest
    np.testing.assert_array_equal(np.frombuffer(payload, dtype="<f8"), np.arange(18.0))
    assert read_field(path).values.shape == (3, 3, 2)


def test_scalar_dump_and_truncation(tmp_path, rng):
    g = GridSpec(dim=3, n_interior=2)
    r = rng.standard_normal(g.padded_shape)
    path = write_field(tmp_path / "r.dat", "r", r, g, 1.5)
    np.testing.assert_array_equal(read_field(path).values, r[g.nodes])
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_field(path)
    (tmp_path / "junk.dat").write_bytes(b"name r\n")
    with pytest.raises(ValueError):
        read_field(tmp_path / "junk.dat")


def test_energy_csv(tmp_path):
    reports = [StepReport(k, 0.1 * k, 2.0 / k, 1.0 / k, 0.1, 1e-17, 1e-15, 0.0, 0.0, k, 1e-11) for k in (1, 2)]
    initial = StepReport(0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0.0)
    path = write_energy_csv(tmp_path / "energy.csv", initial, reports, ["experiment = example1"])
    text = path.read_bytes().decode()
    assert "\r" not in text and text.startswith("# experiment = example1\n")
    rows = read_csv_rows(path)
    assert list(rows[0]) == list(REPORT_COLUMNS)
    assert [int(r["step"]) for r in rows] == [0, 1, 2]
    assert float(rows[2]["energy"]) == 0.5 and float(rows[1]["time"]) == 0.1


def test_ensure_writable(tmp_path):
    out = ensure_writable(tmp_path / "a" / "b")
    assert out.is_dir() and not any(out.iterdir())
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        ensure_writable(blocker / "sub")
