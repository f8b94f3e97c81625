import numpy as np
import pytest

from spinereg import io
from spinereg.exceptions import MetaImageError
from spinereg.field import DisplacementField
from spinereg.volume import LabelVolume, Volume


def test_volume_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    vol = Volume(rng.random((5, 6, 7)).astype(np.float32), (0.5, 1.0, 2.0), (1.0, -2.0, 3.5))
    io.write_volume(tmp_path / "v.mhd", vol)
    back = io.read_volume(tmp_path / "v.mhd")
    np.testing.assert_array_equal(back.data, vol.data)
    assert back.spacing == vol.spacing and back.origin == vol.origin


def test_x_varies_fastest(tmp_path):
    data = np.zeros((3, 2, 2), dtype=np.float32)
    data[1, 0, 0] = 1.0
    io.write_volume(tmp_path / "v.mhd", Volume(data))
    raw = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<f4")
    assert raw[1] == 1.0 and raw.sum() == 1.0
    header = (tmp_path / "v.mhd").read_text()
    assert "DimSize = 3 2 2" in header and "ElementDataFile = v.raw" in header


def test_labels_and_field_roundtrip(tmp_path):
    labels = LabelVolume(np.arange(24).reshape(2, 3, 4) % 5)
    io.write_labels(tmp_path / "l.mhd", labels)
    np.testing.assert_array_equal(io.read_labels(tmp_path / "l.mhd").data, labels.data)
    assert "UINT16" in (tmp_path / "l.mhd").read_text()
    u = np.random.default_rng(1).normal(size=(3, 4, 5, 3)).astype(np.float32)
    io.write_field(tmp_path / "f.mhd", DisplacementField(u))
    assert "Channels = 3" in (tmp_path / "f.mhd").read_text()
    np.testing.assert_array_equal(io.read_field(tmp_path / "f.mhd").data, u)


def test_rejects_bad_files(tmp_path):
    io.write_volume(tmp_path / "v.mhd", Volume(np.zeros((2, 2, 2))))
    text = (tmp_path / "v.mhd").read_text()
    (tmp_path / "extra.mhd").write_text(text + "Comment = hi\n")
    with pytest.raises(MetaImageError):
        io.read_volume(tmp_path / "extra.mhd")
    (tmp_path / "short.raw").write_bytes(b"\0" * 12)
    (tmp_path / "short.mhd").write_text(text.replace("v.raw", "short.raw"))
    with pytest.raises(MetaImageError):
        io.read_volume(tmp_path / "short.mhd")
    (tmp_path / "d.mhd").write_text(text.replace("FLOAT32", "FLOAT64"))
    with pytest.raises(MetaImageError):
        io.read_volume(tmp_path / "d.mhd")
    with pytest.raises(MetaImageError):
        io.read_field(tmp_path / "v.mhd")
    with pytest.raises(MetaImageError):
        io.write_labels(tmp_path / "big.mhd", LabelVolume(np.full((2, 2, 2), 70000)))
