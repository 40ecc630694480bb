import json

import numpy as np
import pytest

from rvkit import formats
from rvkit.errors import FormatError
from rvkit.geom import Box3D
from rvkit.postprocess import Detection


class TestAtomicWrite:
    def test_writes_file(self, tmp_path):
        path = tmp_path / "out.bin"
        with formats.atomic_write(path) as f:
            f.write(b"hello")
        assert path.read_bytes() == b"hello"

    def test_no_temp_left_on_failure(self, tmp_path):
        path = tmp_path / "out.bin"
        with pytest.raises(RuntimeError):
            with formats.atomic_write(path) as f:
                f.write(b"partial")
                raise RuntimeError("boom")
        assert not path.exists()
        assert list(tmp_path.iterdir()) == []


class TestLpc1:
    def test_round_trip(self, tmp_path, rng):
        path = tmp_path / "cloud.lpc"
        pos = rng.uniform(-50, 50, size=(100, 3))
        inten = rng.uniform(0, 1, size=100)
        elong = rng.uniform(0, 1, size=100)
        formats.write_lpc1(path, pos, inten, elong)
        pos2, inten2, elong2 = formats.read_lpc1(path)
        # Storage is float32; values survive to that precision.
        assert np.allclose(pos2, pos, atol=1e-4)
        assert np.allclose(inten2, inten, atol=1e-6)
        assert np.allclose(elong2, elong, atol=1e-6)

    def test_layout(self, tmp_path):
        path = tmp_path / "cloud.lpc"
        formats.write_lpc1(path, [[1.0, 2.0, 3.0]], [0.5], [0.25])
        data = path.read_bytes()
        assert data[:4] == b"LPC1"
        assert len(data) == 4 + 4 + 20  # magic, u32 count, one 5 x f32 record
        rec = np.frombuffer(data, dtype="<f4", offset=8)
        assert rec.tolist() == [1.0, 2.0, 3.0, 0.5, 0.25]

    def test_empty(self, tmp_path):
        path = tmp_path / "cloud.lpc"
        formats.write_lpc1(path, np.zeros((0, 3)), np.zeros(0), np.zeros(0))
        pos, inten, elong = formats.read_lpc1(path)
        assert len(pos) == 0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "cloud.lpc"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError, match="offset 0"):
            formats.read_lpc1(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "cloud.lpc"
        formats.write_lpc1(path, [[1.0, 2.0, 3.0]], [0.5], [0.25])
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="truncated"):
            formats.read_lpc1(path)


class TestRimg:
    def test_round_trip_mixed_dtypes(self, tmp_path, rng):
        path = tmp_path / "img.rimg"
        shape = (4, 6)
        chans = [
            ("range", rng.uniform(0, 60, size=shape).astype(np.float32)),
            ("box_id", rng.integers(-1, 5, size=shape).astype(np.int32)),
            ("valid", rng.integers(0, 2, size=shape).astype(bool)),
        ]
        formats.write_rimg(path, shape, chans)
        (m, n), back = formats.read_rimg(path)
        assert (m, n) == shape
        assert set(back) == {"range", "box_id", "valid"}
        assert np.allclose(back["range"], chans[0][1])
        assert np.array_equal(back["box_id"], chans[1][1])
        assert back["valid"].dtype == bool
        assert np.array_equal(back["valid"], chans[2][1])

    def test_header_layout(self, tmp_path):
        path = tmp_path / "img.rimg"
        formats.write_rimg(path, (2, 3), [("r", np.zeros((2, 3)))])
        data = path.read_bytes()
        assert data[:4] == b"RIMG"
        import struct

        version, m, n, nch = struct.unpack_from("<HIII", data, 4)
        assert (version, m, n, nch) == (1, 2, 3, 1)

    def test_shape_mismatch_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            formats.write_rimg(tmp_path / "x.rimg", (2, 3), [("r", np.zeros((3, 2)))])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "img.rimg"
        path.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FormatError, match="offset 0"):
            formats.read_rimg(path)

    def test_truncated_channel(self, tmp_path):
        path = tmp_path / "img.rimg"
        formats.write_rimg(path, (4, 4), [("r", np.ones((4, 4)))])
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="truncated"):
            formats.read_rimg(path)

    def test_byte_identical_rewrite(self, tmp_path, rng):
        a, b = tmp_path / "a.rimg", tmp_path / "b.rimg"
        chans = [("range", rng.uniform(0, 60, size=(8, 8)))]
        formats.write_rimg(a, (8, 8), chans)
        formats.write_rimg(b, (8, 8), chans)
        assert a.read_bytes() == b.read_bytes()


class TestJsonl:
    def test_boxes_round_trip(self, tmp_path):
        path = tmp_path / "boxes.jsonl"
        boxes = [
            Box3D(1.234567891, -2.0, 0.5, 4.0, 2.0, 1.5, 0.25, class_id=1, instance_id=0),
            Box3D(-8.0, 12.0, 0.1, 0.8, 0.7, 1.7, -1.0, class_id=2, instance_id=1),
        ]
        formats.write_boxes_jsonl(path, boxes)
        back = formats.read_boxes_jsonl(path)
        assert len(back) == 2
        for orig, b in zip(boxes, back):
            assert b.class_id == orig.class_id and b.instance_id == orig.instance_id
            # Values are quantized to 6 decimals on disk.
            assert b.cx == pytest.approx(orig.cx, abs=1e-6)
            assert b.yaw == pytest.approx(orig.yaw, abs=1e-6)

    def test_six_decimal_formatting(self, tmp_path):
        path = tmp_path / "boxes.jsonl"
        formats.write_boxes_jsonl(path, [Box3D(1.23456789, 0, 0, 1, 1, 1, 0)])
        rec = json.loads(path.read_text().splitlines()[0])
        assert rec["cx"] == 1.234568

    def test_detections(self, tmp_path):
        path = tmp_path / "dets.jsonl"
        det = Detection(
            box=Box3D(5, 0, 0, 4, 2, 1.5, 0.3, class_id=1),
            class_id=1,
            score=0.857,
            source_pixel=(2, 3),
        )
        formats.write_detections_jsonl(path, [det])
        rec = json.loads(path.read_text().splitlines()[0])
        assert rec["class"] == 1
        assert rec["score"] == 0.857
        assert set(rec) == {"cx", "cy", "cz", "l", "w", "h", "yaw", "class", "score"}

    def test_instances_round_trip(self, tmp_path):
        path = tmp_path / "inst.json"
        ids = np.array([-1, 0, 0, 2, 1])
        formats.write_instances_json(path, ids)
        assert np.array_equal(formats.read_instances_json(path), ids)

    def test_panoptic_records(self, tmp_path):
        path = tmp_path / "pan.jsonl"
        semantic = np.array([[1, 0], [2, 1]])
        instance = np.array([[0, -1], [1, 0]])
        valid = np.array([[True, False], [True, True]])
        formats.write_panoptic_jsonl(path, semantic, instance, valid)
        recs = [json.loads(line) for line in path.read_text().splitlines()]
        assert len(recs) == 3  # one per valid pixel
        assert recs[0] == {"class": 1, "col": 0, "instance": 0, "row": 0}
