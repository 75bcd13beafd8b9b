import struct

import numpy as np
import pytest

from strandkit import StrandSet
from strandkit.core import sigmoid
from strandkit.errors import (BadMagic, FlagMismatch, ParseError,
                              TruncatedFile)
from strandkit.io import (read_hair, read_native, read_oriented_cloud,
                          read_usc, write_hair, write_native,
                          write_oriented_cloud)
from strandkit.synth import HairstyleSpec, Style, generate, sample_oriented_cloud

from conftest import as_set, make_strand, straight_strand

HEADER = struct.Struct("<4sIIIIff3f88s")


def minimal_hair_bytes(points, flags=2, default_thickness=0.25,
                       default_transparency=0.5, magic=b"HAIR",
                       segments=None):
    points = np.asarray(points, dtype="<f4")
    n_strands = 1 if segments is None else len(segments)
    head = HEADER.pack(magic, n_strands, len(points), flags,
                       len(points) - 1 if segments is None else 0,
                       default_thickness, default_transparency,
                       0.3, 0.2, 0.1, b"test".ljust(88, b"\0"))
    body = b""
    if segments is not None:
        body += np.asarray(segments, dtype="<u2").tobytes()
    body += points.tobytes()
    return head + body


class TestHairFormat:
    def test_minimal_two_point_file(self, tmp_path):
        path = tmp_path / "min.hair"
        data = minimal_hair_bytes([[0, 0, 0], [10, 0, 0]])
        assert len(data) == 152
        path.write_bytes(data)
        ss = read_hair(path)
        assert len(ss) == 1
        s = ss.strands[0]
        np.testing.assert_allclose(s.joints, [[0, 0, 0], [10, 0, 0]])
        np.testing.assert_allclose(s.thickness, [0.25])  # default honored
        # default transparency 0.5 -> opacity 0.5 -> logit 0
        assert s.opacity_logit == pytest.approx(0.0, abs=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hair"
        path.write_bytes(minimal_hair_bytes([[0, 0, 0], [1, 0, 0]], magic=b"HAIX"))
        with pytest.raises(BadMagic) as err:
            read_hair(path)
        assert err.value.position == 0

    def test_points_flag_required(self, tmp_path):
        path = tmp_path / "noflag.hair"
        path.write_bytes(minimal_hair_bytes([[0, 0, 0], [1, 0, 0]], flags=0))
        with pytest.raises(FlagMismatch):
            read_hair(path)

    def test_segments_array(self, tmp_path):
        pts = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [5, 5, 5], [5, 6, 5]]
        path = tmp_path / "seg.hair"
        path.write_bytes(minimal_hair_bytes(pts, flags=3, segments=[2, 1]))
        ss = read_hair(path)
        assert [s.num_joints for s in ss] == [3, 2]

    def test_point_count_mismatch(self, tmp_path):
        pts = [[0, 0, 0], [1, 0, 0], [2, 0, 0]]
        path = tmp_path / "mismatch.hair"
        path.write_bytes(minimal_hair_bytes(pts, flags=3, segments=[3]))
        with pytest.raises(FlagMismatch):
            read_hair(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "trunc.hair"
        path.write_bytes(b"HAIR\x01\x00")
        with pytest.raises(TruncatedFile) as err:
            read_hair(path)
        assert err.value.position is not None

    def test_truncated_points(self, tmp_path):
        data = minimal_hair_bytes([[0, 0, 0], [1, 0, 0]])
        path = tmp_path / "trunc2.hair"
        path.write_bytes(data[:-5])
        with pytest.raises(TruncatedFile):
            read_hair(path)

    def test_canonical_round_trip_byte_identical(self, tmp_path):
        hair = generate(HairstyleSpec(style=Style.CURLY, strand_count=8,
                                      joints_per_strand=30, seed=2))
        p1, p2 = tmp_path / "a.hair", tmp_path / "b.hair"
        write_hair(p1, hair)
        write_hair(p2, read_hair(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_polylines_survive_at_f32(self, tmp_path):
        hair = generate(HairstyleSpec(style=Style.WAVY, strand_count=5,
                                      joints_per_strand=20, seed=4))
        path = tmp_path / "rt.hair"
        write_hair(path, hair)
        back = read_hair(path)
        for a, b in zip(hair, back):
            np.testing.assert_array_equal(
                b.joints, a.joints.astype(np.float32).astype(float))

    def test_unit_scale(self, tmp_path):
        s = make_strand(0, [[0, 0, 0], [1, 0, 0]])
        path = tmp_path / "scale.hair"
        write_hair(path, as_set(s))
        ss = read_hair(path, unit_scale=10.0)
        np.testing.assert_allclose(ss.strands[0].joints[1], [10, 0, 0])


class TestUscFormat:
    def _write(self, path, strands):
        blob = struct.pack("<I", len(strands))
        for pts in strands:
            pts = np.asarray(pts, dtype="<f4")
            blob += struct.pack("<I", len(pts)) + pts.tobytes()
        path.write_bytes(blob)

    def test_two_strands(self, tmp_path):
        path = tmp_path / "a.data"
        self._write(path, [[[0, 0, 0], [1, 0, 0], [2, 0, 0]],
                           [[5, 5, 5], [5, 6, 5], [5, 7, 5]]])
        ss, dropped = read_usc(path, unit_scale=1.0)
        assert len(ss) == 2 and dropped == 0
        assert all(s.num_joints == 3 for s in ss)

    def test_single_point_strand_dropped(self, tmp_path):
        path = tmp_path / "b.data"
        self._write(path, [[[0, 0, 0]], [[1, 1, 1], [2, 1, 1]]])
        ss, dropped = read_usc(path, unit_scale=1.0)
        assert len(ss) == 1 and dropped == 1

    def test_truncated(self, tmp_path):
        path = tmp_path / "c.data"
        self._write(path, [[[0, 0, 0], [1, 0, 0], [2, 0, 0]]])
        full = path.read_bytes()
        path.write_bytes(full[:-7])
        with pytest.raises(TruncatedFile) as err:
            read_usc(path, unit_scale=1.0)
        assert err.value.position is not None

    def test_unit_scale_applied(self, tmp_path):
        path = tmp_path / "d.data"
        self._write(path, [[[0, 0, 0], [1, 0, 0]]])
        ss, _ = read_usc(path, unit_scale=10.0)
        np.testing.assert_allclose(ss.strands[0].joints[1], [10, 0, 0])


class TestNativeFormat:
    def test_empty_set(self, tmp_path):
        path = tmp_path / "empty.strands"
        write_native(path, StrandSet(()))
        text = path.read_text()
        assert text == "strands 0 unit_mm 1\nend\n"
        assert len(read_native(path)) == 0

    def test_round_trip_close(self, tmp_path, rng):
        strands = []
        for i in range(10):
            pts = rng.uniform(-100, 100, (8, 3))
            pts[1:] += np.cumsum(rng.uniform(1, 3, (7, 3)), axis=0)
            strands.append(make_strand(i, pts, mask_logit=float(rng.normal()),
                                       opacity_logit=float(rng.normal()),
                                       color=rng.uniform(0, 1, 3)))
        ss = as_set(*strands)
        path = tmp_path / "rt.strands"
        write_native(path, ss)
        back = read_native(path)
        for a, b in zip(ss, back):
            np.testing.assert_allclose(b.joints, a.joints, atol=1e-7)
            np.testing.assert_allclose(b.thickness, a.thickness, atol=1e-7)
            assert b.mask_logit == pytest.approx(a.mask_logit, abs=1e-7)

    def test_idempotent_second_pass(self, tmp_path):
        hair = generate(HairstyleSpec(style=Style.CURLY, strand_count=6,
                                      joints_per_strand=25, seed=9))
        p1, p2 = tmp_path / "a.strands", tmp_path / "b.strands"
        write_native(p1, hair)
        write_native(p2, read_native(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_joint_line_names_line(self, tmp_path):
        path = tmp_path / "bad.strands"
        path.write_text("strands 1 unit_mm 1\n"
                        "strand 0 2 0 0 0.3 0.2 0.1\n"
                        "0 0 0 0.1\n"
                        "1 0 zz\n"
                        "end\n")
        with pytest.raises(ParseError) as err:
            read_native(path)
        assert err.value.position == 4

    def test_missing_terminator(self, tmp_path):
        path = tmp_path / "noend.strands"
        path.write_text("strands 1 unit_mm 1\n"
                        "strand 0 2 0 0 0.3 0.2 0.1\n"
                        "0 0 0 0.1\n"
                        "1 0 0\n")
        with pytest.raises(ParseError):
            read_native(path)

    def test_missing_final_newline(self, tmp_path):
        path = tmp_path / "nonl.strands"
        path.write_bytes(b"strands 0 unit_mm 1\nend")
        with pytest.raises(ParseError):
            read_native(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "trail.strands"
        path.write_text("strands 0 unit_mm 1\nend\nmore\n")
        with pytest.raises(ParseError):
            read_native(path)

    def test_wrong_strand_count(self, tmp_path):
        path = tmp_path / "count.strands"
        path.write_text("strands 2 unit_mm 1\n"
                        "strand 0 2 0 0 0.3 0.2 0.1\n"
                        "0 0 0 0.1\n"
                        "1 0 0\n"
                        "end\n")
        with pytest.raises(ParseError):
            read_native(path)


class TestOrientedCloudFormat:
    def test_one_line(self, tmp_path):
        path = tmp_path / "c.cloud"
        path.write_text("1 2 3 0 0 1\n")
        cloud = read_oriented_cloud(path)
        assert len(cloud) == 1
        np.testing.assert_allclose(cloud.points[0], [1, 2, 3])

    def test_renormalization(self, tmp_path):
        path = tmp_path / "c.cloud"
        path.write_text("0 0 0 2 0 0\n")
        cloud = read_oriented_cloud(path)
        np.testing.assert_allclose(cloud.directions[0], [1, 0, 0])

    def test_zero_direction(self, tmp_path):
        path = tmp_path / "c.cloud"
        path.write_text("0 0 0 1 0 0\n5 5 5 0 0 0\n")
        with pytest.raises(ParseError) as err:
            read_oriented_cloud(path)
        assert err.value.position == 2

    def test_round_trip(self, tmp_path):
        hair = generate(HairstyleSpec(style=Style.WAVY, strand_count=4, seed=1))
        cloud = sample_oriented_cloud(hair, 2.0, noise_sigma=0.1, seed=1)
        path = tmp_path / "c.cloud"
        write_oriented_cloud(path, cloud)
        back = read_oriented_cloud(path)
        np.testing.assert_allclose(back.points, cloud.points, atol=1e-7)
        np.testing.assert_allclose(back.directions, cloud.directions, atol=1e-7)


class TestConformanceFixtures:
    FIXTURES = __file__.rsplit("/", 2)[0] + "/fixtures"

    def test_native_minimal(self):
        ss = read_native(f"{self.FIXTURES}/native/minimal.strands")
        assert len(ss) == 1
        s = ss.strands[0]
        np.testing.assert_allclose(s.joints, [[0, 0, 0], [10, 0, 0]])
        np.testing.assert_allclose(s.thickness, [0.1])

    def test_native_two_strands(self):
        ss = read_native(f"{self.FIXTURES}/native/two_strands.strands")
        assert [s.id for s in ss] == [3, 7]
        assert [s.num_joints for s in ss] == [3, 2]
        assert ss.strands[0].mask_logit == pytest.approx(1.5)
        np.testing.assert_allclose(ss.strands[0].thickness, [0.12, 0.1])

    def test_native_canonical_rewrite_is_byte_identical(self, tmp_path):
        src = f"{self.FIXTURES}/native/two_strands.strands"
        out = tmp_path / "o.strands"
        write_native(out, read_native(src))
        assert out.read_bytes() == open(src, "rb").read()

    @pytest.mark.parametrize("name,line", [
        ("invalid_missing_end.strands", 5),
        ("invalid_bad_joint.strands", 3),
    ])
    def test_native_invalid_fixtures(self, name, line):
        with pytest.raises(ParseError) as err:
            read_native(f"{self.FIXTURES}/native/{name}")
        assert err.value.position == line

    def test_hair_minimal(self):
        ss = read_hair(f"{self.FIXTURES}/hair/minimal.hair")
        assert len(ss) == 1
        s = ss.strands[0]
        np.testing.assert_allclose(s.joints, [[0, 0, 0], [10, 0, 0]])
        np.testing.assert_allclose(s.thickness, [0.1])
        assert s.opacity_logit == pytest.approx(0.0, abs=1e-6)


class TestTruncationSmoke:
    def test_hair_truncations_error_with_position(self, tmp_path, rng):
        hair = generate(HairstyleSpec(style=Style.STRAIGHT, strand_count=4,
                                      joints_per_strand=10, seed=0))
        path = tmp_path / "f.hair"
        write_hair(path, hair)
        data = path.read_bytes()
        for cut in rng.integers(0, len(data) - 1, size=40):
            path.write_bytes(data[:cut])
            with pytest.raises((TruncatedFile, BadMagic, FlagMismatch)) as err:
                read_hair(path)
            assert err.value.position is not None

    def test_native_truncations_error_with_position(self, tmp_path, rng):
        hair = generate(HairstyleSpec(style=Style.STRAIGHT, strand_count=3,
                                      joints_per_strand=6, seed=0))
        path = tmp_path / "f.strands"
        write_native(path, hair)
        data = path.read_bytes()
        for cut in rng.integers(0, len(data) - 1, size=40):
            path.write_bytes(data[:cut])
            with pytest.raises(ParseError) as err:
                read_native(path)
            assert err.value.position is not None
