import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from collateral.errors import BoundsError, DataError, FormatError, ResampleError, ShapeError
from collateral.volume import (
    Cube,
    CubeState,
    Volume3D,
    apply_mask,
    extract_cube,
    load_vvol,
    mirror_corner,
    normalize_unit,
    resample_isotropic,
    resampled_length,
    save_vvol,
)


def test_roundtrip_zeros(tmp_path):
    vol = Volume3D(np.zeros((2, 2, 2)), (1, 1, 1))
    save_vvol(vol, tmp_path / "a.vvol")
    assert load_vvol(tmp_path / "a.vvol") == vol


def test_bad_magic(tmp_path):
    p = tmp_path / "b.vvol"
    save_vvol(Volume3D(np.zeros((2, 2, 2))), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NVOL"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_vvol(p)


def test_truncated_and_nonfinite(tmp_path):
    p = tmp_path / "c.vvol"
    save_vvol(Volume3D(np.ones((3, 2, 2))), p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-1])
    with pytest.raises(FormatError):
        load_vvol(p)
    bad = bytearray(raw)
    bad[30:34] = struct.pack("<f", float("nan"))
    p.write_bytes(bytes(bad))
    with pytest.raises(DataError):
        load_vvol(p)


def test_patient_sized_layout(tmp_path):
    data = np.arange(256 * 256 * 19, dtype=np.float32).reshape((256, 256, 19), order="F")
    vol = Volume3D(data, (0.9, 0.9, 6.5))
    p = tmp_path / "p.vvol"
    save_vvol(vol, p)
    raw = p.read_bytes()
    assert len(raw) == 30 + 256 * 256 * 19 * 4
    magic, version, nx, ny, nz, sx, sy, sz = struct.unpack_from("<4sH3I3f", raw)
    assert (magic, version, nx, ny, nz) == (b"VVOL", 1, 256, 256, 19)
    assert (sx, sy, sz) == tuple(np.float32(s) for s in (0.9, 0.9, 6.5))
    # x fastest: the second stored voxel is (1, 0, 0)
    assert struct.unpack_from("<2f", raw, 30) == (data[0, 0, 0], data[1, 0, 0])
    assert load_vvol(p) == vol


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_roundtrip_bit_exact(tmp_path_factory, data):
    p = tmp_path_factory.mktemp("v") / "x.vvol"
    vol = Volume3D(data, (0.5, 1.0, 2.0))
    save_vvol(vol, p)
    assert load_vvol(p).data.tobytes() == vol.data.tobytes()


def test_resample_length_rule():
    assert resampled_length(19, 6.5, 0.9) == 131
    vol = Volume3D(np.random.default_rng(0).random((8, 8, 19)), (0.9, 0.9, 6.5))
    out = resample_isotropic(vol, 0.9)
    assert out.dims == (8, 8, 131)
    assert out.spacing == (np.float32(0.9),) * 3


@pytest.mark.parametrize("target", [0.5, 0.9, 2.0])
def test_resample_constant(target):
    vol = Volume3D(np.full((6, 5, 7), 3.25), (0.9, 0.9, 6.5))
    out = resample_isotropic(vol, target)
    assert np.all(out.data == np.float32(3.25))


def test_resample_identity_when_isotropic():
    vol = Volume3D(np.random.default_rng(1).random((5, 6, 7)), (0.9, 0.9, 0.9))
    assert resample_isotropic(vol, 0.9) == vol


def test_resample_interpolates_samples():
    # grid points are reproduced and a smooth profile is followed between them
    z = np.arange(12) * 2.0
    data = np.broadcast_to(np.sin(z / 5), (3, 3, 12)).astype(np.float32)
    out = resample_isotropic(Volume3D(data, (1.0, 1.0, 2.0)), 1.0)
    assert np.allclose(out.data[..., ::2], data, atol=1e-5)
    zn = np.arange(23) * 1.0
    assert np.allclose(out.data[0, 0, 7:-7], np.sin(zn / 5)[7:-7], atol=2e-3)


def test_resample_errors():
    vol = Volume3D(np.zeros((4, 4, 3)), (1, 1, 1))
    with pytest.raises(ResampleError):
        resample_isotropic(vol, 5.0)
    with pytest.raises(ResampleError):
        resample_isotropic(vol, 0.0)


def test_mask(rng):
    vol = Volume3D(rng.random((6, 6, 6)) + 0.1)
    assert apply_mask(vol, Volume3D(np.ones((6, 6, 6)))) == vol
    assert not apply_mask(vol, Volume3D(np.zeros((6, 6, 6)))).data.any()
    m = np.zeros(216)
    m[rng.choice(216, 17, replace=False)] = 1
    out = apply_mask(vol, Volume3D(m.reshape(6, 6, 6)))
    assert np.count_nonzero(out.data) <= 17
    with pytest.raises(ShapeError):
        apply_mask(vol, Volume3D(np.ones((6, 6, 5))))


def test_extract_cube_index_oracle():
    x, y, z = np.meshgrid(np.arange(4), np.arange(4), np.arange(4), indexing="ij")
    vol = Volume3D(x + 10 * y + 100 * z)
    cube = extract_cube([vol], CubeState((0, 0, 0), 2))
    assert cube.flat(0).tolist() == [0, 1, 10, 11, 100, 101, 110, 111]
    whole = extract_cube([vol], CubeState((0, 0, 0), 4))
    assert np.array_equal(whole.channels[0], vol.data)


def test_extract_cube_bounds():
    extract_cube([Volume3D(np.zeros((256, 64, 64)))], CubeState((192, 0, 0), 64))
    with pytest.raises(BoundsError):
        extract_cube([Volume3D(np.zeros((255, 64, 64)))], CubeState((200, 0, 0), 64))


def test_mirror_examples():
    assert mirror_corner(CubeState((0, 5, 7), 64), (256, 256, 19)).corner == (192, 5, 7)
    assert mirror_corner(CubeState((96, 0, 0), 64), (256, 256, 64)).corner == (96, 0, 0)


@given(st.integers(1, 40), st.integers(0, 100), st.integers(0, 9), st.integers(0, 9))
def test_mirror_involution(edge, slack, cy, cz):
    nx = edge + slack
    for cx in {0, slack // 2, slack}:
        s = CubeState((cx, cy, cz), edge)
        m = mirror_corner(s, (nx, 50, 50))
        assert m.fits((nx, 50, 50)) or cy + edge > 50 or cz + edge > 50
        assert mirror_corner(m, (nx, 50, 50)) == s
        assert m.corner[1:] == s.corner[1:] and m.edge == s.edge


def test_normalize_examples():
    ch = np.array([2, 4, 6, 8], dtype=np.float32).reshape(1, 1, 4)
    # Cube wants edge**3 channels, so check the arithmetic on a 4**3 block
    block = np.zeros((4, 4, 4), dtype=np.float32) + ch
    out = normalize_unit(Cube((block,)))
    assert np.allclose(out.channels[0][0, 0], [0, 1 / 3, 2 / 3, 1])
    flat = normalize_unit(Cube((np.full((3, 3, 3), 5.0),)))
    assert not flat.channels[0].any()


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float32, (3, 3, 3), elements=st.floats(-1e4, 1e4, width=32)))
def test_normalize_range(block):
    out = normalize_unit(Cube((block,))).channels[0]
    assert out.min() >= 0 and out.max() <= 1
    if np.ptp(block) > 0:
        assert out.min() == 0 and out.max() == 1


def test_cube_channel_count():
    with pytest.raises(ShapeError):
        Cube(tuple(np.zeros((2, 2, 2)) for _ in range(2)))
