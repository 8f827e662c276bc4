import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from roijscc import geometry
from roijscc.bandwidth import Allocation, LinkConfig, allocate, pack, unpack_zero_pad
from roijscc.errors import ConfigError, ProtocolError
from roijscc.geometry import GridSpec, Region
from roijscc.trace import read_trace, write_trace

GRID = GridSpec(4, 4)
# 8x8 feature grid: 2x2 features per patch, B = 64; C_avg = 10 keeps 1.7 * C_avg and 0.9 * C_avg integral
CLEAN = LinkConfig(GRID, 8, 8, k=640, c_m=20, tau=0.1)


def expected_total(gamma, c_roi, c_rop, c_roni, per_patch=4):
    m = geometry.classify_regions(gamma, 4, 4)
    return per_patch * (m.n_roi * c_roi + m.n_rop * c_rop + m.n_roni * c_roni)


def test_interior_factors_and_exact_budget():
    alloc = CLEAN.allocation((2, 2))
    assert alloc.eta == 7
    assert (alloc.c_roi, alloc.c_rop, alloc.c_roni) == (17, 10, 9)
    # (1.7 + 8 * 1.0 + 7 * 0.9) * C_avg * features-per-patch = 16 * 10 * 4
    assert alloc.total == 640 == expected_total((2, 2), 17, 10, 9)


def test_uniform_bypass_uses_whole_budget():
    cfg = LinkConfig(GRID, 8, 8, k=640, c_m=20, tau=0.1, adaptive=False)
    alloc = cfg.allocation((2, 2))
    assert (alloc.per_feature_dims == 10).all()
    assert alloc.total == 640


def test_corner_budget_has_slack():
    alloc = CLEAN.allocation((1, 1))
    # 1.7 + 3 + 12 * 0.9 = 15.5 of 16 patch-units
    assert alloc.total == expected_total((1, 1), 17, 10, 9) == 620
    assert alloc.total < 640


def test_per_feature_dims_follow_patch_labels():
    alloc = CLEAN.allocation((3, 2))
    labels = geometry.feature_labels(geometry.classify_regions((3, 2), 4, 4), 8, 8).reshape(-1)
    want = np.select([labels == Region.ROI, labels == Region.ROP], [17, 10], 9)
    np.testing.assert_array_equal(alloc.per_feature_dims, want)


def test_rounding_floors_and_caps():
    # toy link: 16x16 features, k = 1024 -> C_avg = 4, 1.7 * 4 = 6.8 -> 6, 0.9 * 4 = 3.6 -> 3
    cfg = LinkConfig(GRID, 16, 16, k=1024, c_m=16, tau=0.1)
    alloc = cfg.allocation((2, 3))
    assert (alloc.c_roi, alloc.c_rop, alloc.c_roni) == (6, 4, 3)
    assert alloc.total == 16 * (6 + 8 * 4 + 7 * 3) < 1024
    capped = LinkConfig(GRID, 8, 8, k=640, c_m=12, tau=0.1).allocation((2, 2))
    assert capped.c_roi == 12


def test_config_errors():
    m = geometry.classify_regions((2, 2), 4, 4)
    with pytest.raises(ConfigError):
        allocate(650, m, 8, 8, 0.1, 20)  # k not divisible by B
    with pytest.raises(ConfigError):
        allocate(0, m, 8, 8, 0.1, 20)
    with pytest.raises(ConfigError):
        allocate(640, m, 8, 8, 0.0, 20)
    with pytest.raises(ConfigError):
        allocate(640, m, 8, 8, 0.1, 8)  # C_avg above C_m


@pytest.mark.parametrize("gamma", GRID.positions())
def test_budget_all_positions(gamma):
    alloc = CLEAN.allocation(gamma)
    assert alloc.total <= 640
    assert alloc.c_roni <= alloc.c_rop == alloc.c_avg <= alloc.c_roi
    assert alloc.per_feature_dims.min() >= 1 and alloc.per_feature_dims.max() <= 20
    if gamma in GRID.interior_positions():
        assert alloc.total == 640


@given(st.sampled_from(GRID.positions()), st.floats(0.01, 0.95), st.floats(0.01, 0.95))
def test_monotone_in_tau(gamma, t1, t2):
    lo, hi = sorted((t1, t2))
    a = LinkConfig(GRID, 8, 8, 640, 20, lo).allocation(gamma)
    b = LinkConfig(GRID, 8, 8, 640, 20, hi).allocation(gamma)
    assert b.c_roi >= a.c_roi
    assert b.c_roni <= a.c_roni
    assert b.total <= 640


def test_pack_identity_when_uniform_full_width():
    cfg = LinkConfig(GRID, 4, 4, k=16 * 6, c_m=6, adaptive=False)
    z = np.arange(96).reshape(16, 6) + 1j
    packed = pack(z, cfg.allocation((2, 2)))
    np.testing.assert_array_equal(packed.values, z.reshape(-1))


def test_pack_layout_by_construction():
    z = np.array([[1, 2, 3, 4], [5, 6, 7, 8]], dtype=np.complex64)
    alloc = Allocation(2, 3, 2, 1, 0.1, 7.0, np.array([3, 1]))
    packed = pack(z, alloc)
    np.testing.assert_array_equal(packed.values, [1, 2, 3, 5])
    np.testing.assert_array_equal(packed.layout, [[0, 3], [1, 1]])


def test_pack_rejects_oversized_dims():
    z = np.zeros((2, 4), dtype=np.complex64)
    with pytest.raises(AssertionError):
        pack(z, Allocation(2, 5, 2, 1, 0.1, 7.0, np.array([5, 1])))


@pytest.mark.parametrize("gamma", GRID.positions())
def test_round_trip_noiseless(gamma):
    rng = np.random.default_rng(hash(gamma) % 2**32)
    z = (rng.standard_normal((64, 20)) + 1j * rng.standard_normal((64, 20))).astype(np.complex64)
    packed = pack(z, CLEAN.allocation(gamma))
    back = unpack_zero_pad(packed.values, gamma, CLEAN)
    keep = CLEAN.keep_mask(gamma)[0]
    np.testing.assert_array_equal(back[keep], z[keep])
    assert (back[~keep] == 0).all()


def test_round_trip_torch():
    z = torch.randn(64, 20, dtype=torch.complex64)
    packed = pack(z, CLEAN.allocation((2, 3)))
    back = unpack_zero_pad(packed.values, (2, 3), CLEAN)
    keep = torch.from_numpy(CLEAN.keep_mask((2, 3))[0])
    assert torch.equal(back[keep], z[keep])
    assert (back[~keep] == 0).all()


def test_unpack_zeros():
    n = CLEAN.allocation((2, 2)).total
    back = unpack_zero_pad(np.zeros(n, dtype=np.complex64), (2, 2), CLEAN)
    assert (back == 0).all()


def test_unpack_wrong_gamma_is_protocol_error():
    z = np.ones((64, 20), dtype=np.complex64)
    packed = pack(z, CLEAN.allocation((2, 2)))
    with pytest.raises(ProtocolError):
        unpack_zero_pad(packed.values, (1, 1), CLEAN)
    # two interior positions have equal lengths, so the mismatch cannot be detected
    wrong = unpack_zero_pad(packed.values, (3, 3), CLEAN)
    assert wrong.shape == (64, 20)


def test_layout_rebuilt_from_gamma_alone():
    a = LinkConfig(GRID, 8, 8, 640, 20, 0.1)
    b = LinkConfig(GRID, 8, 8, 640, 20, 0.1)
    for g in GRID.positions():
        np.testing.assert_array_equal(a.keep_mask(g), b.keep_mask(g))


def test_batched_keep_mask():
    gammas = np.array([[1, 1], [2, 2], [4, 3]])
    masks = CLEAN.keep_mask(gammas)
    assert masks.shape == (3, 64, 20)
    for g, m in zip(gammas, masks):
        assert m.sum() == CLEAN.allocation(g).total


def test_symbol_trace_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    z = (rng.standard_normal((64, 20)) + 1j * rng.standard_normal((64, 20))).astype(np.complex64)
    packed = pack(z, CLEAN.allocation((2, 3)))
    path = write_trace(tmp_path / "sym.bin", packed, (2, 3), CLEAN)
    tr = read_trace(path)
    assert tr.header["gamma"] == [2, 3]
    assert tr.header["k"] == 640 and tr.header["c_m"] == 20
    np.testing.assert_array_equal(tr.symbols, packed.values)
    back = unpack_zero_pad(tr.symbols, tuple(tr.header["gamma"]), CLEAN)
    keep = CLEAN.keep_mask((2, 3))[0]
    np.testing.assert_array_equal(back[keep], z[keep])
    # payload is little-endian float32 pairs right after the header
    raw = path.read_bytes()
    assert raw[-8:] == np.array([packed.values[-1].real, packed.values[-1].imag], dtype="<f4").tobytes()


def test_trace_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"nope")
    with pytest.raises(ProtocolError):
        read_trace(p)
