import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cubesplit.constellation import (
    MAX_ENUMERATION,
    CellBoundaryError,
    CubeSplit,
    allocate_bits,
    conjectured_mindist,
    coordinate_grid,
    gray_decode,
    gray_encode,
    inverse_xi1,
    map_xi1,
    mindist_cs_t1,
)
from cubesplit.grassmann import distance_spectrum, min_distance, packing_bounds
from cubesplit.numerics import inv_norm_cdf

M34 = 0.674489750196081


def brute_min_distance(P):
    # independent of the library: plain Gram matrix scan, row blocks
    best = 0.0
    for s in range(0, len(P), 512):
        G = np.abs(P[s:s + 512].conj() @ P.T) ** 2
        G[np.arange(G.shape[0]), s + np.arange(G.shape[0])] = 0.0
        best = max(best, G.max())
    return math.sqrt(1.0 - best)


# -- the disc map -------------------------------------------------------------

def test_xi1_centre():
    assert map_xi1(0.5, 0.5) == 0


def test_xi1_real_axis():
    t = complex(map_xi1(0.75, 0.5))
    want = math.sqrt((1 - math.exp(-M34**2 / 2)) / (1 + math.exp(-M34**2 / 2)))
    assert t.imag == 0 and t.real > 0
    assert t.real == pytest.approx(want, rel=1e-12)


@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_xi1_reflection(a1, a2):
    t = complex(map_xi1(a1, a2))
    s = complex(map_xi1(1 - a1, a2))
    assert abs(t) < 1
    assert s.real == pytest.approx(-t.real, abs=1e-9)
    assert s.imag == pytest.approx(t.imag, abs=1e-9)


@settings(max_examples=200)
@given(st.floats(1e-6, 1 - 1e-6), st.floats(1e-6, 1 - 1e-6))
def test_xi1_round_trip(a1, a2):
    b1, b2 = inverse_xi1(map_xi1(a1, a2))
    assert b1 == pytest.approx(a1, abs=1e-9)
    assert b2 == pytest.approx(a2, abs=1e-9)


def test_inverse_clamps_near_unit_circle():
    s = 1 - 1e-16
    # unclamped coordinate would be Phi(sqrt(4 artanh(s^2))) > 1 - 1e-12
    wmag = mp.sqrt(4 * mp.atanh(mp.mpf(s) ** 2))
    assert mp.ncdf(wmag) > 1 - mp.mpf("1e-12")
    a1, a2 = inverse_xi1(np.array([s + 0j]))
    assert np.isfinite(a1).all() and np.isfinite(a2).all()
    assert 1e-12 <= a1[0] <= 1 - 1e-12
    assert a2[0] == 0.5
    a1, _ = inverse_xi1(np.array([-s + 0j]))
    assert 1e-12 <= a1[0] < 1e-6


# -- encode / inverse -------------------------------------------------------------

@pytest.mark.parametrize("T", [2, 3, 4, 8])
def test_encode_centre_is_basis(T):
    cs = CubeSplit.symmetric(T, 1)
    for i in range(T):
        x = cs.encode(i, np.full(cs.dims, 0.5))
        assert np.allclose(x, np.eye(T)[i], atol=1e-15)


def test_encode_t2_example():
    c = math.tanh(M34**2 / 2)
    assert c == pytest.approx(0.22360, abs=5e-5)
    x = CubeSplit.symmetric(2, 1).encode(0, [0.75, 0.75])
    want = np.array([1, math.sqrt(c) * np.exp(1j * math.pi / 4)]) / math.sqrt(1 + c)
    assert np.allclose(x, want, atol=1e-12)


@pytest.mark.parametrize("T", [2, 4, 5])
def test_encode_round_trip(T, rng):
    cs = CubeSplit.symmetric(T, 2)
    for i in range(T):
        for _ in range(100 if i == 1 else 10):
            a = rng.uniform(1e-3, 1 - 1e-3, cs.dims)
            x = cs.encode(i, a)
            assert abs(np.linalg.norm(x) - 1) < 1e-12
            mags = np.abs(x)
            assert np.argmax(mags) == i and np.sum(mags == mags.max()) == 1
            assert x[i].imag == 0 and x[i].real > 0
            loc = cs.inverse_map(np.exp(0.3j) * x)
            assert loc.cell == i
            assert np.allclose(loc.a, a, atol=1e-9)
            assert np.all(np.abs(loc.t) < 1)


def test_inverse_of_basis():
    loc = CubeSplit.symmetric(4, 1).inverse_map(np.eye(4)[0])
    assert loc.cell == 0 and np.allclose(loc.a, 0.5)


def test_inverse_boundary_tie():
    cs = CubeSplit.symmetric(2, 1)
    x = np.array([1, 1j]) / math.sqrt(2)
    with pytest.raises(CellBoundaryError):
        cs.inverse_map(x)
    assert cs.inverse_map(x, tie_break=True).cell == 0
    assert cs.inverse_map(x[::-1], tie_break=True).cell == 0


def test_encode_rejects_boundary():
    cs = CubeSplit.symmetric(2, 1)
    with pytest.raises(ValueError):
        cs.encode(0, [0.0, 0.5])
    with pytest.raises(ValueError):
        cs.encode(2, [0.5, 0.5])


# -- enumeration --------------------------------------------------------------------

@pytest.mark.parametrize("T,b0,size", [(2, 1, 8), (4, 1, 256), (2, 4, 512)])
def test_enumeration_sizes(T, b0, size):
    cs = CubeSplit.symmetric(T, b0)
    assert cs.size == size
    X = cs.symbols()
    assert X.shape == (size, T)
    assert brute_min_distance(X) > 1e-3  # all lines distinct


def test_enumerate_pairs():
    cs = CubeSplit.symmetric(2, 1)
    pairs = list(cs.enumerate())
    assert [p[0] for p in pairs] == [format(k, "03b") for k in range(8)]
    assert np.allclose(np.array([p[1] for p in pairs]), cs.symbols())


@pytest.mark.parametrize("T,b0", [(2, 1), (2, 3), (3, 1), (4, 1), (4, 2), (8, 1)])
def test_dominant_component_is_cell(T, b0):
    cs = CubeSplit.symmetric(T, b0)
    X = cs.symbols()
    mags = np.abs(X)
    cells = np.arange(cs.size) // cs.per_cell
    assert np.array_equal(np.argmax(mags, axis=1), cells)
    top = np.sort(mags, axis=1)
    assert np.all(top[:, -1] > top[:, -2])
    assert np.allclose(np.linalg.norm(X, axis=1), 1, atol=1e-12)


def test_enumeration_guard():
    cs = CubeSplit.symmetric(8, 2)  # 8 * 2^28
    assert cs.size > MAX_ENUMERATION
    with pytest.raises(ValueError):
        cs.symbols()


def test_coordinate_grid():
    assert np.allclose(coordinate_grid(1), [0.25, 0.75])
    assert np.allclose(coordinate_grid(3), (2 * np.arange(1, 9) - 1) / 16)


# -- bit allocation -----------------------------------------------------------------

def test_allocate_examples():
    assert allocate_bits(2, 9) == (4, 4)
    assert allocate_bits(4, 9) == (2, 1, 1, 1, 1, 1)
    assert allocate_bits(4, 14) == (2,) * 6
    with pytest.raises(ValueError):
        allocate_bits(3, 9)
    with pytest.raises(ValueError):
        allocate_bits(4, 7)


@given(st.sampled_from([2, 4, 8, 16]), st.integers(0, 40), st.integers(0, 1000))
def test_allocate_properties(T, extra, seed):
    B = (T.bit_length() - 1) + 2 * (T - 1) + extra
    for rng in (None, np.random.default_rng(seed)):
        w = allocate_bits(T, B, rng)
        assert len(w) == 2 * (T - 1)
        assert sum(w) == B - (T.bit_length() - 1)
        assert max(w) - min(w) <= 1
    w = allocate_bits(T, B)
    assert list(w) == sorted(w, reverse=True)


# -- labels ----------------------------------------------------------------------------

def test_label_example():
    cs = CubeSplit.symmetric(2, 1)
    cell, a = cs.label_to_coordinates("000")
    assert cell == 0 and np.allclose(a, [0.25, 0.25])
    cell, a = cs.label_to_coordinates("110")
    assert cell == 1 and np.allclose(a, [0.75, 0.25])


def test_gray_codes():
    p = np.arange(1 << 10)
    g = gray_encode(p)
    assert np.array_equal(gray_decode(g), p)
    diff = g[1:] ^ g[:-1]
    assert np.all((diff & (diff - 1)) == 0) and np.all(diff > 0)


@pytest.mark.parametrize("widths", [(1, 1), (3, 3), (2, 1, 1, 1, 1, 1), (2, 2, 2, 2, 2, 2)])
def test_gray_adjacency(widths):
    T = len(widths) // 2 + 1
    cs = CubeSplit(T, widths)
    L = cs.labels()
    idx = np.arange(cs.size)
    cells, pos = cs.split_index(idx)
    for j, b in enumerate(widths):
        step = pos.copy()
        ok = step[:, j] + 1 < (1 << b)
        step[ok, j] += 1
        nxt = cs.index_of(cells[ok], step[ok])
        assert np.all(np.sum(L[idx[ok]] != L[nxt], axis=1) == 1)
    # cell bits carry the cell index in binary
    cb = cs.cell_bits
    val = L[:, :cb] @ (1 << np.arange(cb - 1, -1, -1))
    assert np.array_equal(val, cells)


@pytest.mark.parametrize("T,b0", [(2, 1), (2, 2), (2, 3), (2, 4), (2, 5), (2, 6), (4, 1), (4, 2)])
def test_label_chain_noiseless(T, b0):
    cs = CubeSplit.symmetric(T, b0)
    assert cs.bits <= 14
    X = cs.symbols()
    labels = cs.labels()
    assert len({tuple(r) for r in labels}) == cs.size == 2**cs.bits
    phase = np.exp(1j * np.linspace(0, 6, cs.size))[:, None]
    back = cs.nearest_index(X * phase)
    assert np.array_equal(back, np.arange(cs.size))
    for k in (0, cs.size // 3, cs.size - 1):
        s = cs.label_string(k)
        assert cs.label_to_index(s) == k
        assert np.allclose(cs.label_to_symbol(s), X[k])
        cell, a = cs.label_to_coordinates(s)
        assert np.array_equal(cs.label_of(cell, a), labels[k])


def test_labels_need_power_of_two():
    cs = CubeSplit.symmetric(3, 1)
    assert cs.size == 3 * 16 and not cs.labeled
    with pytest.raises(ValueError):
        cs.labels()
    with pytest.raises(ValueError):
        cs.label_to_symbol("0000")


def test_label_length_checked():
    cs = CubeSplit.symmetric(2, 1)
    with pytest.raises(ValueError):
        cs.label_to_index("01")
    with pytest.raises(ValueError):
        cs.label_to_index("012")


def test_quantize_midpoint_goes_down():
    cs = CubeSplit.symmetric(2, 2)
    pos = cs.quantize(np.array([[0.5, 0.25]]))
    assert pos.tolist() == [[1, 0]]


# -- distances ---------------------------------------------------------------------------

def test_mindist_t1_values():
    assert mindist_cs_t1(2) == pytest.approx(0.54654578501864, abs=1e-12)
    assert mindist_cs_t1(4) == pytest.approx(0.481507178770003, abs=1e-12)


@pytest.mark.parametrize("T", [2, 3, 4])
def test_mindist_t1_exhaustive(T):
    assert brute_min_distance(CubeSplit.symmetric(T, 1).symbols()) == pytest.approx(mindist_cs_t1(T), abs=1e-9)


def test_mindist_t1_mpmath():
    m = mp.sqrt(2) * mp.erfinv(mp.mpf(1) / 2)
    c = (1 - mp.exp(-m * m)) / (1 + mp.exp(-m * m))
    for T in (2, 4, 8):
        z = 1 - (1 + 1j) / (1 / c + T - 1)
        assert mindist_cs_t1(T) == pytest.approx(float(mp.sqrt(1 - abs(z) ** 2)), abs=1e-14)


def test_conjectured_examples():
    assert conjectured_mindist(2, 4) == pytest.approx(0.0414025256220549, abs=1e-12)
    assert conjectured_mindist(2, 2) == pytest.approx(0.232630836788292, abs=1e-12)
    for T in (2, 3, 4, 8, 16):
        assert conjectured_mindist(T, 1) == pytest.approx(mindist_cs_t1(T), abs=1e-9)


def test_conjecture_matches_exhaustive_b0_2():
    d = brute_min_distance(CubeSplit.symmetric(2, 2).symbols())
    assert d == pytest.approx(conjectured_mindist(2, 2), abs=1e-9)
    d = brute_min_distance(CubeSplit.symmetric(4, 2).symbols())
    assert d == pytest.approx(0.18340812093883, abs=1e-9)


@pytest.mark.xfail(strict=True, reason="exhaustive CS(2,3) distance is 0.0950335, below the conjectured value")
def test_conjecture_matches_exhaustive_b0_3():
    d = brute_min_distance(CubeSplit.symmetric(2, 3).symbols())
    assert d == pytest.approx(conjectured_mindist(2, 3), abs=1e-9)


def test_exhaustive_b0_3_4_values():
    # regression values of the exhaustive scan
    assert brute_min_distance(CubeSplit.symmetric(2, 3).symbols()) == pytest.approx(0.0950335, abs=1e-7)
    assert min_distance(CubeSplit.symmetric(2, 4).symbols()) == pytest.approx(0.0311242, abs=1e-7)


def test_conjecture_asymptotics():
    for b0 in range(6, 15):
        v = math.log2(conjectured_mindist(2, b0)) + b0 + 0.5 * math.log2(b0)
        assert abs(v) <= 3


@pytest.mark.parametrize("T", [2, 4])
def test_flat_spectrum_exhaustive(T):
    sp = distance_spectrum(CubeSplit.symmetric(T, 1).symbols())
    assert np.all(np.abs(sp.nearest - mindist_cs_t1(T)) < 1e-9)


def test_flat_spectrum_t8_sampled(rng):
    # 2^17 symbols: scan sampled rows against the whole constellation
    X = CubeSplit.symmetric(8, 1).symbols()
    rows = rng.choice(X.shape[0], 96, replace=False)
    for r in rows:
        g = np.abs(X.conj() @ X[r]) ** 2
        g[r] = 0
        assert math.sqrt(1 - g.max()) == pytest.approx(mindist_cs_t1(8), abs=1e-9)


def test_packing_sandwich_small():
    for T, b0 in [(2, 1), (2, 2), (2, 3), (4, 1)]:
        cs = CubeSplit.symmetric(T, b0)
        assert min_distance(cs.symbols()) <= packing_bounds(T, cs.size)[1]


# -- uniformity ------------------------------------------------------------------------------

def test_uniformity_ks(rng):
    a = rng.random((100_000, 2))
    s = np.abs(map_xi1(a[:, 0], a[:, 1])) ** 2
    res = stats.kstest(s, lambda x: 2 * x / (1 + x))
    assert res.pvalue > 0.01


def test_inv_norm_used_for_grid():
    cs = CubeSplit.symmetric(2, 1)
    x = cs.symbol(0)
    t = x[1] / x[0]
    w = inv_norm_cdf(0.25) * (1 + 1j)
    assert abs(t) == pytest.approx(math.sqrt(math.tanh(abs(w) ** 2 / 4)), abs=1e-12)
