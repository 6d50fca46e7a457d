import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import majority_agreement, matched_agreement
from pgil.rasters import ComplexImage, ScatteringLabelMap
from pgil.synth import (PRESETS, ClassSpec, PointTarget, SceneLayout, estimate_coherency,
                        generate_polsar_scene, generate_slc_scene)
from pgil.xm import (build_filter_bank, h_alpha_decompose, h_alpha_zone, halpha_labels, jacobi_eigh,
                     subband_energies, subband_pattern, subband_patterns, tfa_label_map, tfa_label_maps,
                     wishart_classify, wishart_distance)


def random_psd(seed, d=3):
    r = np.random.default_rng(seed)
    a = r.standard_normal((d, d)) + 1j * r.standard_normal((d, d))
    return a @ a.conj().T


def entropy_oracle(p, base):
    p = np.asarray(p, dtype=float)
    p = p[p > 0] / p.sum()
    return float(-(p * np.log(p)).sum() / np.log(base))


# ---------------------------------------------------------------- H/alpha

def test_pure_surface_has_zero_entropy_and_alpha():
    r = h_alpha_decompose(np.diag([1.0, 0.0, 0.0]).astype(complex))
    assert abs(r.entropy) <= 1e-12
    assert abs(r.alpha) <= 1e-12


def test_identity_has_unit_entropy():
    assert abs(h_alpha_decompose(np.eye(3) / 3).entropy - 1.0) <= 1e-12


def test_diagonal_entropy_closed_form():
    r = h_alpha_decompose(np.diag([0.5, 0.3, 0.2]).astype(complex))
    assert abs(r.entropy - entropy_oracle([0.5, 0.3, 0.2], 3)) < 1e-12
    assert abs(r.entropy - 0.937) < 1e-3


def test_alpha_of_pure_dihedral_is_ninety():
    assert abs(h_alpha_decompose(np.diag([0.0, 1.0, 0.0]).astype(complex)).alpha - 90.0) < 1e-9


def test_dual_pol_uses_log_base_two():
    r = h_alpha_decompose(np.diag([0.75, 0.25]).astype(complex))
    assert abs(r.entropy - entropy_oracle([0.75, 0.25], 2)) < 1e-12
    assert abs(h_alpha_decompose(np.eye(2) / 2).entropy - 1.0) < 1e-12


def test_no_signal_sentinel():
    with pytest.warns(RuntimeWarning, match="no signal"):
        r = h_alpha_decompose(np.zeros((2, 3, 3), complex))
    assert np.all(r.no_signal)
    assert np.all(r.entropy == 0) and np.all(r.alpha == 0)


@given(st.integers(0, 2**31 - 1), st.sampled_from([0.1, 1.0, 10.0]))
def test_entropy_is_scale_invariant(seed, c):
    T = random_psd(seed)
    h1 = h_alpha_decompose(T).entropy
    h2 = h_alpha_decompose(c * T).entropy
    assert abs(h1 - h2) < 1e-10


@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 3]))
def test_halpha_ranges(seed, d):
    r = h_alpha_decompose(random_psd(seed, d))
    assert 0 <= r.entropy <= 1 + 1e-9
    assert 0 <= r.alpha <= 90 + 1e-9


@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 3]))
def test_jacobi_matches_lapack_and_residual(seed, d):
    T = random_psd(seed, d)
    lam, V = jacobi_eigh(T)
    assert np.all(np.diff(lam) <= 0)
    assert np.allclose(lam, np.linalg.eigvalsh(T)[::-1], atol=1e-10 * np.linalg.norm(T))
    for i in range(d):
        res = np.linalg.norm(T @ V[:, i] - lam[i] * V[:, i])
        assert res < 1e-9 * np.linalg.norm(T)
    assert np.allclose(V.conj().T @ V, np.eye(d), atol=1e-10)


def test_jacobi_batched_matches_loop():
    Ts = np.stack([random_psd(s) for s in range(20)]).reshape(4, 5, 3, 3)
    lam, _ = jacobi_eigh(Ts)
    for idx in np.ndindex(4, 5):
        assert np.allclose(lam[idx], jacobi_eigh(Ts[idx])[0], atol=1e-13)


# ---------------------------------------------------------------- zones

def test_zone_low_entropy_surface():
    assert h_alpha_zone(0.2, 10.0) == 9


def test_zone_high_entropy_multiple():
    assert h_alpha_zone(0.95, 70.0) == 1


def test_zone_lower_edge_inclusive():
    assert h_alpha_zone(0.5, 40.0) == 5
    assert h_alpha_zone(0.9, 55.0) == 1
    assert h_alpha_zone(0.49999, 47.5) == 7


def test_zone_three_folded():
    assert h_alpha_zone(0.95, 20.0) == 2


def test_zone_clamps_with_warning():
    with pytest.warns(RuntimeWarning, match="clamped"):
        assert h_alpha_zone(1.2, -5.0) == h_alpha_zone(1.0, 0.0)


@given(st.floats(0, 1), st.floats(0, 90))
def test_zone_range(H, a):
    z = h_alpha_zone(H, a)
    assert 1 <= z <= 9 and z != 3


def test_zone_vectorized_matches_scalar(rng):
    H, a = rng.random(50), rng.random(50) * 90
    zs = h_alpha_zone(H, a)
    assert all(zs[i] == h_alpha_zone(H[i], a[i]) for i in range(50))


# ---------------------------------------------------------------- Wishart

def test_wishart_distance_identity():
    assert abs(wishart_distance(np.eye(3), np.eye(3)) - 3.0) < 1e-12


def test_wishart_distance_scaled_center():
    assert abs(wishart_distance(np.eye(3), 2 * np.eye(3)) - (np.log(8) + 1.5)) < 1e-12


def test_wishart_distance_matches_dense_formula():
    T, S = random_psd(1), random_psd(2)
    expect = np.log(np.linalg.det(S).real) + np.trace(np.linalg.solve(S, T)).real
    assert abs(wishart_distance(T, S) - expect) < 1e-10


def test_singular_center_is_ridged_and_flagged():
    d, flag = wishart_distance(np.eye(3), np.diag([1.0, 0.0, 0.0]), return_flag=True)
    assert flag and np.isfinite(d)


def test_argmin_invariant_under_joint_scaling(rng):
    centers = [random_psd(s) for s in (3, 4, 5)]
    field = np.stack([random_psd(s) for s in range(100, 140)])
    base = np.argmin([wishart_distance(field, c) for c in centers], axis=0)
    for c in (0.1, 7.0):
        scaled = np.argmin([wishart_distance(c * field, c * s) for s in centers], axis=0)
        assert np.array_equal(base, scaled)


def test_fixed_point_init_returns_in_one_iteration():
    field = np.empty((2, 10, 3, 3), complex)
    field[0] = np.diag([1.0, 0.01, 0.01])
    field[1] = np.diag([0.01, 1.0, 0.01])
    init = ScatteringLabelMap(np.repeat([[0], [1]], 10, axis=1).astype(np.uint8), 9, "h-alpha")
    out = wishart_classify(field, init)
    assert np.array_equal(out.labels, init.labels)
    assert out.meta["iterations"] == 1


def test_degenerate_single_class_flagged():
    field = np.broadcast_to(np.eye(3, dtype=complex), (4, 4, 3, 3)).copy()
    init = ScatteringLabelMap(np.zeros((4, 4), np.uint8), 9, "h-alpha")
    assert wishart_classify(field, init).meta["degenerate"]


def mechanism_scene(seed, size=96):
    third = size // 3
    regions = [((0, 0, size, third), 0), ((0, third, size, 2 * third), 1), ((0, 2 * third, size, size), 2)]
    mechs = [PRESETS["surface"], PRESETS["double-bounce"], PRESETS["volume"]]
    lay = SceneLayout(size, size, regions, {c: ClassSpec([(c, 1.0)]) for c in range(3)}, mechs)
    return generate_polsar_scene(lay, seed)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_wishart_recovers_three_mechanisms(seed):
    scene = mechanism_scene(seed)
    field = estimate_coherency(scene, 7)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        init = halpha_labels(field)
    out = wishart_classify(field, init, max_iter=10)
    assert out.meta["iterations"] <= 10
    assert len(out.meta["changed"]) == out.meta["iterations"]
    assert majority_agreement(scene.mechanism.ravel(), out.labels.ravel().astype(int)) >= 0.95


# ---------------------------------------------------------------- filter banks

def test_all_pass_bank():
    bank = build_filter_bank(1, 1, 1.0)
    assert np.all(bank.windows((8, 6)) == 1)


def test_three_by_three_bank_tiles_spectrum():
    bank = build_filter_bank(3, 3, 1 / 3)
    w = bank.windows((12, 12))
    assert set(np.unique(w)) <= {0.0, 1.0}
    assert np.all(w.sum(axis=0) == 1)


@pytest.mark.parametrize("n", [1, 3, 5])
def test_centers_symmetric(n):
    bank = build_filter_bank(n, n, 1.0 / n)
    assert np.allclose(bank.centers_r, -np.array(bank.centers_r)[::-1])


def test_overlap_beyond_full_rejected():
    with pytest.raises(ValueError, match="overlap"):
        build_filter_bank(5, 5, 0.9)


@pytest.mark.parametrize("bw", [0.0, 1.5])
def test_bad_bandwidth_rejected(bw):
    with pytest.raises(ValueError, match="bandwidth"):
        build_filter_bank(1, 1, bw)


# ---------------------------------------------------------------- sub-band patterns

def test_zero_image_zero_pattern():
    bank = build_filter_bank(3, 3, 1 / 3)
    assert np.all(subband_pattern(ComplexImage(np.zeros((32, 32))), 16, 16, 16, bank) == 0)


def test_impulse_pattern_flat():
    bank = build_filter_bank(3, 3, 1 / 3)
    img = np.zeros((32, 32), complex)
    img[16, 16] = 1.0
    pat = subband_pattern(ComplexImage(img), 16, 16, 12, bank)
    assert np.allclose(pat, pat[0], rtol=1e-12)


@pytest.mark.parametrize("band", [(0, 0), (0, 2), (1, 1), (2, 0)])
def test_complex_exponential_peaks_in_its_band(band):
    bank = build_filter_bank(3, 3, 1 / 3)
    fr, fa = bank.centers_r[band[0]], bank.centers_a[band[1]]
    rows, cols = np.mgrid[0:48, 0:48]
    img = np.exp(2j * np.pi * (fa * rows + fr * cols))
    pat = subband_pattern(ComplexImage(img), 24, 24, 24, bank).reshape(3, 3)
    assert np.unravel_index(np.argmax(pat), pat.shape) == band
    assert pat[band] > pat.sum() - pat[band]


@given(st.integers(0, 2**31 - 1), st.sampled_from([8, 12, 15, 16]))
def test_all_pass_pattern_is_center_magnitude(seed, size):
    r = np.random.default_rng(seed)
    img = r.standard_normal((24, 24)) + 1j * r.standard_normal((24, 24))
    pat = subband_pattern(ComplexImage(img), 12, 12, size, build_filter_bank(1, 1, 1.0))
    assert abs(pat[0] - abs(img[12, 12])) <= 1e-12 * abs(img[12, 12])


@given(st.integers(0, 2**31 - 1), st.sampled_from([(2, 0.5), (3, 1 / 3), (4, 0.25)]))
def test_disjoint_bank_conserves_energy(seed, nb):
    n, bw = nb
    r = np.random.default_rng(seed)
    seg = r.standard_normal((24, 24)) + 1j * r.standard_normal((24, 24))
    e = subband_energies(seg, build_filter_bank(n, n, bw))
    total = np.sum(np.abs(seg) ** 2)
    assert abs(e.sum() - total) <= 1e-9 * total


def test_batched_patterns_match_single(rng):
    img = ComplexImage(rng.standard_normal((40, 40)) + 1j * rng.standard_normal((40, 40)))
    bank = build_filter_bank(3, 3, 0.3, "raised-cosine")
    pts = [(10, 12), (20, 20), (25, 30)]
    batch = subband_patterns(img, pts, 16, bank)
    for p, row in zip(pts, batch):
        assert np.allclose(row, subband_pattern(img, *p, 16, bank), rtol=1e-10, atol=1e-12)


def test_border_segment_flagged():
    img = ComplexImage(np.ones((16, 16)))
    with pytest.warns(RuntimeWarning, match="zero-padded"):
        subband_pattern(img, 1, 1, 8, build_filter_bank(1, 1, 1.0))


# ---------------------------------------------------------------- TFA label maps

def two_type_scene(seed=0, size=64):
    bank = build_filter_bank(3, 3, 1 / 3)
    r = np.random.default_rng(seed)
    sig_a, sig_b = np.zeros((3, 3)), np.zeros((3, 3))
    sig_a[0, 0], sig_b[2, 2] = 1.0, 1.0
    targets = [PointTarget(i, j, r.standard_normal() + 1j * r.standard_normal(),
                           sig_a if j < size // 2 else sig_b)
               for i in range(size) for j in range(size)]
    lay = SceneLayout(size, size, [((0, 0, size, size), 0)],
                      {0: ClassSpec([], background_power=0.0, targets=targets)})
    return generate_slc_scene(lay, seed, bank), bank


def test_tfa_separates_two_target_types():
    img, bank = two_type_scene()
    lm = tfa_label_map(img, bank, segment_size=8, stride=2, n_clusters=2, seed=0)
    cols = np.array(lm.meta["grid_cols"])
    truth = np.broadcast_to(cols[None, :] >= img.width // 2, lm.labels.shape).astype(int)
    assert matched_agreement(truth.ravel(), lm.labels.ravel()) >= 0.98


def test_tfa_constant_image_single_cluster():
    lm = tfa_label_map(ComplexImage(np.ones((32, 32))), build_filter_bank(3, 3, 1 / 3), 8, 4, n_clusters=3)
    assert np.unique(lm.labels).size == 1


def test_tfa_seeded():
    img, bank = two_type_scene(1, 32)
    a = tfa_label_map(img, bank, 8, 4, n_clusters=4, seed=3)
    b = tfa_label_map(img, bank, 8, 4, n_clusters=4, seed=3)
    assert np.array_equal(a.labels, b.labels)
    assert a.n_classes == 4 and a.provenance == "tfa-kmeans"


def test_tfa_too_few_grid_points():
    with pytest.raises(ValueError, match="clusters"):
        tfa_label_map(ComplexImage(np.ones((16, 16))), build_filter_bank(1, 1, 1.0), 16, 4, n_clusters=15)


def test_tfa_joint_maps_share_clusters():
    img, bank = two_type_scene(2, 32)
    maps = tfa_label_maps([img, img], bank, 8, 4, n_clusters=2, seed=0, fit=[True, False])
    assert np.array_equal(maps[0].labels, maps[1].labels)
