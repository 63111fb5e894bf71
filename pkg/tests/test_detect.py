import numpy as np
import pytest

from phantoms import blob_field, single_blob
from volkey.detect import detect_keypoints, extract_extrema, sum_of_signs_map
from volkey.errors import ParameterError
from volkey.scalespace import build_dog_pyramid, build_gaussian_pyramid
from volkey.volume import Volume


def brute_force_extrema(prev, cur, nxt):
    """Voxels strictly greater (resp. smaller) than all 80 neighbors."""
    peaks, valleys = [], []
    nx, ny, nz = cur.shape
    p, c, n = prev.tolist(), cur.tolist(), nxt.tolist()
    for x in range(1, nx - 1):
        for y in range(1, ny - 1):
            for z in range(1, nz - 1):
                v = c[x][y][z]
                is_peak = True
                is_valley = True
                for vol, is_cur in ((p, False), (c, True), (n, False)):
                    for dx in (-1, 0, 1):
                        for dy in (-1, 0, 1):
                            for dz in (-1, 0, 1):
                                if is_cur and dx == dy == dz == 0:
                                    continue
                                w = vol[x + dx][y + dy][z + dz]
                                if w >= v:
                                    is_peak = False
                                if w <= v:
                                    is_valley = False
                    if not is_peak and not is_valley:
                        break
                if is_peak:
                    peaks.append((x, y, z))
                if is_valley:
                    valleys.append((x, y, z))
    return set(peaks), set(valleys)


def brute_force_sum_of_signs(prev, cur, nxt, x, y, z):
    total = 0
    for vol, is_cur in ((prev, False), (cur, True), (nxt, False)):
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    if is_cur and dx == dy == dz == 0:
                        continue
                    diff = cur[x, y, z] - vol[x + dx, y + dy, z + dz]
                    total += int(np.sign(diff))
    return total


def random_triple(rng, dims):
    return tuple(Volume(rng.random(dims, dtype=np.float32)) for _ in range(3))


class TestSumOfSigns:
    def test_strict_maximum_scores_80(self):
        arr = np.zeros((5, 5, 5), dtype=np.float32)
        arr[2, 2, 2] = 1.0
        cur = Volume(arr)
        flat = Volume(np.zeros((5, 5, 5), dtype=np.float32))
        m = sum_of_signs_map(flat, cur, flat)
        assert m[2, 2, 2] == 80
        assert abs(m).max() <= 80

    def test_constant_triple_is_zero(self):
        flat = Volume(np.full((6, 6, 6), 2.0, dtype=np.float32))
        assert np.all(sum_of_signs_map(flat, flat, flat) == 0)

    def test_matches_brute_force(self, rng):
        prev, cur, nxt = random_triple(rng, (8, 8, 8))
        m = sum_of_signs_map(prev, cur, nxt)
        for x in range(1, 7):
            for y in range(1, 7):
                for z in range(1, 7):
                    want = brute_force_sum_of_signs(prev.data, cur.data, nxt.data, x, y, z)
                    assert m[x, y, z] == want

    def test_dim_mismatch(self, rng):
        a = Volume(rng.random((4, 4, 4), dtype=np.float32))
        b = Volume(rng.random((4, 4, 5), dtype=np.float32))
        with pytest.raises(ParameterError):
            sum_of_signs_map(a, a, b)

    def test_workers_identical(self, rng):
        prev, cur, nxt = random_triple(rng, (12, 11, 10))
        assert np.array_equal(
            sum_of_signs_map(prev, cur, nxt, workers=1),
            sum_of_signs_map(prev, cur, nxt, workers=4),
        )


class TestExtractExtrema:
    def test_band_zero_only_strict(self, rng):
        prev, cur, nxt = random_triple(rng, (10, 10, 10))
        m = sum_of_signs_map(prev, cur, nxt)
        kps = extract_extrema(m, cur, threshold_band=0, contrast_min=0.0)
        peaks, valleys = brute_force_extrema(prev.data, cur.data, nxt.data)
        got_peaks = {tuple(int(v) for v in k.position) for k in kps if k.sign == "peak"}
        got_valleys = {tuple(int(v) for v in k.position) for k in kps if k.sign == "valley"}
        assert got_peaks == peaks
        assert got_valleys == valleys

    def test_constant_empty(self):
        flat = Volume(np.zeros((6, 6, 6), dtype=np.float32))
        m = sum_of_signs_map(flat, flat, flat)
        for band in (0, 20, 80):
            assert extract_extrema(m, flat, band, 0.0) == []

    def test_band_monotonicity(self, rng):
        prev, cur, nxt = random_triple(rng, (10, 10, 10))
        m = sum_of_signs_map(prev, cur, nxt)
        prev_set = set()
        for band in (0, 2, 6, 12):
            got = {(k.position, k.sign) for k in extract_extrema(m, cur, band, 0.0)}
            assert prev_set <= got
            prev_set = got

    def test_octave_rescaling(self):
        arr = np.zeros((5, 5, 5), dtype=np.float32)
        arr[2, 2, 2] = 1.0
        cur = Volume(arr)
        flat = Volume(np.zeros((5, 5, 5), dtype=np.float32))
        m = sum_of_signs_map(flat, cur, flat)
        (kp,) = extract_extrema(m, cur, 0, 0.0, octave=2, level=1, sigma_local=2.0)
        assert kp.position == (9.5, 9.5, 9.5)  # 4 * 2 + 1.5 voxel-center offset
        assert kp.sigma == pytest.approx(8.0)

    def test_contrast_filter(self, rng):
        prev, cur, nxt = random_triple(rng, (10, 10, 10))
        m = sum_of_signs_map(prev, cur, nxt)
        all_kps = extract_extrema(m, cur, 0, 0.0)
        strong = extract_extrema(m, cur, 0, 0.5)
        assert {(k.position, k.sign) for k in strong} <= {(k.position, k.sign) for k in all_kps}
        assert all(abs(k.dog_value) >= 0.5 for k in strong)

    def test_invalid_band(self, rng):
        flat = Volume(np.zeros((5, 5, 5), dtype=np.float32))
        m = sum_of_signs_map(flat, flat, flat)
        for band in (-1, 81):
            with pytest.raises(ParameterError):
                extract_extrema(m, flat, band, 0.0)


def extract_pipeline(vol, **kwargs):
    pyr = build_gaussian_pyramid(vol, **kwargs)
    return detect_keypoints(build_dog_pyramid(pyr))


class TestDetectKeypoints:
    def test_all_zero_pyramid_empty(self):
        assert extract_pipeline(Volume(np.zeros((32, 32, 32), dtype=np.float32))) == []

    def test_oracle_equivalence_on_random_triples(self, rng):
        for _ in range(5):
            prev, cur, nxt = random_triple(rng, (12, 12, 12))
            m = sum_of_signs_map(prev, cur, nxt)
            kps = extract_extrema(m, cur, 0, 0.0)
            peaks, valleys = brute_force_extrema(prev.data, cur.data, nxt.data)
            got_p = {tuple(int(v) for v in k.position) for k in kps if k.sign == "peak"}
            got_v = {tuple(int(v) for v in k.position) for k in kps if k.sign == "valley"}
            assert got_p == peaks and got_v == valleys

    def test_blob_detection(self):
        for sigma_blob in (3.0, 4.0):
            vol = single_blob((64, 64, 64), (32, 32, 32), sigma_blob)
            kps = extract_pipeline(vol)
            assert kps
            best = max(kps, key=lambda k: abs(k.dog_value))
            assert best.sign == "peak"
            assert np.linalg.norm(np.array(best.position) - 32.0) <= 1.0
            assert abs(best.sigma - sigma_blob) / sigma_blob <= 0.25

    def test_two_blobs_ordered_sigmas(self):
        field = blob_field((72, 72, 72), [(20, 20, 20), (52, 52, 52)], [3.0, 6.0], [1.0, 1.0])
        kps = extract_pipeline(Volume(field))
        near_small = [k for k in kps if np.linalg.norm(np.array(k.position) - 20.0) <= 3.0]
        near_big = [k for k in kps if np.linalg.norm(np.array(k.position) - 52.0) <= 3.0]
        assert near_small and near_big
        best_small = max(near_small, key=lambda k: abs(k.dog_value))
        best_big = max(near_big, key=lambda k: abs(k.dog_value))
        assert best_small.sigma < best_big.sigma

    def test_polarity_symmetry(self, rng):
        from phantoms import random_blob_phantom

        vol = random_blob_phantom((40, 40, 40), rng, n_blobs=6, margin=8)
        pos = extract_pipeline(vol)
        neg = extract_pipeline(Volume(-vol.data))
        assert len(pos) == len(neg)
        flip = {"peak": "valley", "valley": "peak"}
        for a, b in zip(pos, neg):
            assert a.position == b.position
            assert a.sigma == b.sigma
            assert flip[a.sign] == b.sign

    def test_translation_covariance(self, rng):
        from phantoms import random_blob_phantom

        base = random_blob_phantom((56, 56, 56), rng, n_blobs=6, margin=20, sigma_range=(2.0, 3.5))
        shift = (3, 2, 1)
        shifted = Volume(np.roll(base.data, shift, axis=(0, 1, 2)))
        kp0 = [k for k in extract_pipeline(base) if k.octave == 0]
        kp1 = [k for k in extract_pipeline(shifted) if k.octave == 0]
        margin = 18
        inner0 = {
            (k.position, k.level, k.sign)
            for k in kp0
            if all(margin <= c < 56 - margin for c in k.position)
        }
        moved = {
            ((p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]), lvl, s)
            for (p, lvl, s) in inner0
        }
        got = {(k.position, k.level, k.sign) for k in kp1}
        assert inner0 and moved <= got

    def test_brain_scale_keypoint_count_report(self, rng):
        # Informational: a (145, 174, 145) textured volume at defaults should
        # produce keypoints on the order of thousands (reported, not asserted).
        from phantoms import kernel_soup_field, soup_params

        dims = (145, 174, 145)
        centers, sigmas, amps = soup_params(dims, rng)
        field = kernel_soup_field(dims, centers, sigmas, amps)
        vol = Volume(field + rng.normal(0, 0.01, dims).astype(np.float32))
        pyr = build_gaussian_pyramid(vol, workers=2)
        kps = detect_keypoints(build_dog_pyramid(pyr), workers=2)
        print(f"\n[report] keypoints on (145, 174, 145) phantom at defaults: {len(kps)}")
        assert pyr.num_octaves == 6

    def test_deterministic_ordering(self, rng):
        from phantoms import random_blob_phantom

        vol = random_blob_phantom((40, 40, 40), rng, n_blobs=8, margin=6)
        pyr = build_gaussian_pyramid(vol)
        dog = build_dog_pyramid(pyr)
        a = detect_keypoints(dog, workers=1)
        b = detect_keypoints(dog, workers=4)
        assert a == b
        keys = [(k.octave, k.level, k.position[2], k.position[1], k.position[0]) for k in a]
        assert keys == sorted(keys)
