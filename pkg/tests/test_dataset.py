import gzip
import io
import itertools
import struct

import numpy as np
import pytest

from qgcn.dataset import (
    ArtifactError,
    BadMagicError,
    CountMismatchError,
    InsufficientSamplesError,
    RawImage,
    TruncatedError,
    build_graph,
    build_sampleset,
    downsample_8x8,
    image_features,
    load_idx,
    parse_idx,
    patch_edges,
    patchify,
    read_artifact,
    write_artifact,
    write_idx,
)


def idx_pair(images, labels, image_magic=0x803, label_magic=0x801, n_labels=None):
    """Hand-assembled IDX bytes, independent of the library's writer."""
    images = np.asarray(images, dtype=np.uint8)
    img = struct.pack(">IIII", image_magic, len(images), 28, 28) + images.tobytes()
    n = len(labels) if n_labels is None else n_labels
    lab = struct.pack(">II", label_magic, n) + bytes(labels)
    return img, lab


def raw_images(digits, seed=0, low=1):
    rng = np.random.default_rng(seed)
    return [RawImage(rng.integers(low, 256, (28, 28), dtype=np.uint8), d) for d in digits]


def block_mean_oracle(px):
    out = np.zeros((8, 8))
    for r in range(8):
        for c in range(8):
            total = 0.0
            for i in range(4 * r - 2, 4 * r + 2):
                for j in range(4 * c - 2, 4 * c + 2):
                    if 0 <= i < 28 and 0 <= j < 28:
                        total += px[i, j]
            out[r, c] = total / 16 / 255
    return out


class TestIdx:
    def test_single_zero_image(self):
        img, lab = idx_pair(np.zeros((1, 28, 28)), [3])
        (raw,) = parse_idx(img, lab)
        assert raw.label == 3
        assert raw.pixels.shape == (28, 28) and not raw.pixels.any()

    def test_count_mismatch(self):
        img, lab = idx_pair(np.zeros((2, 28, 28)), [3])
        with pytest.raises(CountMismatchError, match="2.*1"):
            parse_idx(img, lab)

    @pytest.mark.parametrize("which", ["images", "labels"])
    def test_bad_magic(self, which):
        kwargs = {"image_magic": 0x804} if which == "images" else {"label_magic": 0x804}
        img, lab = idx_pair(np.zeros((1, 28, 28)), [3], **kwargs)
        with pytest.raises(BadMagicError, match="0x00000804"):
            parse_idx(img, lab)

    def test_truncated_payload(self):
        img, lab = idx_pair(np.zeros((2, 28, 28)), [3, 6])
        with pytest.raises(TruncatedError, match="offset"):
            parse_idx(img[:-10], lab)
        with pytest.raises(TruncatedError):
            parse_idx(img, lab[:-1])

    def test_truncated_header(self):
        with pytest.raises(TruncatedError):
            parse_idx(b"\x00\x00\x08", b"")

    def test_errors_are_distinct(self):
        assert len({BadMagicError, TruncatedError, CountMismatchError}) == 3
        assert not issubclass(BadMagicError, TruncatedError)

    def test_round_trip_and_streams(self, tmp_path):
        images = np.random.default_rng(0).integers(0, 256, (5, 28, 28), dtype=np.uint8)
        labels = [0, 3, 6, 9, 3]
        img, lab = write_idx(images, labels)
        assert (img, lab) == idx_pair(images, labels)
        (tmp_path / "i.gz").write_bytes(gzip.compress(img))
        (tmp_path / "l").write_bytes(lab)
        for raws in (parse_idx(io.BytesIO(img), io.BytesIO(lab)), load_idx(tmp_path / "i.gz", tmp_path / "l")):
            assert [r.label for r in raws] == labels
            np.testing.assert_array_equal(np.stack([r.pixels for r in raws]), images)

    def test_raw_image_validation(self):
        with pytest.raises(ValueError):
            RawImage(np.zeros((27, 28), dtype=np.uint8), 3)
        with pytest.raises(ValueError):
            RawImage(np.zeros((28, 28), dtype=np.uint8), 10)


class TestDownsample:
    def test_all_zero(self):
        np.testing.assert_array_equal(downsample_8x8(np.zeros((28, 28))), np.zeros((8, 8)))

    def test_all_white_borders(self):
        grid = downsample_8x8(np.full((28, 28), 255))
        np.testing.assert_allclose(grid[1:7, 1:7], 1.0)
        # a corner block holds 2x2 image pixels and 12 padding zeros
        for r, c in itertools.product((0, 7), (0, 7)):
            assert grid[r, c] == pytest.approx(0.25)
        # a non-corner border block holds 2 image rows of 4
        assert grid[0, 3] == pytest.approx(0.5) and grid[4, 7] == pytest.approx(0.5)

    def test_single_pixel(self):
        px = np.zeros((28, 28))
        px[0, 0] = 255
        grid = downsample_8x8(px)
        assert np.count_nonzero(grid) == 1
        assert grid[0, 0] == pytest.approx(0.0625)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_loop_oracle(self, seed):
        px = np.random.default_rng(seed).integers(0, 256, (28, 28))
        np.testing.assert_allclose(downsample_8x8(px), block_mean_oracle(px), atol=1e-12)

    def test_batch_features_match_per_image(self):
        raws = raw_images([3, 6, 3], low=0)
        feats = image_features(np.stack([r.pixels for r in raws]), (0, 2, 3))
        for k, r in enumerate(raws):
            patches = patchify(downsample_8x8(r))
            np.testing.assert_allclose(feats[k], np.stack([patches[p] for p in (0, 2, 3)]))
        assert feats.min() >= 0 and feats.max() <= 1


class TestPatches:
    def test_top_left(self):
        grid = np.zeros((8, 8))
        grid[:4, :4] = 1
        p = patchify(grid)
        np.testing.assert_array_equal(p[0], np.ones(16))
        assert not any(q.any() for q in p[1:])

    def test_bottom_right_is_patch_two(self):
        grid = np.zeros((8, 8))
        grid[6, 5] = 1
        assert [bool(q.any()) for q in patchify(grid)] == [False, False, True, False]

    def test_clockwise_numbering(self):
        grid = np.zeros((8, 8))
        grid[0, 7], grid[7, 0] = 1, 2
        p = patchify(grid)
        assert p[1][3] == 1 and p[3][12] == 2

    def test_constant(self):
        p = patchify(np.full((8, 8), 0.3))
        assert all(np.array_equal(p[0], q) for q in p)


class TestGraph:
    @pytest.mark.parametrize(
        "ids, edges",
        [((0, 2, 3), [(2, 3), (0, 3)]), ((0, 1, 2), [(0, 1), (1, 2)]), ((0, 1, 3), [(0, 1), (0, 3)]), ((1, 2, 3), [(1, 2), (2, 3)])],
    )
    def test_side_adjacency(self, ids, edges):
        assert sorted(patch_edges(ids)) == sorted(edges)

    def test_all_three_subsets_edge_count(self):
        table = {(0, 1), (1, 2), (2, 3), (0, 3)}
        for ids in itertools.combinations(range(4), 3):
            expected = sum(tuple(sorted(p)) in table for p in itertools.combinations(ids, 2))
            assert len(patch_edges(ids)) == expected

    def test_experiment_graph(self):
        grid = np.random.default_rng(0).uniform(size=(8, 8))
        g = build_graph((0, 2, 3), patchify(grid))
        assert g.node_ids == (0, 2, 3)
        assert g.edges == ((0, 2), (1, 2))  # patch 3 is node 2
        assert (0, 1) not in g.edges

    @pytest.mark.parametrize("ids", [(0, 0, 2), (0, 2, 4), (-1, 1, 2)])
    def test_bad_ids(self, ids):
        with pytest.raises(ValueError):
            build_graph(ids, patchify(np.ones((8, 8))))


class TestSampleSet:
    def test_tiny_balanced(self):
        train, test = build_sampleset(raw_images([3, 3, 6, 6]), sizes=(2, 2))
        assert train.class_counts() == {1: 1, -1: 1} and test.class_counts() == {1: 1, -1: 1}
        assert not set(train.source_indices) & set(test.source_indices)

    def test_other_digits_ignored(self):
        raws = raw_images([7, 3, 7, 6, 3, 6, 7, 1])
        train, test = build_sampleset(raws, sizes=(2, 2))
        chosen = set(train.source_indices) | set(test.source_indices)
        assert chosen == {1, 3, 4, 5}
        assert all(raws[i].label in (3, 6) for i in chosen)

    def test_labels_signs(self):
        raws = raw_images([3, 6] * 10)
        train, test = build_sampleset(raws, sizes=(8, 4))
        for s in (train, test):
            for i, lab in zip(s.source_indices, s.labels):
                assert lab == (1 if raws[i].label == 3 else -1)
            assert s.features.shape[1:] == (3, 16)
            assert len(s.samples) == len(s)

    def test_deterministic(self):
        raws = raw_images([3, 6] * 20)
        a, b = build_sampleset(raws, seed=5, sizes=(10, 6)), build_sampleset(raws, seed=5, sizes=(10, 6))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)
            np.testing.assert_array_equal(x.source_indices, y.source_indices)
        c = build_sampleset(raws, seed=6, sizes=(10, 6))
        assert not np.array_equal(a[0].source_indices, c[0].source_indices)

    def test_insufficient(self):
        with pytest.raises(InsufficientSamplesError):
            build_sampleset(raw_images([3, 6, 6, 6]), sizes=(2, 2))

    def test_unbalanced_draw(self):
        train, test = build_sampleset(raw_images([3] * 5 + [6] * 2), sizes=(4, 2), balanced=False)
        assert len(train) == 4 and len(test) == 2

    def test_blank_patch_images_skipped(self):
        raws = raw_images([3, 3, 6, 6, 3])
        raws[0].pixels[:14, :14] = 0  # patch 0 empty: cannot be amplitude encoded
        train, test = build_sampleset(raws, sizes=(2, 2))
        assert 0 not in set(train.source_indices) | set(test.source_indices)


class TestArtifact:
    def sets(self):
        return build_sampleset(raw_images([3, 6] * 6), seed=2, sizes=(6, 4))

    def test_round_trip(self, tmp_path):
        train, test = self.sets()
        path = tmp_path / "d.qgcn"
        write_artifact(path, train, test, {"note": "x"})
        tr, te, header = read_artifact(path)
        assert header["counts"] == {"train": 6, "test": 4}
        assert header["seed"] == 2 and header["node_selection"] == [0, 2, 3] and header["format_version"] == 1
        for a, b in ((train, tr), (test, te)):
            np.testing.assert_array_equal(a.features, b.features)
            np.testing.assert_array_equal(a.labels, b.labels)
            np.testing.assert_array_equal(a.source_indices, b.source_indices)
            assert b.edges == a.edges and b.split == a.split
        write_artifact(tmp_path / "again.qgcn", tr, te, {"note": "x"})
        assert (tmp_path / "again.qgcn").read_bytes() == path.read_bytes()

    @pytest.mark.parametrize("cut", [4, 12, 40, -3])
    def test_truncated(self, tmp_path, cut):
        train, test = self.sets()
        path = tmp_path / "d.qgcn"
        write_artifact(path, train, test)
        path.write_bytes(path.read_bytes()[:cut])
        with pytest.raises(ArtifactError):
            read_artifact(path)

    def test_trailing_bytes_and_version(self, tmp_path):
        train, test = self.sets()
        path = tmp_path / "d.qgcn"
        write_artifact(path, train, test)
        data = path.read_bytes()
        path.write_bytes(data + b"\x00")
        with pytest.raises(ArtifactError, match="trailing"):
            read_artifact(path)
        path.write_bytes(data[:8] + struct.pack("<I", 99) + data[12:])
        with pytest.raises(ArtifactError, match="version"):
            read_artifact(path)
