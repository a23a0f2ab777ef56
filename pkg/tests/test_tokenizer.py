import numpy as np
import pytest

from maskint.errors import CapacityError, ContractError, GeometryError, IncompleteGridError, TokenIndexError
from maskint.synthetic import ClipSpec, ShapeSpec, gen_clip, random_clip_spec
from maskint.tokenizer import (
    Codebook,
    TokenGrid,
    TokenizerConfig,
    collect_patches,
    decode,
    encode,
    encode_clip,
    fit_codebook,
    fit_tokenizers,
    patchify,
    reconstruction_mse,
    unpatchify,
)


@pytest.fixture
def small_codebook():
    # 2x2 structure patches: four flat levels and a checkerboard
    entries = np.array(
        [
            [0.0, 0.0, 0.0, 0.0],
            [0.25, 0.25, 0.25, 0.25],
            [0.5, 0.5, 0.5, 0.5],
            [1.0, 1.0, 1.0, 1.0],
            [1.0, 0.0, 0.0, 1.0],
        ]
    )
    return Codebook(entries, "structure", (2, 2))


def test_fit_codebook_exact_cover():
    patches = np.array([[0.0, 0.0, 0.0, 0.0], [0.5, 0.25, 0.0, 1.0], [1.0, 1.0, 0.75, 0.0]])
    codebook = fit_codebook(np.repeat(patches, 3, axis=0), 3, "structure", (2, 2), seed=4)
    found = sorted(map(tuple, codebook.entries.astype(np.float64)))
    assert found == sorted(map(tuple, patches))
    assert codebook.inertia == pytest.approx(0.0, abs=1e-12)


def test_fit_codebook_two_blobs(rng):
    means = np.array([[0.2] * 4, [0.8] * 4])
    blobs = [m + 0.02 * rng.normal(size=(200, 4)) for m in means]
    codebook = fit_codebook(np.concatenate(blobs), 2, "structure", (2, 2), seed=0)
    truth = np.array([b.mean(axis=0) for b in blobs])
    for entry in codebook.entries:
        assert np.abs(truth - entry).max(axis=1).min() < 0.05


def test_fit_codebook_beats_random_subset(rng):
    patches = rng.uniform(size=(300, 4))
    codebook = fit_codebook(patches, 8, "structure", (2, 2), seed=1)
    subset = patches[rng.choice(len(patches), 8, replace=False)]
    subset_inertia = ((patches[:, None, :] - subset[None]) ** 2).sum(-1).min(axis=1).sum()
    assert codebook.inertia <= subset_inertia
    assert len(np.unique(codebook.entries, axis=0)) == 8


def test_fit_codebook_capacity_error():
    patches = np.tile([[0.1, 0.2, 0.3, 0.4], [0.5, 0.5, 0.5, 0.5]], (10, 1))
    with pytest.raises(CapacityError):
        fit_codebook(patches, 3, "structure", (2, 2))


def test_fit_codebook_is_seeded(rng):
    patches = rng.uniform(size=(200, 4))
    first = fit_codebook(patches, 6, "structure", (2, 2), seed=3)
    second = fit_codebook(patches, 6, "structure", (2, 2), seed=3)
    assert first.entries.tobytes() == second.entries.tobytes()


def test_encode_tiled_frame_recovers_indices(small_codebook, rng):
    indices = rng.integers(0, small_codebook.size, size=(1, 3, 4))
    frame = decode(TokenGrid(indices, small_codebook.size, "structure"), small_codebook)
    assert frame.shape == (1, 6, 8, 1)
    tokens = encode(frame[0], small_codebook)
    np.testing.assert_array_equal(tokens.indices, indices)
    # decode(encode(x)) is bit-exact on centroid-composed frames:
    np.testing.assert_array_equal(decode(tokens, small_codebook), frame)


def test_encode_zero_frame(small_codebook):
    tokens = encode(np.zeros((4, 4)), small_codebook)
    assert tokens.shape == (1, 2, 2)
    assert (tokens.indices == 0).all()


def test_encode_matches_brute_force(small_codebook, rng):
    frame = rng.uniform(size=(6, 6))
    tokens = encode(frame, small_codebook).indices[0]
    for r in range(3):
        for c in range(3):
            patch = frame[2 * r : 2 * r + 2, 2 * c : 2 * c + 2].reshape(-1)
            distances = [np.sum((patch - e) ** 2) for e in small_codebook.entries.astype(np.float64)]
            assert tokens[r, c] == int(np.argmin(distances))


def test_encode_ties_break_to_lowest_index():
    entries = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    codebook = Codebook(entries, "structure", (2, 2))
    # equidistant from both entries
    assert encode(np.zeros((2, 2)), codebook).indices[0, 0, 0] == 0


def test_encode_geometry_error(small_codebook):
    with pytest.raises(GeometryError):
        encode(np.zeros((5, 4)), small_codebook)


def test_encode_channel_mismatch(small_codebook):
    with pytest.raises(ContractError):
        encode(np.zeros((4, 4, 3)), small_codebook)


def test_decode_all_zero_grid_is_tiling_of_entry_zero(small_codebook):
    grid = TokenGrid(np.zeros((2, 2, 3), dtype=np.int64), small_codebook.size, "structure")
    frames = decode(grid, small_codebook)
    np.testing.assert_array_equal(frames, np.zeros((2, 4, 6, 1)))


def test_decode_rejects_masked_grid(small_codebook):
    mask = np.zeros((1, 2, 2), dtype=bool)
    mask[0, 1, 1] = True
    grid = TokenGrid(np.zeros((1, 2, 2), dtype=np.int64), small_codebook.size, "structure", mask)
    assert grid.indices[0, 1, 1] == grid.mask_id == small_codebook.size
    with pytest.raises(IncompleteGridError):
        decode(grid, small_codebook)


def test_decode_rejects_other_channel(small_codebook):
    grid = TokenGrid(np.zeros((1, 2, 2), dtype=np.int64), small_codebook.size, "color")
    with pytest.raises(ContractError):
        decode(grid, small_codebook)


def test_token_grid_rejects_out_of_range_ids():
    with pytest.raises(TokenIndexError):
        TokenGrid(np.full((1, 2, 2), 5), 5, "color")
    with pytest.raises(GeometryError):
        TokenGrid(np.zeros((2, 2)), 5, "color")


def test_reconstruction_not_worse_than_single_entry(small_codebook, rng):
    frames = rng.uniform(size=(2, 4, 4))
    mse = reconstruction_mse(frames, small_codebook)
    for entry in small_codebook.entries.astype(np.float64):
        tiled = np.tile(entry.reshape(2, 2), (2, 2, 2)).reshape(2, 4, 4)
        assert mse <= np.mean((frames - tiled) ** 2) + 1e-12


def test_encode_decode_identity_on_grids(tiny_codebooks, rng):
    codebook = tiny_codebooks["color"]
    indices = rng.integers(0, codebook.size, size=(2, 4, 4))
    grid = TokenGrid(indices, codebook.size, "color")
    np.testing.assert_array_equal(encode_clip(decode(grid, codebook), codebook).indices, indices)


def test_encoding_ignores_memory_layout(tiny_codebooks, moving_square_clip):
    frames, maps = moving_square_clip
    for channel, stack in [("color", frames), ("structure", maps)]:
        codebook = tiny_codebooks[channel]
        expected = encode_clip(stack, codebook).indices
        np.testing.assert_array_equal(encode_clip(np.asfortranarray(stack), codebook).indices, expected)


def test_patchify_round_trip(rng):
    frames = rng.uniform(size=(2, 8, 12, 3))
    patches = patchify(frames, (4, 4))
    assert patches.shape == (2, 2, 3, 48)
    np.testing.assert_array_equal(patches[1, 1, 2].reshape(4, 4, 3), frames[1, 4:8, 8:12])
    np.testing.assert_array_equal(unpatchify(patches, (4, 4), 3), frames)


def test_collect_patches_subsampling_is_seeded(moving_square_clip):
    frames, _ = moving_square_clip
    first = collect_patches(frames, "color", (4, 4), max_patches=10, rng=np.random.default_rng(0))
    second = collect_patches(frames, "color", (4, 4), max_patches=10, rng=np.random.default_rng(0))
    assert first.shape == (10, 48)
    np.testing.assert_array_equal(first, second)


def test_reconstruction_error_decreases_with_codebook_size():
    clips = [
        gen_clip(
            random_clip_spec(np.random.default_rng(i), n_frames=4, height=32, width=32, noise=0.05, seed=i)
        )[0]
        for i in range(4)
    ]
    patches = np.concatenate([collect_patches(c, "color") for c in clips])
    errors = [
        np.mean([reconstruction_mse(c, fit_codebook(patches, m, "color", seed=0)) for c in clips])
        for m in [8, 32, 64]
    ]
    assert errors[0] >= errors[1] >= errors[2]


def test_fit_tokenizers_channels(tiny_codebooks):
    assert tiny_codebooks["color"].size == 16
    assert tiny_codebooks["color"].patch_dim == 48
    assert tiny_codebooks["structure"].size == 8
    assert tiny_codebooks["structure"].patch_dim == 16
    assert not tiny_codebooks["color"].entries.flags.writeable


def test_fit_tokenizers_is_deterministic(moving_square_clip):
    frames, maps = moving_square_clip
    square = ShapeSpec(kind="disk", position=(0, 0), size=(8, 8), velocity=(2, 2), color=(0.2, 0.9, 0.3))
    other_frames, other_maps = gen_clip(ClipSpec(n_frames=4, height=16, width=16, shapes=(square,), noise=0.1))
    config = TokenizerConfig(color_vocab=8, structure_vocab=4, max_patches=50)
    first = fit_tokenizers([frames, other_frames], [maps, other_maps], config, seed=2)
    second = fit_tokenizers([frames, other_frames], [maps, other_maps], config, seed=2)
    for channel in ["color", "structure"]:
        assert first[channel].entries.tobytes() == second[channel].entries.tobytes()


def test_codebook_contract():
    with pytest.raises(ContractError):
        Codebook(np.zeros((1, 4)), "structure", (2, 2))
    with pytest.raises(ContractError):
        Codebook(np.zeros((3, 5)), "structure", (2, 2))
    with pytest.raises(ContractError):
        Codebook(np.zeros((3, 4)), "depth", (2, 2))
