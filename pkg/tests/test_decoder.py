import numpy as np
import pytest
from scipy.special import log_softmax

from maskint.decoder import (
    DecodeConfig,
    DecodeTrace,
    decode_canvas,
    decode_step,
    init_canvas,
    interpolate,
    interpolate_long,
    keep_count,
    keep_schedule,
    raw_masked_count,
    suggest_keyframes,
)
from maskint.errors import ConfigError, ContractError, SegmentationError
from maskint.specs import DECODE_STEPS, DECODE_TEMPERATURE, DECODE_TRACE_COLUMNS
from maskint.tokenizer import TokenGrid, decode, encode
from maskint.transformer import MaskintModel, ModelConfig, ModelParameters


class FixedLogitModel:
    """Logits drawn once per grid shape, independent of the canvas content."""

    def __init__(self, config, seed=0):
        self.config = config
        self.seed = seed
        self.calls = 0

    def __call__(self, color, structure):
        self.calls += 1
        rng = np.random.default_rng(self.seed)
        return rng.normal(size=color.shape + (self.config.color_vocab,))


@pytest.fixture
def long_model_config():
    return ModelConfig(
        n_frames=16,
        grid_height=4,
        grid_width=4,
        color_vocab=16,
        structure_vocab=8,
        embed_dim=16,
        n_heads=2,
        n_layers=2,
        window_height=2,
        window_width=2,
    )


def _canvas(rng, n_frames=4, anchors=(0, 3)):
    anchor_tokens = {a: rng.integers(0, 16, (4, 4)) for a in anchors}
    return init_canvas(anchor_tokens, n_frames, 4, 4, 16), anchor_tokens


def _structure(rng, n_frames=4):
    return TokenGrid(rng.integers(0, 8, (n_frames, 4, 4)), 8, "structure")


def test_default_decode_config():
    config = DecodeConfig()
    assert (config.steps, config.temperature) == (DECODE_STEPS, DECODE_TEMPERATURE) == (32, 4.5)
    assert DecodeConfig(anchors=[3, 0, 3]).anchors == (0, 3)
    with pytest.raises(ConfigError):
        DecodeConfig(steps=0)
    with pytest.raises(ConfigError):
        DecodeConfig(temperature=-1.0)
    with pytest.raises(ConfigError):
        DecodeConfig(anchors=())


def test_init_canvas(rng):
    canvas, anchor_tokens = _canvas(rng, n_frames=6, anchors=(0, 5))
    assert canvas.mask.sum() == 4 * 4 * 4
    np.testing.assert_array_equal(canvas.indices[0], anchor_tokens[0])
    np.testing.assert_array_equal(canvas.indices[5], anchor_tokens[5])
    full, _ = _canvas(rng, n_frames=3, anchors=(0, 1, 2))
    assert full.is_complete
    with pytest.raises(ContractError):
        init_canvas({}, 4, 4, 4, 16)
    with pytest.raises(ContractError):
        init_canvas({4: np.zeros((4, 4), dtype=np.int64)}, 4, 4, 4, 16)
    with pytest.raises(ContractError):
        init_canvas({0: np.zeros((2, 4), dtype=np.int64)}, 4, 4, 4, 16)


def test_cosine_schedule_counts():
    assert [raw_masked_count(k, 4, 192) for k in range(4)] == [177, 135, 73, 0]
    assert keep_schedule(4, 192) == [177, 135, 73, 0]
    assert keep_count(3, 4, 192) == 0
    with pytest.raises(ContractError):
        keep_count(4, 4, 192)


def test_schedule_is_strictly_decreasing():
    for schedule in ["cosine", "linear"]:
        for n_steps in [1, 2, 3, 4, 8, 16, 32, 64]:
            for total in list(range(1, 40)) + list(range(40, 513, 17)):
                counts = keep_schedule(n_steps, total, schedule)
                assert counts[-1] == 0
                assert all(a > b for a, b in zip([total] + counts[:-1], counts))
                assert len(counts) == min(n_steps, total)


def test_default_schedule_has_one_row_per_step():
    counts = keep_schedule(32, 2 * 8 * 8)
    assert len(counts) == 32
    assert counts[-1] == 0


def test_decode_step_keeps_most_confident(rng, tiny_model_config):
    model = FixedLogitModel(tiny_model_config, seed=5)
    canvas, _ = _canvas(rng)
    structure = _structure(rng)
    config = DecodeConfig(steps=4, temperature=0.0)
    trace = DecodeTrace()
    stepped = decode_step(model, canvas, structure, 0, config, rng, trace=trace)

    masked = np.flatnonzero(canvas.mask)
    log_probs = log_softmax(model(canvas, structure).reshape(-1, 16)[masked], axis=-1)
    confidence = log_probs.max(axis=-1)
    n_kept = masked.size - keep_count(0, 4, masked.size)
    expected = set(masked[np.argsort(-confidence, kind="stable")[:n_kept]])
    assert set(trace.records[0]["kept_positions"]) == expected
    committed = np.flatnonzero(canvas.mask & ~stepped.mask)
    assert set(committed) == expected
    np.testing.assert_array_equal(stepped.indices.reshape(-1)[committed], log_probs.argmax(axis=-1)[np.isin(masked, committed)])


def test_single_greedy_step_fills_everything(rng, tiny_model_config):
    model = FixedLogitModel(tiny_model_config)
    canvas, _ = _canvas(rng)
    filled = decode_step(model, canvas, _structure(rng), 0, DecodeConfig(steps=1, temperature=0.0), rng)
    assert filled.is_complete
    greedy = model(canvas, None).argmax(axis=-1)
    np.testing.assert_array_equal(filled.indices[1:3], greedy[1:3])


def test_decoding_never_touches_committed_tokens(rng, tiny_model_config):
    model = FixedLogitModel(tiny_model_config, seed=2)
    canvas, anchor_tokens = _canvas(rng)
    structure = _structure(rng)
    config = DecodeConfig(steps=6, temperature=4.5, seed=3)
    history = [canvas]
    for k in range(config.steps):
        if history[-1].is_complete:
            break
        history.append(decode_step(model, history[-1], structure, k, config, rng, total_masked=32))
    for before, after in zip(history[:-1], history[1:]):
        assert not (after.mask & ~before.mask).any()
        committed = ~before.mask
        np.testing.assert_array_equal(after.indices[committed], before.indices[committed])
        assert after.mask.sum() < before.mask.sum()
    assert history[-1].is_complete
    for frame, tokens in anchor_tokens.items():
        np.testing.assert_array_equal(history[-1].indices[frame], tokens)


def test_decode_canvas_trace(rng, tiny_model_config):
    model = FixedLogitModel(tiny_model_config, seed=4)
    canvas, _ = _canvas(rng)
    trace = DecodeTrace()
    result = decode_canvas(model, canvas, _structure(rng), DecodeConfig(steps=4, seed=0), rng, trace)
    assert result.is_complete
    table = trace.to_frame()
    assert list(table.columns) == DECODE_TRACE_COLUMNS
    assert list(table["masked_after"]) == keep_schedule(4, 32)
    assert list(table["masked_before"]) == [32] + keep_schedule(4, 32)[:-1]


def test_more_steps_than_masked_tokens(rng, tiny_model_config):
    model = FixedLogitModel(tiny_model_config)
    canvas = TokenGrid(np.zeros((2, 4, 4), dtype=np.int64), 16, "color", np.arange(32).reshape(2, 4, 4) >= 29)
    result = decode_canvas(model, canvas, _structure(rng, 2), DecodeConfig(steps=8), rng)
    assert result.is_complete
    assert model.calls == 3


def test_greedy_decoding_ignores_the_seed(rng, tiny_model_config):
    model = FixedLogitModel(tiny_model_config, seed=6)
    canvas, _ = _canvas(rng)
    structure = _structure(rng)
    config = DecodeConfig(steps=4, temperature=0.0)
    first = decode_canvas(model, canvas, structure, config, np.random.default_rng(0))
    second = decode_canvas(model, canvas, structure, config, np.random.default_rng(1))
    np.testing.assert_array_equal(first.indices, second.indices)


def test_interpolate_is_seeded(tiny_params, tiny_codebooks, moving_square_clip):
    frames, maps = moving_square_clip
    model = MaskintModel(tiny_params)
    anchors = {0: frames[0], 3: frames[3]}
    config = DecodeConfig(steps=4, seed=1)
    trace = DecodeTrace()
    video = interpolate(model, anchors, maps, tiny_codebooks, config, trace)
    assert video.shape == (4, 16, 16, 3)
    assert interpolate(model, anchors, maps, tiny_codebooks, config).tobytes() == video.tobytes()
    assert trace.to_frame()["masked_after"].iloc[-1] == 0

    color_book = tiny_codebooks["color"]
    for a in anchors:
        np.testing.assert_array_equal(video[a], decode(encode(frames[a], color_book), color_book)[0])


def test_interpolate_needs_anchor_pixels(tiny_params, tiny_codebooks, moving_square_clip):
    frames, maps = moving_square_clip
    with pytest.raises(ContractError):
        interpolate(
            MaskintModel(tiny_params), {0: frames[0]}, maps, tiny_codebooks, DecodeConfig(steps=2, anchors=(0, 3))
        )


def test_interpolate_long_segments(long_model_config, tiny_codebooks, rng):
    maps = rng.uniform(size=(60, 16, 16))
    keyframe_pixels = rng.uniform(size=(60, 16, 16, 3))
    keyframes = {i: keyframe_pixels[i] for i in [0, 15, 30, 45, 59]}
    model = FixedLogitModel(long_model_config, seed=8)
    config = DecodeConfig(steps=4, seed=2)

    video = interpolate_long(model, keyframes, maps, tiny_codebooks, config, n_threads=1)
    assert video.shape == (60, 16, 16, 3)
    assert model.calls == 4 * 4
    color_book = tiny_codebooks["color"]
    for i, pixels in keyframes.items():
        np.testing.assert_array_equal(video[i], decode(encode(pixels, color_book), color_book)[0])

    threaded = interpolate_long(model, keyframes, maps, tiny_codebooks, config, n_threads=2)
    assert threaded.tobytes() == video.tobytes()


def test_segment_seeds_are_independent(long_model_config, tiny_codebooks, rng):
    maps = rng.uniform(size=(60, 16, 16))
    keyframes = {i: rng.uniform(size=(16, 16, 3)) for i in [0, 15, 30, 45, 59]}
    model = FixedLogitModel(long_model_config)
    config = DecodeConfig(steps=4)
    base = interpolate_long(model, keyframes, maps, tiny_codebooks, config, segment_seeds=[1, 2, 3, 4], n_threads=1)
    other = interpolate_long(model, keyframes, maps, tiny_codebooks, config, segment_seeds=[9, 2, 3, 4], n_threads=1)
    np.testing.assert_array_equal(other[30:46], base[30:46])
    with pytest.raises(ContractError):
        interpolate_long(model, keyframes, maps, tiny_codebooks, config, segment_seeds=[1, 2])


def test_two_keyframes_equal_plain_interpolate(tiny_params, tiny_codebooks, moving_square_clip):
    frames, maps = moving_square_clip
    model = MaskintModel(tiny_params)
    keyframes = {0: frames[0], 3: frames[3]}
    config = DecodeConfig(steps=4, seed=5)
    long = interpolate_long(model, keyframes, maps, tiny_codebooks, config, n_threads=1)
    np.testing.assert_array_equal(long, interpolate(model, keyframes, maps, tiny_codebooks, config))


def test_segmentation_errors(long_model_config, tiny_codebooks, rng):
    maps = rng.uniform(size=(60, 16, 16))
    model = FixedLogitModel(long_model_config)
    pixels = rng.uniform(size=(16, 16, 3))
    with pytest.raises(SegmentationError):
        interpolate_long(model, {0: pixels, 20: pixels, 59: pixels}, maps, tiny_codebooks)
    with pytest.raises(SegmentationError):
        interpolate_long(model, {0: pixels, 15: pixels}, maps, tiny_codebooks)
    with pytest.raises(SegmentationError):
        interpolate_long(model, {59: pixels}, maps, tiny_codebooks)
    assert suggest_keyframes([0, 20, 59], 16) == [15, 35, 50]


ANCHOR_SETS = {1: (0,), 2: (0, 7), 3: (0, 3, 7), 4: (0, 2, 5, 7), 6: (0, 1, 3, 4, 6, 7)}


@pytest.fixture(scope="module")
def eight_frame_model():
    config = ModelConfig(
        n_frames=8,
        grid_height=4,
        grid_width=4,
        color_vocab=16,
        structure_vocab=8,
        embed_dim=16,
        n_heads=2,
        n_layers=2,
        window_height=2,
        window_width=2,
    )
    return MaskintModel(ModelParameters.init(config, seed=1))


@pytest.mark.parametrize("n_anchors", sorted(ANCHOR_SETS))
@pytest.mark.parametrize("n_steps", [1, 2, 4, 8, 16, 32])
def test_decoding_invariants_sweep(eight_frame_model, n_steps, n_anchors):
    rng = np.random.default_rng(n_steps * 10 + n_anchors)
    anchors = ANCHOR_SETS[n_anchors]
    anchor_tokens = {a: rng.integers(0, 16, (4, 4)) for a in anchors}
    canvas = init_canvas(anchor_tokens, 8, 4, 4, 16)
    structure = _structure(rng, 8)
    config = DecodeConfig(steps=n_steps, seed=n_steps)
    total = int(canvas.mask.sum())
    assert total == (8 - n_anchors) * 16

    for k in range(n_steps):
        if canvas.is_complete:
            break
        stepped = decode_step(eight_frame_model, canvas, structure, k, config, rng, total_masked=total)
        assert not (stepped.mask & ~canvas.mask).any()
        np.testing.assert_array_equal(stepped.indices[~canvas.mask], canvas.indices[~canvas.mask])
        canvas = stepped
    assert canvas.is_complete
    for frame, tokens in anchor_tokens.items():
        np.testing.assert_array_equal(canvas.indices[frame], tokens)
