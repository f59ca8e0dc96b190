from dataclasses import replace
from math import prod

import numpy as np
import pytest
from conftest import REFERENCE_DIMS, SMALL_DIMS

from components.accounting import container_report, payload_layout
from components.bitstream import BitStack
from components.codec import (
    CodecConfig,
    CodingSession,
    EncodedContainer,
    Region,
    decode_model,
    encode_model,
    expected_payload_bits,
)
from components.errors import BadContainer, InvalidConfig
from components.model import ModelDims, Site, generate
from components.numerics import half_decode, half_encode
from components.stats import compare_models, max_residual_error

SITES = (Site.ATT_OUT, Site.MLP_OUT)
OUTPUT_WEIGHT = {Site.ATT_OUT: "w_o", Site.MLP_OUT: "w_2"}


def patterns(value: np.ndarray) -> np.ndarray:
    return np.asarray(half_encode(value), dtype=np.int64).ravel()


def buried_entries(dims: ModelDims, layer: int, site: Site) -> list[tuple[str, int]]:
    """Tensor entries a draw at ``site`` buries, in pop order."""
    prefix = f"blocks.{layer - 1}."
    if site is Site.ATT_OUT:
        names = ("q_skip_att", "w_qkv", "b_qkv")
    else:
        names = ("b_o", "q_skip_mlp", "w_1", "b_1")
    shapes = dims.block_shapes()
    entries = [
        (prefix + name, i) for name in names if name in shapes for i in range(prod(shapes[name]))
    ]
    count = dims.hidden * (dims.hidden + 1) // 2
    assert len(entries) >= count
    return entries[::-1][:count]


def with_payload_bits(container: EncodedContainer, bits: np.ndarray) -> EncodedContainer:
    payload = np.packbits(bits, bitorder="little").tobytes()
    return replace(container, payload=payload)


def payload_bits(container: EncodedContainer) -> np.ndarray:
    return BitStack.deserialize(container.payload, container.payload_bit_length).bits()


def changed_entries(a, b) -> int:
    return sum(
        int(np.count_nonzero(patterns(x) != patterns(y)))
        for (_, x), (_, y) in zip(a.tensors(), b.tensors(), strict=True)
    )


class TestConfig:
    def test_defaults(self):
        cfg = CodecConfig()
        assert (cfg.delta, cfg.lambda_width, cfg.tau_weights, cfg.tau_stream) == (
            16,
            32,
            0.01,
            2.0**-13,
        )

    @pytest.mark.parametrize(
        "changes",
        [{"delta": 8}, {"lambda_width": 24}, {"tau_weights": 0.0}, {"tau_stream": float("nan")}],
    )
    def test_invalid(self, changes):
        with pytest.raises(InvalidConfig):
            CodecConfig(**changes)

    def test_infinite_thresholds_are_allowed(self):
        assert CodecConfig(tau_weights=float("inf"), tau_stream=float("inf")).tau_weights > 1.0


class TestSmallRoundTrip:
    def test_payload_length(self, small_session):
        container = small_session.container
        assert container.payload_bit_length == expected_payload_bits(SMALL_DIMS, CodecConfig())

    def test_within_tolerance(self, small_session):
        residual = max_residual_error(small_session.reference, small_session.decoded)
        assert residual <= CodecConfig().tau_weights

    def test_traces_agree(self, small_session):
        encoder, decoder = small_session.encoder.trace, small_session.decoder.trace
        assert encoder.keys() == decoder.keys()
        assert len(encoder) == 2 * SMALL_DIMS.layers
        for key, trace in encoder.items():
            assert np.array_equal(trace.weight_patterns, decoder[key].weight_patterns)
            assert np.array_equal(trace.x_symbols, decoder[key].x_symbols)

    def test_corrected_entries_are_exact(self, small_session):
        reference, decoded = small_session.reference, small_session.decoded
        for record in small_session.container.corrections:
            if record.region is Region.WEIGHT:
                name, index = f"blocks.{record.layer - 1}.{OUTPUT_WEIGHT[record.site]}", record.index
            else:
                name, index = buried_entries(SMALL_DIMS, record.layer, record.site)[record.index]
            assert patterns(decoded.tensor(name))[index] == record.value
            assert patterns(reference.tensor(name))[index] == record.value

    def test_uncorrected_buried_entries_follow_the_trace(self, small_session):
        decoded, container = small_session.decoded, small_session.container
        for (layer, site), trace in small_session.decoder.trace.items():
            corrected = {r.index for r in container.records(layer, site, Region.STREAM_X)}
            for i, (name, index) in enumerate(buried_entries(SMALL_DIMS, layer, site)):
                if i not in corrected:
                    assert patterns(decoded.tensor(name))[index] == trace.x_symbols[i]

    def test_untouched_tensors_are_exact(self, small_session):
        reference, decoded = small_session.reference, small_session.decoded
        for name in ("w_emb", "w_head", "b_head", "blocks.1.b_2"):
            assert np.array_equal(reference.tensor(name), decoded.tensor(name))

    def test_wrong_payload_length(self, small_session):
        container = small_session.container
        broken = replace(container, payload_bit_length=container.payload_bit_length - 1)
        with pytest.raises(BadContainer):
            decode_model(broken)


def test_bias_free_model():
    dims = ModelDims(layers=2, hidden=6, ffn=12, vocab=24, has_biases=False, seq=8)
    session = CodingSession(generate(dims, seed=11)).run()
    assert session.container.payload_bit_length == expected_payload_bits(dims, session.cfg)
    assert max_residual_error(session.reference, session.decoded) <= session.cfg.tau_weights


def test_payload_conservation_over_random_dims():
    rng = np.random.default_rng(2718)
    for trial in range(10):
        hidden = int(rng.integers(2, 9))
        dims = ModelDims(
            layers=int(rng.integers(1, 3)),
            hidden=hidden,
            ffn=int(rng.integers(hidden, 3 * hidden + 1)),
            vocab=int(rng.integers(hidden, 40)),
            has_biases=bool(rng.random() < 0.7),
            seq=4,
        )
        cfg = CodecConfig(lambda_width=int(rng.choice([16, 32])))
        container = encode_model(generate(dims, seed=trial), cfg)
        assert container.payload_bit_length == expected_payload_bits(dims, cfg)
        assert len(container.payload) == (container.payload_bit_length + 7) // 8
        decode_model(container)


def test_infinite_thresholds_keep_only_non_finite_records(small_model):
    cfg = CodecConfig(tau_weights=float("inf"), tau_stream=float("inf"))
    session = CodingSession(small_model, cfg).run()
    for record in session.container.corrections:
        trace = session.encoder.trace[(record.layer, record.site)]
        source = trace.x_symbols if record.region is Region.STREAM_X else trace.weight_patterns
        value = half_decode(np.uint16(source.reshape(-1)[record.index]))
        assert not np.isfinite(value)


def test_corrupted_plain_symbol_changes_one_entry(small_session):
    container = small_session.container
    clean = small_session.decoded
    plain = [s for s in payload_layout(SMALL_DIMS, container.config) if s.kind == "plain"]
    bits = payload_bits(container)
    rng = np.random.default_rng(404)
    for _ in range(100):
        segment = plain[int(rng.integers(len(plain)))]
        start = segment.start_bit + 16 * int(rng.integers(segment.count))
        mask = int(rng.integers(1, 1 << 16))
        corrupted = bits.copy()
        corrupted[start : start + 16] ^= ((mask >> np.arange(16)) & 1).astype(np.uint8)
        decoded = decode_model(with_payload_bits(container, corrupted))
        assert changed_entries(clean, decoded) <= 1


def test_corrupted_symbol_never_aborts_decoding(small_session):
    container = small_session.container
    bits = payload_bits(container)
    rng = np.random.default_rng(505)
    for _ in range(100):
        start = int(rng.integers(0, bits.size - 16))
        corrupted = bits.copy()
        corrupted[start : start + 16] ^= rng.integers(0, 2, size=16).astype(np.uint8)
        decoded = decode_model(with_payload_bits(container, corrupted))
        assert decoded.dims == SMALL_DIMS


@pytest.mark.slow
class TestReferenceModel:
    def test_round_trip_bound(self, reference_session):
        cfg = reference_session.cfg
        assert max_residual_error(reference_session.reference, reference_session.decoded) <= (
            cfg.tau_weights
        )

    def test_weight_corrections_are_rare(self, reference_session):
        dims = reference_session.container.dims
        weight_records = [
            r for r in reference_session.container.corrections if r.region is Region.WEIGHT
        ]
        output_parameters = dims.layers * (dims.hidden * dims.hidden + dims.ffn * dims.hidden)
        assert len(weight_records) < 0.05 * output_parameters

    def test_logits_match(self, reference_session):
        report = compare_models(reference_session.reference, reference_session.decoded)
        assert report.max_rel_logit < 1e-2
        assert report.passed

    def test_payload_length(self, reference_session):
        container = reference_session.container
        assert container.payload_bit_length == expected_payload_bits(REFERENCE_DIMS, CodecConfig())

    @pytest.mark.parametrize("tau_stream", [2.0**-10, float("inf")])
    def test_relaxed_stream_threshold_saves_bits(self, reference_session, tau_stream):
        cfg = replace(reference_session.cfg, tau_stream=tau_stream)
        session = CodingSession(
            reference_session.model, cfg, reference_session.reference
        ).run()
        report = container_report(session.container)
        assert report.saved_bits > 0
        assert report.correction_bits < container_report(reference_session.container).correction_bits
        assert max_residual_error(session.reference, session.decoded) <= cfg.tau_weights
