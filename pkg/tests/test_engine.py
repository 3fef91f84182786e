"""Inference engine: oracle equivalence, multiplier routing, fault mechanics."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from axdse import (
    ApproxConfig,
    Conv2D,
    Dataset,
    Dense,
    Evaluator,
    FaultSite,
    Flatten,
    FloatModel,
    MaxPool2D,
    NetworkModel,
    QuantParams,
    ReLU,
    TruncatedMultiplier,
    UsageError,
    builtin_multiplier,
    evaluate_accuracy,
    forward,
    quantize_model,
)

import reference


@pytest.fixture(scope="module")
def const_model():
    """Zero weights: the logits are exactly the requantized biases [5, 2]."""
    return NetworkModel(
        name="const",
        input_shape=(1,),
        input_qparams=QuantParams(1.0, 0),
        layers=(
            Dense(1, 2, np.zeros((2, 1), np.int8), np.array([5, 2], np.int32),
                  weight_qparams=QuantParams(1.0, 0), out_qparams=QuantParams(1.0, 0)),
        ),
        num_classes=2,
    )


@pytest.fixture(scope="module")
def small_conv_model():
    """Tiny conv net with 'same' padding so padded cells route through the
    multiplier; small enough for the scalar loop-nest reference."""
    rng = np.random.default_rng(21)
    fm = FloatModel(
        name="small-conv",
        input_shape=(4, 4, 1),
        layers=(
            Conv2D(3, 3, 1, 2, 1, "same",
                   rng.normal(0, 0.5, size=(2, 3, 3, 1)).astype(np.float32),
                   rng.normal(0, 0.2, size=2).astype(np.float32)),
            ReLU(),
            MaxPool2D(2, 2, 2),
            Flatten(),
            Dense(8, 3, rng.normal(0, 0.5, size=(3, 8)).astype(np.float32),
                  rng.normal(0, 0.2, size=3).astype(np.float32)),
        ),
        num_classes=3,
    )
    calib = rng.normal(0, 1, size=(24, 4, 4, 1)).astype(np.float32)
    return quantize_model(fm, calib)


class TestApproxConfig:
    def test_mask_render_lenet_style(self, table3_shape_model):
        cfg = ApproxConfig.uniform(table3_shape_model, TruncatedMultiplier(1))
        assert cfg.mask(table3_shape_model) == "1-1--111"
        assert ApproxConfig.all_exact(table3_shape_model).mask(table3_shape_model) == "0-0--000"

    def test_mask_parse_round_trip(self, table3_shape_model):
        for mask in ("1-1--111", "0-1--101", "1-0--010"):
            cfg = ApproxConfig.from_mask(table3_shape_model, mask, TruncatedMultiplier(2))
            assert cfg.mask(table3_shape_model) == mask

    def test_mask_wrong_length(self, table3_shape_model):
        with pytest.raises(UsageError, match="length"):
            ApproxConfig.from_mask(table3_shape_model, "1-1", TruncatedMultiplier(1))

    def test_mask_bad_chars(self, table3_shape_model):
        with pytest.raises(UsageError):
            ApproxConfig.from_mask(table3_shape_model, "--1--111", TruncatedMultiplier(1))
        with pytest.raises(UsageError):
            ApproxConfig.from_mask(table3_shape_model, "111--111", TruncatedMultiplier(1))

    def test_assignment_count_checked(self, mlp_model):
        cfg = ApproxConfig((builtin_multiplier("exact"),) * 2)
        with pytest.raises(UsageError, match="3 computational"):
            cfg.validate(mlp_model)

    def test_uniform_flags(self, mlp_model):
        cfg = ApproxConfig.uniform(mlp_model, TruncatedMultiplier(1), [True, False, True])
        assert cfg.mask(mlp_model) == "1-0-1"
        assert cfg.multiplier_ids() == ("trunc1", "exact", "trunc1")


class TestExactEquivalence:
    def test_mlp_matches_affine_reference(self, mlp_model, mlp_data):
        ev = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model))
        images = mlp_data.images[:200]
        logits = ev.logits(images)
        for i, img in enumerate(images):
            assert np.array_equal(logits[i], reference.affine_logits(mlp_model, img)), f"image {i}"

    def test_conv_matches_affine_reference(self, lenet_model):
        rng = np.random.default_rng(17)
        images = rng.integers(-128, 128, size=(50, 8, 8, 1)).astype(np.int8)
        ev = Evaluator(lenet_model, ApproxConfig.all_exact(lenet_model))
        logits = ev.logits(images)
        for i, img in enumerate(images):
            assert np.array_equal(logits[i], reference.affine_logits(lenet_model, img)), f"image {i}"

    def test_strided_same_conv_matches_reference(self):
        rng = np.random.default_rng(31)
        fm = FloatModel(
            name="strided",
            input_shape=(7, 7, 1),
            layers=(
                Conv2D(3, 3, 1, 3, 2, "same",
                       rng.normal(0, 0.4, size=(3, 3, 3, 1)).astype(np.float32),
                       rng.normal(0, 0.1, size=3).astype(np.float32)),
                ReLU(),
                Flatten(),
                Dense(48, 4, rng.normal(0, 0.3, size=(4, 48)).astype(np.float32),
                      np.zeros(4, dtype=np.float32)),
            ),
            num_classes=4,
        )
        model = quantize_model(fm, rng.normal(0, 1, size=(16, 7, 7, 1)).astype(np.float32))
        images = rng.integers(-128, 128, size=(30, 7, 7, 1)).astype(np.int8)
        ev = Evaluator(model, ApproxConfig.all_exact(model))
        logits = ev.logits(images)
        for i, img in enumerate(images):
            assert np.array_equal(logits[i], reference.affine_logits(model, img)), f"image {i}"


class TestMultiplierRouting:
    def test_dense_routing_matches_loop_nest(self, tiny_model):
        mult = TruncatedMultiplier(3)
        cfg = ApproxConfig.uniform(tiny_model, mult, [True, False])
        ev = Evaluator(tiny_model, cfg)
        rng = np.random.default_rng(4)
        images = rng.integers(-128, 128, size=(16, 4)).astype(np.int8)
        fns = [lambda a, b: reference.trunc_product(3, a, b), lambda a, b: a * b]
        got = ev.logits(images)
        for i, img in enumerate(images):
            assert got[i].tolist() == reference.routed_logits(tiny_model, img, fns), f"image {i}"

    def test_conv_routing_matches_loop_nest(self, small_conv_model):
        mult = TruncatedMultiplier(2)
        cfg = ApproxConfig.uniform(small_conv_model, mult)
        ev = Evaluator(small_conv_model, cfg)
        rng = np.random.default_rng(5)
        images = rng.integers(-128, 128, size=(8, 4, 4, 1)).astype(np.int8)
        fn = lambda a, b: reference.trunc_product(2, a, b)
        got = ev.logits(images)
        for i, img in enumerate(images):
            assert got[i].tolist() == reference.routed_logits(small_conv_model, img, [fn, fn]), f"image {i}"

    def test_exact_lut_equals_exact_builtin(self, mlp_model, mlp_data):
        from axdse.multipliers import LutMultiplier, exact_product_table

        lut = LutMultiplier("ident", exact_product_table(), 0.425, 729.8)
        a = Evaluator(mlp_model, ApproxConfig.uniform(mlp_model, lut)).predict(mlp_data.images[:100])
        b = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model)).predict(mlp_data.images[:100])
        assert np.array_equal(a, b)


class TestFaultMechanics:
    def test_bit1_of_5_becomes_7(self, const_model):
        ev = Evaluator(const_model, ApproxConfig.all_exact(const_model))
        image = np.zeros(1, dtype=np.int8)
        assert ev.trace(image)[0].tolist() == [5, 2]
        assert ev.trace(image, fault=FaultSite(0, 0, 1))[0].tolist() == [7, 2]

    def test_sign_bit_of_5_becomes_minus_123(self, const_model):
        ev = Evaluator(const_model, ApproxConfig.all_exact(const_model))
        image = np.zeros(1, dtype=np.int8)
        assert ev.trace(image, fault=FaultSite(0, 0, 7))[0].tolist() == [-123, 2]

    def test_double_flip_is_identity(self, mlp_model, mlp_data):
        ev = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model))
        site = FaultSite(2, 7, 6)
        clean = ev.predict(mlp_data.images[:100])
        doubled = ev.predict(mlp_data.images[:100], fault=[site, site])
        assert np.array_equal(clean, doubled)

    def test_locality(self, lenet_model):
        rng = np.random.default_rng(6)
        image = rng.integers(-128, 128, size=(8, 8, 1)).astype(np.int8)
        ev = Evaluator(lenet_model, ApproxConfig.all_exact(lenet_model))
        site = FaultSite(5, 3, 4)
        clean = ev.trace(image)
        faulty = ev.trace(image, fault=site)
        for i in range(site.layer_index):
            assert np.array_equal(clean[i], faulty[i]), f"layer {i} changed before the fault"
        diff = np.flatnonzero(clean[site.layer_index] != faulty[site.layer_index])
        assert diff.tolist() == [site.element_index]

    def test_fault_on_final_logits(self, const_model):
        ev = Evaluator(const_model, ApproxConfig.all_exact(const_model))
        image = np.zeros(1, dtype=np.int8)
        # flip the sign bit of logit 1: 2 -> -126, argmax unchanged
        assert int(ev.predict(image, fault=FaultSite(0, 1, 7))[0]) == 0
        # flip the sign bit of logit 0: 5 -> -123, argmax moves to 1
        assert int(ev.predict(image, fault=FaultSite(0, 0, 7))[0]) == 1

    @pytest.mark.parametrize(
        "site",
        [FaultSite(-1, 0, 0), FaultSite(99, 0, 0), FaultSite(0, 999, 0), FaultSite(0, 0, 8), FaultSite(0, 0, -1)],
    )
    def test_out_of_range_sites(self, mlp_model, site):
        ev = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model))
        with pytest.raises(UsageError):
            ev.predict(np.zeros(64, dtype=np.int8), fault=site)

    def test_cache_path_equals_direct_path(self, mlp_model, mlp_data):
        ev = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model))
        subset = mlp_data.subset(64)
        cache = ev.cache_activations(subset)
        rng = np.random.default_rng(8)
        sizes = [int(np.prod(s)) for s in mlp_model.layer_shapes]
        for _ in range(25):
            layer = int(rng.integers(0, len(sizes)))
            site = FaultSite(layer, int(rng.integers(0, sizes[layer])), int(rng.integers(0, 8)))
            via_cache = ev.predict_from_cache(cache, site)
            direct = ev.predict(subset.images, fault=site)
            assert np.array_equal(via_cache, direct), site


class TestEvaluation:
    def test_self_consistent_labels_give_accuracy_one(self, mlp_model, mlp_data):
        ev = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model))
        preds = ev.predict(mlp_data.images)
        ds = Dataset(mlp_data.images, preds, mlp_data.qparams)
        assert ev.accuracy(ds) == 1.0

    def test_forward_wrapper(self, mlp_model, mlp_data):
        cfg = ApproxConfig.all_exact(mlp_model)
        pred = forward(mlp_model, mlp_data.images[0], cfg)
        assert pred == int(Evaluator(mlp_model, cfg).predict(mlp_data.images[:1])[0])

    def test_evaluate_accuracy_wrapper(self, mlp_model, mlp_data):
        cfg = ApproxConfig.all_exact(mlp_model)
        sub = mlp_data.subset(50)
        assert evaluate_accuracy(mlp_model, sub, cfg) == Evaluator(mlp_model, cfg).accuracy(sub)

    def test_argmax_tie_takes_first(self):
        model = NetworkModel(
            name="tie",
            input_shape=(1,),
            input_qparams=QuantParams(1.0, 0),
            layers=(
                Dense(1, 3, np.zeros((3, 1), np.int8), np.array([4, 4, 4], np.int32),
                      weight_qparams=QuantParams(1.0, 0), out_qparams=QuantParams(1.0, 0)),
            ),
            num_classes=3,
        )
        assert forward(model, np.zeros(1, dtype=np.int8), ApproxConfig.all_exact(model)) == 0

    def test_qparams_mismatch_rejected(self, mlp_model, mlp_data):
        ev = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model))
        other = Dataset(mlp_data.images, mlp_data.labels, QuantParams(0.123, 4))
        with pytest.raises(UsageError, match="qparams"):
            ev.accuracy(other)

    def test_wrong_input_size_rejected(self, mlp_model):
        ev = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model))
        with pytest.raises(UsageError, match="elements"):
            ev.predict(np.zeros((2, 63), dtype=np.int8))

    def test_wrong_dtype_rejected(self, mlp_model):
        ev = Evaluator(mlp_model, ApproxConfig.all_exact(mlp_model))
        with pytest.raises(UsageError, match="int8"):
            ev.predict(np.zeros((2, 64), dtype=np.float32))


class TestQuantizedReLU:
    @given(st.integers(-128, 127), st.floats(1e-4, 10.0), st.lists(st.integers(-128, 127), min_size=1, max_size=32))
    def test_matches_dequantized_relu(self, zp, scale, xs):
        """max(zp, x) in the quantized domain is relu applied to real values."""
        q = QuantParams(scale, zp)
        x = np.array(xs, dtype=np.int8)
        quant_relu = np.maximum(x, np.int8(zp)).astype(np.float64)
        real = (x.astype(np.float64) - zp) * scale
        expect = np.rint(np.maximum(real, 0.0) / scale) + zp
        assert np.all(np.abs(quant_relu - expect) * scale <= scale + 1e-12)
