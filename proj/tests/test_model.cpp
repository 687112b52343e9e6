#include <doctest.h>

#include <cmath>

#include "rfl/model.hpp"
#include "rfl/peft.hpp"
#include "rfl/rng.hpp"
#include "test_support.hpp"

using namespace rfl;
using rfl::testing::micro_vit;
using rfl::testing::rand_tensor;

TEST_SUITE_BEGIN("model");

namespace {

Tensor rand_image(const Shape& shape, RngStream& rng, Dtype dt = Dtype::f32) {
    Tensor t = Tensor::zeros(shape, dt);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set_flat(i, rng.uniform(0.0, 1.0));
    return t;
}

}  // namespace

TEST_CASE("mlp parameter count and forward shape") {
    RngStream rng(1);
    Model m = build_mlp({784, 128}, 10, InputTransform{}, rng);
    CHECK(count_params(m, false) == 784 * 128 + 128 + 128 * 10 + 10);  // 101,770
    CHECK(count_params(m, false) == 101770);
    Tensor x = rand_image({4, 1, 28, 28}, rng);
    const Tensor logits = model_logits(m, x);
    CHECK(logits.shape() == Shape{4, 10});
}

TEST_CASE("mlp needs a hidden layer") {
    RngStream rng(1);
    CHECK_THROWS_AS(build_mlp({784}, 10, InputTransform{}, rng), ConfigError);
}

TEST_CASE("same seed twice gives identical weights") {
    RngStream rng1(77), rng2(77);
    Model a = build_mlp({64, 32}, 5, InputTransform{}, rng1);
    Model b = build_mlp({64, 32}, 5, InputTransform{}, rng2);
    for (const auto& name : a.params.names()) {
        CHECK(a.params.at(name).value.same_values(b.params.at(name).value));
    }
    // and identical forwards, bit for bit
    RngStream rx(3);
    const Tensor x = rand_image({2, 1, 8, 8}, rx);
    CHECK(model_logits(a, x).same_values(model_logits(b, x)));
}

TEST_CASE("tiny vit sequence length and shapes") {
    ViTConfig cfg;  // defaults: side 28, patch 7
    cfg.width = 64;
    cfg.depth = 4;
    CHECK(cfg.seq_len() == 17);  // (28/7)^2 + 1
    RngStream rng(5);
    Model m = build_tiny_vit(cfg, InputTransform{}, rng);
    const Tensor x = rand_image({2, 1, 28, 28}, rng);
    const Tensor logits = model_logits(m, x);
    CHECK(logits.shape() == Shape{2, 10});
}

TEST_CASE("attention probability rows sum to one") {
    RngStream rng(6);
    Model m = build_tiny_vit(micro_vit(), InputTransform{}, rng);
    const Tensor x = rand_image({2, 1, 14, 14}, rng);
    Tape tape(Dtype::f32);
    ForwardCapture capture;
    ForwardOptions opts;
    opts.capture = &capture;
    model_forward(tape, m, x, opts);
    CHECK(capture.attention_probs.size() == 2);  // one per block
    for (const NodeId probs : capture.attention_probs) {
        const Tensor& p = tape.value(probs);
        const Shape& s = p.shape();  // [b, heads, S, S]
        const std::int64_t rows = s[0] * s[1] * s[2];
        for (std::int64_t r = 0; r < rows; ++r) {
            double sum = 0.0;
            for (std::int64_t c = 0; c < s[3]; ++c) sum += p.get_flat(r * s[3] + c);
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("invalid vit configs are rejected") {
    ViTConfig bad = micro_vit();
    bad.patch = 5;  // 14 % 5 != 0
    RngStream rng(1);
    CHECK_THROWS_AS(build_tiny_vit(bad, InputTransform{}, rng), ConfigError);
    ViTConfig bad2 = micro_vit();
    bad2.heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(build_tiny_vit(bad2, InputTransform{}, rng), ConfigError);
}

TEST_CASE("zeroed head gives equal logits on any image") {
    RngStream rng(8);
    Model m = build_tiny_vit(micro_vit(), InputTransform{}, rng);
    attach(m, Strategy{StrategyKind::linear}, HeadInit{}, rng);
    Param& hw = m.params.at("head.weight");
    Param& hb = m.params.at("head.bias");
    hw.value = Tensor::zeros(hw.value.shape());
    hb.value = Tensor::zeros(hb.value.shape());
    const Tensor logits = model_logits(m, Tensor::zeros({1, 1, 14, 14}));
    for (std::int64_t i = 1; i < logits.numel(); ++i) {
        CHECK(logits.get_flat(i) == logits.get_flat(0));
    }
}

TEST_CASE("normalization maps the mean pixel to zero internally") {
    // mean 0.5 / std 0.5: a 0.5-valued image reaches the backbone as zeros, so
    // logits match a zero-valued image pushed through an identity transform.
    RngStream rng1(9), rng2(9);
    InputTransform norm;  // 0.5 / 0.5
    InputTransform identity;
    identity.mean = {0.0};
    identity.std_dev = {1.0};
    Model a = build_tiny_vit(micro_vit(), norm, rng1);
    Model b = build_tiny_vit(micro_vit(), identity, rng2);
    const Tensor half = Tensor::full({1, 1, 14, 14}, 0.5);
    const Tensor zero = Tensor::zeros({1, 1, 14, 14});
    CHECK(model_logits(a, half).max_abs_diff(model_logits(b, zero)) == doctest::Approx(0.0));
}

TEST_CASE("transform is a pure prefix stage") {
    // Normalizing externally and running an identity-transform twin matches
    // the in-model transform to float precision.
    RngStream rng1(10), rng2(10);
    InputTransform norm;
    norm.mean = {0.3};
    norm.std_dev = {0.7};
    InputTransform identity;
    identity.mean = {0.0};
    identity.std_dev = {1.0};
    Model a = build_tiny_vit(micro_vit(), norm, rng1);
    Model b = build_tiny_vit(micro_vit(), identity, rng2);
    RngStream rx(4);
    const Tensor x = rand_image({3, 1, 14, 14}, rx);
    Tensor pre = Tensor::zeros(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        pre.set_flat(i, static_cast<float>((x.get_flat(i) - 0.3f) * (1.0f / 0.7f)));
    }
    Tape tape(Dtype::f32);
    ForwardOptions opts;
    opts.strict_range = false;  // normalized pixels leave [0,1]
    const ForwardBuild fb = model_forward(tape, b, pre, opts);
    CHECK(model_logits(a, x).max_abs_diff(tape.value(fb.logits)) < 1e-6);
}

TEST_CASE("resize of a constant image is constant") {
    RngStream rng(11);
    InputTransform tf;
    tf.resize_to = 14;
    ViTConfig cfg = micro_vit();
    Model m = build_tiny_vit(cfg, tf, rng);
    const Tensor x = Tensor::full({1, 1, 32, 32}, 0.25);
    // probe the resized tensor via the features of a constant image: compare
    // against feeding the constant directly at the target size
    Tape tape(Dtype::f32);
    const NodeId in = tape.leaf(x, false);
    const Tensor out = tape.value(tape.bilinear_resize(in, 14, 14));
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        CHECK(out.get_flat(i) == doctest::Approx(0.25).epsilon(1e-6));
    }
    CHECK(model_logits(m, x).shape() == Shape{1, cfg.classes});
}

TEST_CASE("strict range check rejects bad pixels") {
    RngStream rng(12);
    Model m = build_tiny_vit(micro_vit(), InputTransform{}, rng);
    Tensor bad = Tensor::full({1, 1, 14, 14}, 1.5);
    CHECK_THROWS_AS(model_logits(m, bad), InputError);
    CHECK_NOTHROW(model_logits(m, bad, /*strict_range=*/false));
}

TEST_CASE("forward is batch permutation equivariant") {
    RngStream rng(13);
    Model m = build_tiny_vit(micro_vit(), InputTransform{}, rng);
    const Tensor x = rand_image({3, 1, 14, 14}, rng);
    const Tensor logits = model_logits(m, x);
    // swap samples 0 and 2
    Tensor swapped = Tensor::zeros(x.shape());
    const std::int64_t item = 14 * 14;
    const int perm[3] = {2, 1, 0};
    for (int i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < item; ++j)
            swapped.set_flat(i * item + j, x.get_flat(perm[i] * item + j));
    const Tensor swapped_logits = model_logits(m, swapped);
    for (int i = 0; i < 3; ++i)
        for (std::int64_t c = 0; c < logits.shape()[1]; ++c)
            CHECK(swapped_logits.get_flat(i * logits.shape()[1] + c) ==
                  logits.get_flat(perm[i] * logits.shape()[1] + c));
}

TEST_CASE("tunable-parameter ordering on the default config") {
    // Full-FT > Adapter > LoRA > Bias > VPT > Linear
    const ViTConfig cfg;  // library default
    std::vector<std::int64_t> counts;
    for (const StrategyKind kind :
         {StrategyKind::full_ft, StrategyKind::adapter, StrategyKind::lora,
          StrategyKind::bias, StrategyKind::vpt, StrategyKind::linear}) {
        RngStream rng(42);
        Model m = build_tiny_vit(cfg, InputTransform{}, rng);
        Strategy s;
        s.kind = kind;
        attach(m, s, HeadInit{}, rng);
        counts.push_back(count_params(m, true));
    }
    for (std::size_t i = 0; i + 1 < counts.size(); ++i) {
        INFO("position ", i);
        CHECK(counts[i] > counts[i + 1]);
    }
    // Full-FT tunable count equals the total parameter count
    RngStream rng(42);
    Model m = build_tiny_vit(cfg, InputTransform{}, rng);
    attach(m, Strategy{StrategyKind::full_ft}, HeadInit{}, rng);
    CHECK(count_params(m, true) == count_params(m, false));
}

TEST_CASE("linear strategy tunable count is the head size") {
    ViTConfig cfg = micro_vit(10);
    cfg.width = 64;
    RngStream rng(21);
    Model m = build_tiny_vit(cfg, InputTransform{}, rng);
    attach(m, Strategy{StrategyKind::linear}, HeadInit{}, rng);
    CHECK(count_params(m, true) == 64 * 10 + 10);  // 650
}

TEST_SUITE_END();
