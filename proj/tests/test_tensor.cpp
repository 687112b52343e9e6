#include <doctest.h>

#include <cmath>

#include "rfl/rng.hpp"
#include "rfl/tensor.hpp"
#include "test_support.hpp"

using namespace rfl;
using rfl::testing::check_gradients;
using rfl::testing::rand_tensor;
using rfl::testing::rand_tensor_away_from;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and hand arithmetic") {
    Tape t(Dtype::f32);
    const NodeId a = t.leaf(Tensor::from_values({2, 2}, {1, 2, 3, 4}), false);
    const NodeId eye = t.leaf(Tensor::from_values({2, 2}, {1, 0, 0, 1}), false);
    CHECK(t.value(t.matmul(a, eye)).same_values(Tensor::from_values({2, 2}, {1, 2, 3, 4})));
    const NodeId b = t.leaf(Tensor::from_values({2, 2}, {5, 6, 7, 8}), false);
    CHECK(t.value(t.matmul(a, b)).same_values(Tensor::from_values({2, 2}, {19, 22, 43, 50})));
}

TEST_CASE("matmul dimension error names both shapes") {
    Tape t(Dtype::f32);
    const NodeId a = t.leaf(Tensor::zeros({2, 3}), false);
    const NodeId b = t.leaf(Tensor::zeros({2, 3}), false);
    CHECK_THROWS_WITH_AS(t.matmul(a, b),
                         doctest::Contains("[2x3]"), ShapeError);
}

TEST_CASE("elementwise definitions") {
    Tape t(Dtype::f32);
    const NodeId x = t.leaf(Tensor::from_values({3}, {-1, 0, 2}), false);
    CHECK(t.value(t.relu(x)).same_values(Tensor::from_values({3}, {0, 0, 2})));
    const NodeId y = t.leaf(Tensor::from_values({3}, {-0.5, 0, 3}), false);
    CHECK(t.value(t.sign(y)).same_values(Tensor::from_values({3}, {-1, 0, 1})));
    const NodeId z = t.leaf(Tensor::from_values({3}, {-0.1, 0.5, 1.4}), false);
    CHECK(t.value(t.clamp(z, 0, 1)).same_values(Tensor::from_values({3}, {0, 0.5, 1})));
}

TEST_CASE("broadcast is right-aligned, loud otherwise") {
    Tape t(Dtype::f32);
    const NodeId a = t.leaf(Tensor::from_values({2, 2}, {1, 2, 3, 4}), false);
    const NodeId row = t.leaf(Tensor::from_values({2}, {10, 20}), false);
    CHECK(t.value(t.add(a, row)).same_values(Tensor::from_values({2, 2}, {11, 22, 13, 24})));
    const NodeId bad = t.leaf(Tensor::zeros({3, 2}), false);
    CHECK_THROWS_AS(t.add(a, bad), ShapeError);
}

TEST_CASE("softmax symmetry, stability and closed form") {
    Tape t(Dtype::f32);
    const NodeId sym = t.softmax(t.leaf(Tensor::from_values({3}, {0, 0, 0}), false), 0);
    for (int i = 0; i < 3; ++i) CHECK(t.value(sym).get_flat(i) == doctest::Approx(1.0 / 3).epsilon(1e-6));

    const NodeId hot = t.softmax(t.leaf(Tensor::from_values({2}, {1000, 0}), false), 0);
    CHECK(t.value(hot).all_finite());
    CHECK(t.value(hot).get_flat(0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(t.value(hot).get_flat(1) == doctest::Approx(0.0).epsilon(1e-6));

    const NodeId ln2 = t.softmax(t.leaf(Tensor::from_values({2}, {std::log(2.0), 0}), false), 0);
    CHECK(t.value(ln2).get_flat(0) == doctest::Approx(2.0 / 3).epsilon(1e-6));
    CHECK(t.value(ln2).get_flat(1) == doctest::Approx(1.0 / 3).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one for any finite input") {
    RngStream rng(11);
    for (int it = 0; it < 50; ++it) {
        Tape t(Dtype::f32);
        const Tensor x = rand_tensor({4, 5}, rng, -50.0, 50.0, Dtype::f32);
        const Tensor y = t.value(t.softmax(t.leaf(x, false), 1));
        for (int r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (int c = 0; c < 5; ++c) {
                const double v = y.get_flat(r * 5 + c);
                CHECK(v >= 0.0);
                sum += v;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("layer_norm edge cases") {
    Tape t(Dtype::f32);
    const NodeId gain = t.leaf(Tensor::from_values({3}, {1, 1, 1}), false);
    const NodeId bias = t.leaf(Tensor::zeros({3}), false);
    // zero-variance row survives via eps
    const NodeId flat = t.layer_norm(t.leaf(Tensor::from_values({1, 3}, {5, 5, 5}), false),
                                     gain, bias);
    for (int i = 0; i < 3; ++i) CHECK(t.value(flat).get_flat(i) == doctest::Approx(0.0));

    const NodeId g2 = t.leaf(Tensor::from_values({2}, {1, 1}), false);
    const NodeId b2 = t.leaf(Tensor::zeros({2}), false);
    const NodeId two = t.layer_norm(t.leaf(Tensor::from_values({1, 2}, {1, 3}), false), g2, b2);
    CHECK(t.value(two).get_flat(0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(t.value(two).get_flat(1) == doctest::Approx(1.0).epsilon(1e-4));

    const NodeId zero_gain = t.leaf(Tensor::zeros({2}), false);
    const NodeId b3 = t.leaf(Tensor::from_values({2}, {7, -2}), false);
    const NodeId out = t.layer_norm(t.leaf(Tensor::from_values({2, 2}, {1, 3, -4, 9}), false),
                                    zero_gain, b3);
    CHECK(t.value(out).same_values(Tensor::from_values({2, 2}, {7, -2, 7, -2})));
}

TEST_CASE("cross entropy closed forms") {
    Tape t(Dtype::f32);
    const NodeId uniform = t.cross_entropy_from_logits(
        t.leaf(Tensor::zeros({1, 10}), false), {3});
    CHECK(t.value(uniform).item() == doctest::Approx(std::log(10.0)).epsilon(1e-6));

    const NodeId sat = t.cross_entropy_from_logits(
        t.leaf(Tensor::from_values({1, 2}, {20, -20}), false), {0});
    CHECK(t.value(sat).item() == doctest::Approx(0.0).epsilon(1e-6));

    const NodeId two = t.cross_entropy_from_logits(
        t.leaf(Tensor::from_values({1, 2}, {1, 0}), false), {1});
    CHECK(t.value(two).item() == doctest::Approx(std::log(1.0 + std::exp(1.0))).epsilon(1e-6));

    CHECK_THROWS_AS(t.cross_entropy_from_logits(t.leaf(Tensor::zeros({1, 2}), false), {2}),
                    InputError);
}

TEST_CASE("backward basics: linearity, product rule, scalar contract") {
    Tape t(Dtype::f64);
    const NodeId x = t.leaf(Tensor::from_values({3}, {1, 2, 3}, Dtype::f64), true);
    Gradients g = t.backward(t.sum_all(x));
    CHECK(g.at(x).same_values(Tensor::from_values({3}, {1, 1, 1}, Dtype::f64)));

    Tape t2(Dtype::f64);
    const NodeId a = t2.leaf(Tensor::scalar(2, Dtype::f64), true);
    const NodeId b = t2.leaf(Tensor::scalar(3, Dtype::f64), true);
    Gradients g2 = t2.backward(t2.sum_all(t2.mul(a, b)));
    CHECK(g2.at(a).item() == doctest::Approx(3.0));
    CHECK(g2.at(b).item() == doctest::Approx(2.0));

    Tape t3(Dtype::f64);
    const NodeId vec = t3.leaf(Tensor::zeros({3}, Dtype::f64), true);
    CHECK_THROWS_AS(t3.backward(vec), ContractError);
}

TEST_CASE("fan-out gradients accumulate additively") {
    // loss = x*y1 + x*y2: dx must be y1 + y2.
    Tape t(Dtype::f64);
    const NodeId x = t.leaf(Tensor::scalar(1.5, Dtype::f64), true);
    const NodeId y1 = t.leaf(Tensor::scalar(4.0, Dtype::f64), false);
    const NodeId y2 = t.leaf(Tensor::scalar(-7.0, Dtype::f64), false);
    const NodeId loss = t.sum_all(t.add(t.mul(x, y1), t.mul(x, y2)));
    CHECK(t.backward(loss).at(x).item() == doctest::Approx(-3.0));
    // and x*x gives 2x
    Tape t2(Dtype::f64);
    const NodeId z = t2.leaf(Tensor::scalar(5.0, Dtype::f64), true);
    CHECK(t2.backward(t2.sum_all(t2.mul(z, z))).at(z).item() == doctest::Approx(10.0));
}

TEST_CASE("finite difference oracle on closed forms") {
    const Tensor x = Tensor::from_values({2}, {1, 2}, Dtype::f64);
    const Tensor g = finite_difference_gradient(
        [](const Tensor& v) {
            return v.get_flat(0) * v.get_flat(0) + v.get_flat(1) * v.get_flat(1);
        },
        x, 1e-5);
    CHECK(g.get_flat(0) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(g.get_flat(1) == doctest::Approx(4.0).epsilon(1e-6));

    const Tensor y = Tensor::from_values({2}, {-1, 2}, Dtype::f64);
    const Tensor gr = finite_difference_gradient(
        [](const Tensor& v) {
            double s = 0;
            for (std::int64_t i = 0; i < v.numel(); ++i) s += std::max(0.0, v.get_flat(i));
            return s;
        },
        y, 1e-5);
    CHECK(gr.get_flat(0) == doctest::Approx(0.0));
    CHECK(gr.get_flat(1) == doctest::Approx(1.0));

    CHECK_THROWS_AS(
        finite_difference_gradient([](const Tensor&) { return 0.0; },
                                   Tensor::zeros({2}, Dtype::f32), 1e-5),
        ContractError);
}

TEST_CASE("per-op gradients match finite differences on 100 random instances") {
    RngStream rng(2024);
    using B = rfl::testing::GraphBuilder;
    struct OpCheck {
        const char* name;
        B build;
        std::function<std::vector<Tensor>(RngStream&)> make_inputs;
    };
    const std::vector<OpCheck> ops = {
        {"add", [](Tape& t, const std::vector<NodeId>& in) { return t.add(in[0], in[1]); },
         [](RngStream& r) {
             return std::vector<Tensor>{rand_tensor({3, 4}, r), rand_tensor({4}, r)};
         }},
        {"sub", [](Tape& t, const std::vector<NodeId>& in) { return t.sub(in[0], in[1]); },
         [](RngStream& r) {
             return std::vector<Tensor>{rand_tensor({2, 3}, r), rand_tensor({2, 3}, r)};
         }},
        {"mul", [](Tape& t, const std::vector<NodeId>& in) { return t.mul(in[0], in[1]); },
         [](RngStream& r) {
             return std::vector<Tensor>{rand_tensor({3, 2}, r), rand_tensor({1, 2}, r)};
         }},
        {"scale", [](Tape& t, const std::vector<NodeId>& in) { return t.scale(in[0], -1.7); },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({5}, r)}; }},
        {"relu", [](Tape& t, const std::vector<NodeId>& in) { return t.relu(in[0]); },
         [](RngStream& r) {
             return std::vector<Tensor>{rand_tensor_away_from({6}, r, {0.0}, 1e-3)};
         }},
        {"gelu", [](Tape& t, const std::vector<NodeId>& in) { return t.gelu(in[0]); },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({6}, r, -3, 3)}; }},
        {"clamp",
         [](Tape& t, const std::vector<NodeId>& in) { return t.clamp(in[0], -0.5, 0.5); },
         [](RngStream& r) {
             return std::vector<Tensor>{rand_tensor_away_from({6}, r, {-0.5, 0.5}, 1e-3)};
         }},
        {"matmul",
         [](Tape& t, const std::vector<NodeId>& in) { return t.matmul(in[0], in[1]); },
         [](RngStream& r) {
             return std::vector<Tensor>{rand_tensor({3, 4}, r), rand_tensor({4, 2}, r)};
         }},
        {"batched matmul",
         [](Tape& t, const std::vector<NodeId>& in) { return t.matmul(in[0], in[1]); },
         [](RngStream& r) {
             return std::vector<Tensor>{rand_tensor({2, 3, 4}, r), rand_tensor({2, 4, 2}, r)};
         }},
        {"softmax",
         [](Tape& t, const std::vector<NodeId>& in) { return t.softmax(in[0], 1); },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({3, 5}, r, -4, 4)}; }},
        {"layer_norm",
         [](Tape& t, const std::vector<NodeId>& in) {
             return t.layer_norm(in[0], in[1], in[2]);
         },
         [](RngStream& r) {
             return std::vector<Tensor>{rand_tensor({4, 6}, r), rand_tensor({6}, r),
                                        rand_tensor({6}, r)};
         }},
        {"transpose",
         [](Tape& t, const std::vector<NodeId>& in) { return t.transpose(in[0], {1, 0}); },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({3, 4}, r)}; }},
        {"slice+concat",
         [](Tape& t, const std::vector<NodeId>& in) {
             return t.concat({t.slice(in[0], 1, 2, 2), t.slice(in[0], 1, 0, 2)}, 1);
         },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({2, 4}, r)}; }},
        {"broadcast_to",
         [](Tape& t, const std::vector<NodeId>& in) {
             return t.broadcast_to(in[0], {3, 2, 4});
         },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({1, 2, 4}, r)}; }},
        {"bilinear_resize",
         [](Tape& t, const std::vector<NodeId>& in) { return t.bilinear_resize(in[0], 5, 7); },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({1, 2, 4, 6}, r)}; }},
        {"extract_patches",
         [](Tape& t, const std::vector<NodeId>& in) { return t.extract_patches(in[0], 2); },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({1, 2, 4, 4}, r)}; }},
        {"cross_entropy",
         [](Tape& t, const std::vector<NodeId>& in) {
             return t.cross_entropy_from_logits(in[0], {1, 0, 2});
         },
         [](RngStream& r) { return std::vector<Tensor>{rand_tensor({3, 3}, r, -2, 2)}; }},
    };
    const int instances_per_op = 100 / 10 * 10;  // 100 instances spread below
    for (const OpCheck& op : ops) {
        double worst = 0.0;
        for (int i = 0; i < instances_per_op; ++i) {
            const auto report = check_gradients(op.build, op.make_inputs(rng), rng);
            worst = std::max(worst, report.max_err);
        }
        INFO(op.name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("sign has zero gradient") {
    Tape t(Dtype::f64);
    const NodeId x = t.leaf(Tensor::from_values({3}, {-2, 0.5, 3}, Dtype::f64), true);
    Gradients g = t.backward(t.sum_all(t.sign(x)));
    CHECK(g.at(x).same_values(Tensor::zeros({3}, Dtype::f64)));
}

TEST_CASE("clamp gradient zero outside bounds") {
    Tape t(Dtype::f64);
    const NodeId x = t.leaf(Tensor::from_values({3}, {-2, 0.2, 3}, Dtype::f64), true);
    Gradients g = t.backward(t.sum_all(t.clamp(x, -1, 1)));
    CHECK(g.at(x).same_values(Tensor::from_values({3}, {0, 1, 0}, Dtype::f64)));
}

TEST_CASE("replaying a stream is bit-identical") {
    RngStream a(99);
    RngStream b(99);
    RngStream sa = a.substream("init");
    RngStream sb = b.substream("init");
    for (int i = 0; i < 1000; ++i) CHECK(sa.next_u64() == sb.next_u64());
    // draws on one substream leave a sibling untouched
    RngStream c(99);
    RngStream noise = c.substream("attack");
    for (int i = 0; i < 17; ++i) noise.uniform();
    RngStream sc = c.substream("init");
    RngStream sd = RngStream(99).substream("init");
    for (int i = 0; i < 100; ++i) CHECK(sc.next_u64() == sd.next_u64());
}

TEST_CASE("tape leaves must match tape precision") {
    Tape t(Dtype::f32);
    CHECK_THROWS_AS(t.leaf(Tensor::zeros({2}, Dtype::f64), false), ContractError);
}

TEST_SUITE_END();
