#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "icnp/checkpoint.hpp"
#include "icnp/ops.hpp"
#include "icnp/optim.hpp"
#include "test_util.hpp"

using namespace icnp;

namespace {

void clear_tape() { Tape::active().clear(); }

double fd_loss_matmul(const Tensor& a, const Tensor& b) {
    NoGradGuard guard;
    Tensor c = matmul(a, b);
    // Weighted sum so every entry matters differently.
    double acc = 0.0;
    for (std::size_t i = 0; i < c.numel(); ++i) acc += std::sin(static_cast<double>(i) + 1.0) * c.data()[i];
    return acc;
}

}  // namespace

TEST_CASE("matmul basics and errors") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor r = matmul(eye, m);
    CHECK(r.values() == std::vector<double>{1, 2, 3, 4});

    Tensor a = Tensor::from({1, 2}, {1, 0});
    Tensor b = Tensor::from({2, 1}, {0, 1});
    CHECK(matmul(a, b).item() == 0.0);

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
    clear_tape();
}

TEST_CASE("matmul gradients vs central finite differences") {
    Rng rng(11);
    Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);

    clear_tape();
    Tensor c = matmul(a, b);
    std::vector<double> w(c.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(static_cast<double>(i) + 1.0);
    Tensor loss = sum(mul(c, Tensor::from(c.shape(), w)));
    backward(loss);

    auto fd_a = test::numeric_grad([&] { return fd_loss_matmul(a, b); }, a, 1e-5);
    auto fd_b = test::numeric_grad([&] { return fd_loss_matmul(a, b); }, b, 1e-5);
    CHECK(test::max_rel_err(a.grad(), fd_a) < 1e-6);
    CHECK(test::max_rel_err(b.grad(), fd_b) < 1e-6);
    clear_tape();
}

TEST_CASE("softmax values, stability, invariance") {
    Tensor s = softmax(Tensor::from({2}, {0.0, 0.0}), 0);
    CHECK(s.data()[0] == doctest::Approx(0.5).epsilon(1e-12));

    Tensor big = softmax(Tensor::from({2}, {1000.0, 1000.0}), 0);
    CHECK(std::isfinite(big.data()[0]));
    CHECK(big.data()[0] == doctest::Approx(0.5).epsilon(1e-12));

    Tensor t = softmax(Tensor::from({2}, {std::log(1.0), std::log(3.0)}), 0);
    CHECK(t.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(t.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

    // Rows sum to one and shifting a row by a constant leaves it unchanged.
    Rng rng(5);
    Tensor x = Tensor::randn({4, 7}, rng);
    Tensor sm = softmax(x, 1);
    for (std::size_t i = 0; i < 4; ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < 7; ++j) rs += sm.data()[i * 7 + j];
        CHECK(std::abs(rs - 1.0) < 1e-12);
    }
    Tensor shifted = x;
    std::vector<double> sv = x.values();
    for (std::size_t j = 0; j < 7; ++j) sv[0 * 7 + j] += 123.456;
    Tensor sm2 = softmax(Tensor::from({4, 7}, sv), 1);
    for (std::size_t j = 0; j < 7; ++j)
        CHECK(std::abs(sm2.data()[j] - sm.data()[j]) < 1e-12);

    CHECK_THROWS_AS(softmax(x, 2), ShapeError);
    clear_tape();
}

TEST_CASE("softmax gradient") {
    Rng rng(17);
    Tensor x = Tensor::randn({3, 5}, rng, 1.0, true);
    clear_tape();
    Tensor sm = softmax(x, 1);
    std::vector<double> w(sm.numel());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::cos(static_cast<double>(i));
    Tensor loss = sum(mul(sm, Tensor::from(sm.shape(), w)));
    backward(loss);
    auto fd = test::numeric_grad(
        [&] {
            NoGradGuard g;
            Tensor s2 = softmax(x, 1);
            double acc = 0.0;
            for (std::size_t i = 0; i < s2.numel(); ++i) acc += w[i] * s2.data()[i];
            return acc;
        },
        x, 1e-5);
    CHECK(test::max_rel_err(x.grad(), fd) < 1e-5);
    clear_tape();
}

TEST_CASE("layer_norm statistics and degenerate rows") {
    Tensor gain = Tensor::full({4}, 1.0);
    Tensor bias = Tensor::zeros({4});

    Tensor flat = layer_norm(Tensor::from({1, 4}, {3, 3, 3, 3}), gain, bias);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(flat.data()[j]) < 1e-4);

    Tensor pm = layer_norm(Tensor::from({1, 2}, {-1.0, 1.0}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
    CHECK(pm.data()[0] == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(pm.data()[1] == doctest::Approx(1.0).epsilon(1e-5));

    Rng rng(3);
    Tensor x = Tensor::randn({6, 16}, rng, 2.0);
    Tensor g16 = Tensor::full({16}, 1.0), b16 = Tensor::zeros({16});
    Tensor out = layer_norm(x, g16, b16);
    for (std::size_t r = 0; r < 6; ++r) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < 16; ++j) mean += out.data()[r * 16 + j];
        mean /= 16.0;
        for (std::size_t j = 0; j < 16; ++j) {
            const double d = out.data()[r * 16 + j] - mean;
            var += d * d;
        }
        var /= 16.0;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }
    CHECK_THROWS_AS(layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4})), ShapeError);
    clear_tape();
}

TEST_CASE("layer_norm gradient") {
    Rng rng(23);
    Tensor x = Tensor::randn({3, 8}, rng, 1.5, true);
    Tensor gain = Tensor::randn({8}, rng, 0.3, true);
    Tensor bias = Tensor::randn({8}, rng, 0.3, true);
    std::vector<double> w(24);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * static_cast<double>(i));

    auto value = [&] {
        NoGradGuard g;
        Tensor out = layer_norm(x, gain, bias);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.numel(); ++i) acc += w[i] * out.data()[i];
        return acc;
    };
    clear_tape();
    Tensor loss = sum(mul(layer_norm(x, gain, bias), Tensor::from({3, 8}, w)));
    backward(loss);
    CHECK(test::max_rel_err(x.grad(), test::numeric_grad(value, x, 1e-5)) < 1e-5);
    CHECK(test::max_rel_err(gain.grad(), test::numeric_grad(value, gain, 1e-5)) < 1e-5);
    CHECK(test::max_rel_err(bias.grad(), test::numeric_grad(value, bias, 1e-5)) < 1e-5);
    clear_tape();
}

TEST_CASE("mlp identity and zero cases plus gradient") {
    // Zero weights and biases give zero output.
    MlpWeights zero;
    zero.w1 = Tensor::zeros({3, 4}, true);
    zero.b1 = Tensor::zeros({4}, true);
    zero.w2 = Tensor::zeros({4, 4}, true);
    zero.b2 = Tensor::zeros({4}, true);
    zero.w3 = Tensor::zeros({4, 2}, true);
    zero.b3 = Tensor::zeros({2}, true);
    Rng rng(9);
    Tensor x = Tensor::randn({5, 3}, rng);
    Tensor out = mlp(x, zero);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);

    // All-identity 1x1 layers pass a positive input through.
    MlpWeights id;
    id.w1 = Tensor::from({1, 1}, {1.0});
    id.b1 = Tensor::zeros({1});
    id.w2 = Tensor::from({1, 1}, {1.0});
    id.b2 = Tensor::zeros({1});
    id.w3 = Tensor::from({1, 1}, {1.0});
    id.b3 = Tensor::zeros({1});
    CHECK(mlp(Tensor::from({1, 1}, {2.0}), id).item() == doctest::Approx(2.0));

    // Gradient check through a small random MLP.
    MlpWeights w = make_mlp(3, 6, 2, rng);
    Tensor xin = Tensor::randn({4, 3}, rng, 1.0, true);
    std::vector<double> mix(8);
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = std::cos(1.3 * static_cast<double>(i));
    auto value = [&] {
        NoGradGuard g;
        Tensor o = mlp(xin, w);
        double acc = 0.0;
        for (std::size_t i = 0; i < o.numel(); ++i) acc += mix[i] * o.data()[i];
        return acc;
    };
    clear_tape();
    backward(sum(mul(mlp(xin, w), Tensor::from({4, 2}, mix))));
    CHECK(test::max_rel_err(xin.grad(), test::numeric_grad(value, xin, 1e-5)) < 1e-6);
    CHECK(test::max_rel_err(w.w1.grad(), test::numeric_grad(value, w.w1, 1e-5)) < 1e-6);
    CHECK(test::max_rel_err(w.b3.grad(), test::numeric_grad(value, w.b3, 1e-5)) < 1e-6);
    clear_tape();
}

TEST_CASE("softplus asymptotes, positivity, monotonicity") {
    CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(softplus(Tensor::scalar(100.0)).item() == doctest::Approx(100.0).epsilon(1e-12));
    const double tiny = softplus(Tensor::scalar(-100.0)).item();
    CHECK(tiny > 0.0);
    CHECK(tiny == doctest::Approx(std::exp(-100.0)).epsilon(1e-10));

    double prev = -1.0;
    for (double v = -30.0; v <= 30.0; v += 0.5) {
        const double s = softplus(Tensor::scalar(v)).item();
        CHECK(s > 0.0);
        CHECK(s > prev);
        prev = s;
    }
    clear_tape();
}

TEST_CASE("gaussian log likelihood values and gradients") {
    Tensor y = Tensor::from({1}, {0.0});
    Tensor mean = Tensor::from({1}, {0.0}, true);
    Tensor var = Tensor::from({1}, {1.0}, true);
    clear_tape();
    Tensor ll = gaussian_log_likelihood(y, mean, var);
    CHECK(ll.item() == doctest::Approx(-0.9189385332046727).epsilon(1e-12));

    // y == mean gives -0.5 log(2 pi v) per point.
    for (double v : {0.3, 1.0, 4.2}) {
        Tensor l2 = gaussian_log_likelihood(Tensor::from({2}, {1.0, -2.0}), Tensor::from({2}, {1.0, -2.0}),
                                            Tensor::full({2}, v));
        CHECK(l2.item() ==
              doctest::Approx(2.0 * -0.5 * std::log(2.0 * 3.141592653589793 * v)).epsilon(1e-12));
    }

    // Analytic mean-gradient (y - mean)/var and finite differences.
    Rng rng(31);
    Tensor ys = Tensor::randn({5}, rng);
    Tensor ms = Tensor::randn({5}, rng, 1.0, true);
    Tensor vs = Tensor::from({5}, {0.5, 1.0, 2.0, 0.7, 1.3}, true);
    clear_tape();
    backward(gaussian_log_likelihood(ys, ms, vs));
    for (std::size_t i = 0; i < 5; ++i) {
        const double analytic = (ys.data()[i] - ms.data()[i]) / vs.data()[i];
        CHECK(ms.grad()[i] == doctest::Approx(analytic).epsilon(1e-12));
    }
    auto value = [&] {
        NoGradGuard g;
        return gaussian_log_likelihood(ys, ms, vs).item();
    };
    CHECK(test::max_rel_err(ms.grad(), test::numeric_grad(value, ms, 1e-5)) < 1e-6);
    CHECK(test::max_rel_err(vs.grad(), test::numeric_grad(value, vs, 1e-5)) < 1e-6);

    CHECK_THROWS_AS(gaussian_log_likelihood(ys, ms, Tensor::zeros({5})), std::domain_error);
    clear_tape();
}

TEST_CASE("backward basics: sum, square, reachability") {
    clear_tape();
    Tensor x = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
    backward(sum(x));
    CHECK(x.grad() == std::vector<double>{1, 1, 1});

    clear_tape();
    Tensor s = Tensor::scalar(3.0, true);
    backward(mul(s, s));
    CHECK(s.grad()[0] == doctest::Approx(6.0));

    // Gradients of branches not reaching the loss stay untouched.
    clear_tape();
    Tensor used = Tensor::scalar(2.0, true);
    Tensor unused = Tensor::scalar(5.0, true);
    Tensor dead = mul(unused, unused);
    (void)dead;
    backward(mul(used, used));
    CHECK(used.grad()[0] == doctest::Approx(4.0));
    CHECK(unused.grad()[0] == 0.0);

    CHECK_THROWS_AS(backward(Tensor::from({2}, {1.0, 2.0}, true)), ShapeError);
    clear_tape();
}

TEST_CASE("per-op finite-difference property over random inputs") {
    Rng rng(101);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor a = Tensor::randn({2, 3}, rng, 1.0, true);
        Tensor b = Tensor::randn({2, 3}, rng, 1.0, true);
        std::vector<double> w(6);
        for (auto& e : w) e = rng.normal();
        Tensor wt = Tensor::from({2, 3}, w);

        auto build = [&](bool record) {
            Tensor prod = mul(relu(a), softplus(b));
            Tensor sm = softmax(prod, 1);
            return sum(mul(sm, wt));
        };
        clear_tape();
        backward(build(true));
        auto value = [&] {
            NoGradGuard g;
            return build(false).item();
        };
        CHECK(test::max_rel_err(a.grad(), test::numeric_grad(value, a, 1e-5)) < 1e-5);
        CHECK(test::max_rel_err(b.grad(), test::numeric_grad(value, b, 1e-5)) < 1e-5);
        clear_tape();
    }
}

TEST_CASE("adamw: zero grads, clipping, hand-evaluated step") {
    // Zero grads: only weight decay moves the parameter.
    {
        Tensor p = Tensor::from({1}, {2.0}, true);
        p.grad();  // allocate zeros
        AdamW opt({{"p", p}}, {.lr = 0.1, .weight_decay = 0.5, .clip = 0.5});
        opt.step();
        CHECK(p.data()[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-12));
    }

    // Global-norm clipping at 0.5 scales a unit-norm gradient by one half.
    {
        Tensor p1 = Tensor::from({1}, {0.0}, true);
        Tensor p2 = Tensor::from({1}, {0.0}, true);
        p1.grad()[0] = 0.6;
        p2.grad()[0] = 0.8;  // global norm 1.0
        AdamW opt({{"a", p1}, {"b", p2}}, {.weight_decay = 0.0, .clip = 0.5});
        const double norm = opt.clip_gradients();
        CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(p1.grad()[0] == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(p2.grad()[0] == doctest::Approx(0.4).epsilon(1e-12));
        double post = std::sqrt(p1.grad()[0] * p1.grad()[0] + p2.grad()[0] * p2.grad()[0]);
        CHECK(post <= 0.5 + 1e-12);
    }

    // One step on a scalar parameter, evaluated from the update equations:
    // m = 0.01, v = 1e-5, mhat = 0.1, vhat = 0.01,
    // delta = lr * 0.1 / (0.1 + 1e-8).
    {
        Tensor p = Tensor::from({1}, {1.0}, true);
        p.grad()[0] = 0.1;
        AdamW opt({{"p", p}}, {.lr = 5e-4, .weight_decay = 0.0, .clip = 0.5});
        opt.step();
        const double expected = 1.0 - 5e-4 * 0.1 / (std::sqrt(0.01) + 1e-8);
        CHECK(p.data()[0] == doctest::Approx(expected).epsilon(1e-15));
        CHECK(opt.step_count() == 1);
    }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(77);
    Checkpoint ckpt;
    ckpt.meta["model"] = "kind=cnp d_x=1";
    ckpt.meta["note"] = "value with = sign";
    Tensor a = Tensor::randn({3, 5}, rng);
    Tensor b = Tensor::randn({7}, rng, 1e-30);  // denormal-ish values too
    b.data()[0] = 0.1 + 0.2;                    // not exactly representable
    ckpt.put("layer.w", a.shape(), a.values());
    ckpt.put("layer.b", b.shape(), b.values());

    const std::string path = "/tmp/icnp_test_ckpt.bin";
    save_checkpoint(path, ckpt);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.meta.at("model") == "kind=cnp d_x=1");
    CHECK(back.meta.at("note") == "value with = sign");
    CHECK(back.get("layer.w") == a.values());
    CHECK(back.get("layer.b") == b.values());
    CHECK(back.entries.at("layer.w").first == Shape{3, 5});

    CHECK_THROWS_AS(back.get("missing"), DataError);
}

TEST_CASE("rng determinism and stream splitting") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng base(7);
    Rng s1 = base.split(1), s2 = base.split(2);
    CHECK(s1.next_u64() != s2.next_u64());

    // Serializable state: (key, counter) restores the stream exactly.
    Rng c(99);
    c.normal();
    c.uniform();
    Rng restored(c.key(), c.counter(), true);
    CHECK(restored.next_u64() == c.next_u64());

    // Rough range sanity for uniform.
    Rng u(3);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}
