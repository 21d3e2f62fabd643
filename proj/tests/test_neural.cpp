#include <doctest.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "amsbench/errors.hpp"
#include "amsbench/neural.hpp"

using namespace ams;
using namespace ams::nn;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("neural");

namespace {

Tensor randn(Rng& rng, std::vector<int> shape, double sd = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& x : t.v) x = rng.normal(0.0, sd);
    return t;
}

Tensor coin_labels(Rng& rng, std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& x : t.v) x = rng.bernoulli(0.5) ? 1.0 : 0.0;
    return t;
}

void append(std::vector<Parameter*>& dst, std::vector<Parameter*> src) {
    dst.insert(dst.end(), src.begin(), src.end());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const char* tag)
        : path(fs::temp_directory_path() /
               (std::string("ams_nn_") + tag + "_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    const Tensor t = Tensor::zeros({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.shape_str() == "(2, 3)");
    CHECK(Tensor::full({2}, 7.0).v == std::vector<double>{7.0, 7.0});
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), InternalError);
    CHECK_THROWS_AS(require_shape(t, {3, 2}, "probe"), InternalError);
}

TEST_CASE("linear maps identity and constants exactly") {
    Rng rng(1);
    Linear lin("lin", 3, 3, rng);
    // identity weights, zero bias
    std::fill(lin.w.value.v.begin(), lin.w.value.v.end(), 0.0);
    for (int i = 0; i < 3; ++i) lin.w.value[static_cast<std::size_t>(i * 3 + i)] = 1.0;
    std::fill(lin.b.value.v.begin(), lin.b.value.v.end(), 0.0);
    const Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(lin.forward(x).v == x.v);

    std::fill(lin.w.value.v.begin(), lin.w.value.v.end(), 0.0);
    std::fill(lin.b.value.v.begin(), lin.b.value.v.end(), 4.5);
    for (const double y : lin.forward(x).v) CHECK(y == 4.5);

    CHECK_THROWS_AS(lin.forward(Tensor::zeros({2, 4})), InternalError);
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(7);
    Linear lin("lin", 4, 2, rng);
    const Tensor x = randn(rng, {3, 4});
    const Tensor y = coin_labels(rng, {3, 2});
    const Tensor mask = Tensor::full({3, 2}, 1.0);

    const auto loss = [&] { return bce_with_logits(lin.forward(x), y, mask, 1.3).loss; };
    loss();
    lin.backward(bce_with_logits(lin.forward(x), y, mask, 1.3).grad_logits);
    const auto params = lin.parameters();
    const auto res = check_gradients(loss, params);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv1d identity, bias, and width guards") {
    Rng rng(2);
    Conv1d conv("conv", 1, 1, 1, rng);
    conv.w.value[0] = 1.0;
    conv.b.value[0] = 0.0;
    const Tensor x({1, 1, 4}, {1, 2, 3, 4});
    CHECK(conv.forward(x).v == x.v);

    Conv1d wide("wide", 2, 3, 3, rng);
    std::fill(wide.b.value.v.begin(), wide.b.value.v.end(), 0.25);
    const Tensor zeros = Tensor::zeros({2, 2, 5});
    for (const double y : wide.forward(zeros).v) CHECK(y == 0.25);

    CHECK_THROWS_AS(wide.forward(Tensor::zeros({1, 2, 2})), ConfigError);   // kernel 3 > length 2
    CHECK_THROWS_AS(wide.forward(Tensor::zeros({1, 3, 5})), InternalError); // wrong channels
}

TEST_CASE("conv1d gradients match finite differences") {
    Rng rng(11);
    Conv1d c1("c1", 2, 3, 3, rng);
    Conv1d c2("c2", 3, 1, 3, rng);
    Relu relu;
    const Tensor x = randn(rng, {2, 2, 6});
    const Tensor y = coin_labels(rng, {2, 1, 6});
    const Tensor mask = Tensor::full({2, 1, 6}, 1.0);

    const auto loss = [&] {
        return bce_with_logits(c2.forward(relu.forward(c1.forward(x))), y, mask, 1.0).loss;
    };
    loss();
    c1.backward(relu.backward(
        c2.backward(bce_with_logits(c2.forward(relu.forward(c1.forward(x))), y, mask, 1.0)
                        .grad_logits)));
    std::vector<Parameter*> params;
    append(params, c1.parameters());
    append(params, c2.parameters());
    const auto res = check_gradients(loss, params);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("layernorm normalizes rows and backpropagates") {
    Rng rng(3);
    LayerNorm ln("ln", 5);
    const Tensor x = randn(rng, {4, 5}, 3.0);
    const Tensor y = ln.forward(x);
    for (int r = 0; r < 4; ++r) {
        double mean = 0, var = 0;
        for (int f = 0; f < 5; ++f) mean += y[static_cast<std::size_t>(r * 5 + f)];
        mean /= 5;
        for (int f = 0; f < 5; ++f) {
            const double d = y[static_cast<std::size_t>(r * 5 + f)] - mean;
            var += d * d;
        }
        var /= 5;
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shrinks it slightly
    }
    // constant rows collapse to the beta offset
    const Tensor flat = Tensor::full({2, 5}, 3.25);
    for (const double v : ln.forward(flat).v) CHECK(v == 0.0);

    Linear lin("lin", 5, 5, rng);
    Linear head("head", 5, 1, rng);
    const Tensor labels = coin_labels(rng, {4, 1});
    const Tensor mask = Tensor::full({4, 1}, 1.0);
    const auto loss = [&] {
        return bce_with_logits(head.forward(ln.forward(lin.forward(x))), labels, mask, 1.0).loss;
    };
    loss();
    lin.backward(ln.backward(head.backward(
        bce_with_logits(head.forward(ln.forward(lin.forward(x))), labels, mask, 1.0)
            .grad_logits)));
    std::vector<Parameter*> params;
    append(params, lin.parameters());
    append(params, ln.parameters());
    append(params, head.parameters());
    const auto res = check_gradients(loss, params);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("relu gates values and gradients") {
    Relu relu;
    const Tensor x({1, 4}, {-2.0, 0.0, 0.5, 3.0});
    CHECK(relu.forward(x).v == std::vector<double>{0.0, 0.0, 0.5, 3.0});
    const Tensor g = Tensor::full({1, 4}, 1.0);
    CHECK(relu.backward(g).v == std::vector<double>{0.0, 0.0, 1.0, 1.0});
}

TEST_CASE("dropout scales, masks, and reproduces") {
    Dropout d(0.5, 123);
    const Tensor x = Tensor::full({1, 1000}, 1.0);
    const Tensor y = d.forward(x);
    int kept = 0;
    for (const double v : y.v) {
        CHECK((v == 0.0 || v == 2.0));  // inverted scaling by 1/(1-p)
        kept += v != 0.0;
    }
    CHECK(kept > 400);
    CHECK(kept < 600);
    // backward uses the same mask
    const Tensor gx = d.backward(Tensor::full({1, 1000}, 1.0));
    for (std::size_t i = 0; i < gx.numel(); ++i) CHECK(gx[i] == y[i]);

    Dropout d2(0.5, 123);
    CHECK(d2.forward(x).v == y.v);  // same seed, same mask

    d.set_training(false);
    CHECK(d.forward(x).v == x.v);
    CHECK_THROWS_AS(Dropout(1.0, 0), ConfigError);
}

TEST_CASE("gru zero params and causality") {
    Rng rng(5);
    GruLayer gru("gru", 2, 3, rng);
    for (Parameter* p : gru.parameters()) std::fill(p->value.v.begin(), p->value.v.end(), 0.0);
    const Tensor mask = Tensor::full({1, 4}, 1.0);
    const Tensor h = gru.forward(Tensor::zeros({1, 4, 2}), mask);
    for (const double v : h.v) CHECK(v == 0.0);

    GruLayer live("live", 2, 3, rng);
    Rng xr(9);
    Tensor x = randn(xr, {1, 6, 2});
    const Tensor mask6 = Tensor::full({1, 6}, 1.0);
    const Tensor base = live.forward(x, mask6);
    x[static_cast<std::size_t>((5 * 2))] += 10.0;  // perturb t=5
    const Tensor bumped = live.forward(x, mask6);
    for (int t = 0; t < 5; ++t)
        for (int j = 0; j < 3; ++j)
            CHECK(base[static_cast<std::size_t>(t * 3 + j)] ==
                  bumped[static_cast<std::size_t>(t * 3 + j)]);
    CHECK(base[static_cast<std::size_t>(5 * 3)] != bumped[static_cast<std::size_t>(5 * 3)]);
}

TEST_CASE("gru masked steps carry state and ignore input") {
    Rng rng(13);
    GruLayer gru("gru", 2, 3, rng);
    Tensor x = randn(rng, {1, 5, 2});
    Tensor mask = Tensor::full({1, 5}, 1.0);
    mask[2] = 0.0;
    const Tensor h = gru.forward(x, mask);
    for (int j = 0; j < 3; ++j)
        CHECK(h[static_cast<std::size_t>(2 * 3 + j)] == h[static_cast<std::size_t>(1 * 3 + j)]);
    // garbage at the masked step changes nothing downstream
    x[2 * 2] = 1e6;
    x[2 * 2 + 1] = -1e6;
    CHECK(gru.forward(x, mask).v == h.v);
}

TEST_CASE("loss is invariant to appended masked padding") {
    Rng rng(17);
    GruLayer gru("gru", 2, 4, rng);
    Linear head("head", 4, 1, rng);
    const Tensor x = randn(rng, {2, 3, 2});
    const Tensor labels = coin_labels(rng, {2, 3, 1});
    const Tensor mask = Tensor::full({2, 3}, 1.0);
    const double base =
        bce_with_logits(head.forward(gru.forward(x, mask)), labels, mask, 1.0).loss;

    Tensor xp = Tensor::full({2, 5, 2}, 99.0);  // junk in the pad region
    Tensor lp = Tensor::zeros({2, 5, 1});
    Tensor mp = Tensor::zeros({2, 5});
    for (int b = 0; b < 2; ++b)
        for (int t = 0; t < 3; ++t) {
            for (int i = 0; i < 2; ++i)
                xp[static_cast<std::size_t>((b * 5 + t) * 2 + i)] =
                    x[static_cast<std::size_t>((b * 3 + t) * 2 + i)];
            lp[static_cast<std::size_t>(b * 5 + t)] = labels[static_cast<std::size_t>(b * 3 + t)];
            mp[static_cast<std::size_t>(b * 5 + t)] = 1.0;
        }
    const double padded =
        bce_with_logits(head.forward(gru.forward(xp, mp)), lp, mp, 1.0).loss;
    CHECK(padded == base);
}

TEST_CASE("gru gradients match finite differences") {
    Rng rng(23);
    GruLayer gru("gru", 3, 4, rng);
    Linear head("head", 4, 1, rng);
    const Tensor x = randn(rng, {2, 3, 3});
    const Tensor labels = coin_labels(rng, {2, 3, 1});
    Tensor mask = Tensor::full({2, 3}, 1.0);
    mask[4] = 0.0;  // one masked step exercises the carry path

    const auto loss = [&] {
        return bce_with_logits(head.forward(gru.forward(x, mask)), labels, mask, 1.5).loss;
    };
    loss();
    gru.backward(head.backward(
        bce_with_logits(head.forward(gru.forward(x, mask)), labels, mask, 1.5).grad_logits));
    std::vector<Parameter*> params;
    append(params, gru.parameters());
    append(params, head.parameters());
    const auto res = check_gradients(loss, params);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("stacked gru gradients flow through both layers") {
    Rng rng(29);
    GruStack stack("stack", 3, 4, 2, 0.0, rng);
    Linear head("head", 4, 1, rng);
    const Tensor x = randn(rng, {2, 4, 3});
    const Tensor labels = coin_labels(rng, {2, 4, 1});
    const Tensor mask = Tensor::full({2, 4}, 1.0);

    const auto loss = [&] {
        return bce_with_logits(head.forward(stack.forward(x, mask)), labels, mask, 1.0).loss;
    };
    loss();
    stack.backward(head.backward(
        bce_with_logits(head.forward(stack.forward(x, mask)), labels, mask, 1.0).grad_logits));
    std::vector<Parameter*> params = stack.parameters();
    CHECK(params.size() == 8);  // 4 tensors per layer
    append(params, head.parameters());
    const auto res = check_gradients(loss, params);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("bce with logits hits the analytic anchors") {
    const Tensor zero({1}, {0.0});
    const Tensor one({1}, {1.0});
    const Tensor on({1}, {1.0});
    const auto r = bce_with_logits(zero, one, on, 1.0);
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(r.valid == 1);

    // pos_weight scales the positive-example gradient exactly
    const Tensor logits({1}, {0.3});
    const auto g1 = bce_with_logits(logits, one, on, 1.0);
    const auto g2 = bce_with_logits(logits, one, on, 2.0);
    CHECK(g2.grad_logits[0] == 2.0 * g1.grad_logits[0]);

    // masked steps contribute nothing
    const Tensor l2({2}, {0.0, 50.0});
    const Tensor y2({2}, {1.0, 1.0});
    const Tensor m2({2}, {1.0, 0.0});
    const auto masked = bce_with_logits(l2, y2, m2, 1.0);
    CHECK(masked.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(masked.grad_logits[1] == 0.0);

    const auto empty = bce_with_logits(l2, y2, Tensor::zeros({2}), 1.0);
    CHECK(empty.loss == 0.0);
    CHECK(empty.valid == 0);

    CHECK_THROWS_AS(bce_with_logits(l2, y2, Tensor::zeros({3}), 1.0), InternalError);
}

TEST_CASE("adamw steps, clips, and decouples decay") {
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.0;

    Parameter p("p", Tensor({1}, {1.0}));
    AdamW opt({&p}, cfg);
    opt.step();  // zero gradient
    CHECK(p.value[0] == 1.0);

    // global-norm clipping to exactly 2.0
    Parameter q("q", Tensor({2}, {0.0, 0.0}));
    q.grad = Tensor({2}, {6.0, 8.0});
    AdamW opt2({&q}, cfg);
    const double pre = opt2.clip_gradients();
    CHECK(pre == doctest::Approx(10.0).epsilon(1e-15));
    CHECK(std::abs(global_grad_norm(std::array<Parameter*, 1>{&q}) - 2.0) < 1e-12);
    CHECK(q.grad[0] == doctest::Approx(1.2).epsilon(1e-12));

    // first step moves by ~ -lr * sign(g)
    Parameter r("r", Tensor({1}, {1.0}));
    r.grad[0] = 0.5;
    AdamW opt3({&r}, cfg);
    opt3.step();
    CHECK(r.value[0] == doctest::Approx(1.0 - cfg.lr).epsilon(1e-6));

    // decoupled decay: the difference vs a decay-free run is exactly lr*wd*theta
    Parameter a("a", Tensor({1}, {2.0}));
    Parameter b("b", Tensor({1}, {2.0}));
    a.grad[0] = b.grad[0] = 0.3;
    TrainConfig with_wd = cfg;
    with_wd.weight_decay = 0.01;
    AdamW oa({&a}, cfg), ob({&b}, with_wd);
    oa.step();
    ob.step();
    CHECK(a.value[0] - b.value[0] == doctest::Approx(cfg.lr * 0.01 * 2.0).epsilon(1e-12));

    Parameter bad("bad", Tensor({1}, {0.0}));
    bad.grad[0] = std::numeric_limits<double>::quiet_NaN();
    AdamW opt4({&bad}, cfg);
    CHECK_THROWS_AS(opt4.step(), TrainError);

    TrainConfig broken;
    broken.clip_norm = 0.0;
    CHECK_THROWS_AS(broken.validate(), ConfigError);
    broken = {};
    broken.lr = -1;
    CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("randomized gradcheck across seeds") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CAPTURE(seed);
        Rng rng(Rng::splitmix(seed));
        GruStack stack("stack", 4, 3, 2, 0.0, rng);
        LayerNorm ln("ln", 4);
        Linear proj("proj", 5, 4, rng);
        Relu relu;
        Linear head("head", 3, 2, rng);
        const Tensor x = randn(rng, {2, 3, 5});
        const Tensor labels = coin_labels(rng, {2, 3, 2});
        Tensor mask = Tensor::full({2, 3}, 1.0);
        mask[rng.uniform_int(6)] = 0.0;
        Tensor mask3 = Tensor::zeros({2, 3, 2});
        for (int b = 0; b < 2; ++b)
            for (int t = 0; t < 3; ++t)
                for (int k = 0; k < 2; ++k)
                    mask3[static_cast<std::size_t>((b * 3 + t) * 2 + k)] =
                        mask[static_cast<std::size_t>(b * 3 + t)];

        const auto loss = [&] {
            const Tensor h = stack.forward(ln.forward(relu.forward(proj.forward(x))), mask);
            return bce_with_logits(head.forward(h), labels, mask3, 1.8).loss;
        };
        loss();
        const Tensor grad =
            bce_with_logits(head.forward(stack.forward(
                                ln.forward(relu.forward(proj.forward(x))), mask)),
                            labels, mask3, 1.8)
                .grad_logits;
        proj.backward(relu.backward(ln.backward(stack.backward(head.backward(grad)))));
        std::vector<Parameter*> params;
        append(params, proj.parameters());
        append(params, ln.parameters());
        append(params, stack.parameters());
        append(params, head.parameters());
        const auto res = check_gradients(loss, params);
        CAPTURE(res.worst);
        CHECK(res.max_rel_err < 1e-5);
    }
}

TEST_CASE("checkpoints round-trip through float32") {
    TempDir dir("ckpt");
    Rng rng(41);
    Linear lin("lin", 3, 2, rng);
    GruLayer gru("gru", 2, 2, rng);
    std::vector<Parameter*> params;
    append(params, lin.parameters());
    append(params, gru.parameters());

    const std::string path = (dir.path / "model.ckpt").string();
    save_checkpoint(path, params, 0xabcdef, 7);

    std::vector<double> expected;
    for (const Parameter* p : params)
        for (const double v : p->value.v) expected.push_back(static_cast<double>(static_cast<float>(v)));

    for (Parameter* p : params) std::fill(p->value.v.begin(), p->value.v.end(), 0.0);
    load_checkpoint(path, params);
    std::size_t k = 0;
    for (const Parameter* p : params)
        for (const double v : p->value.v) CHECK(v == expected[k++]);

    // identical construction gives an identical payload hash
    Rng rng2(41);
    Linear lin2("lin", 3, 2, rng2);
    GruLayer gru2("gru", 2, 2, rng2);
    std::vector<Parameter*> params2;
    append(params2, lin2.parameters());
    append(params2, gru2.parameters());
    const std::string path2 = (dir.path / "model2.ckpt").string();
    save_checkpoint(path2, params2, 0xabcdef, 7);
    CHECK(checkpoint_hash(path) == checkpoint_hash(path2));

    // manifest mismatches are refused
    std::vector<Parameter*> renamed = params;
    Parameter other("other.w", Tensor::zeros({3, 2}));
    renamed[0] = &other;
    CHECK_THROWS_AS(load_checkpoint(path, renamed), ParseError);
    CHECK_THROWS_AS(load_checkpoint((dir.path / "absent.ckpt").string(), params), IoError);
}

TEST_SUITE_END();
