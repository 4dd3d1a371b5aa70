#include <doctest.h>

#include <cmath>

#include "digan/tensor.hpp"
#include "test_util.hpp"

using namespace digan;
using testutil::max_fd_rel_error;
using testutil::random_tensor;

TEST_CASE("matmul identity and hand-expanded product") {
    Tensor eye = Tensor::from_matrix(Eigen::Matrix2d::Identity());
    Tensor a = Tensor::from_matrix((Eigen::Matrix2d() << 1, 2, 3, 4).finished());
    CHECK(matmul(eye, a).data() == a.data());

    Tensor b = Tensor::from_matrix((Eigen::Matrix2d() << 5, 6, 7, 8).finished());
    Tensor c = matmul(a, b);
    // confirmed by a naive triple loop
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(2, 2);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            for (int k = 0; k < 2; ++k) expect(i, j) += a.matrix()(i, k) * b.matrix()(k, j);
        }
    }
    CHECK(expect(0, 0) == 19);
    CHECK(expect(1, 1) == 50);
    CHECK(c.to_matrix() == expect);

    Tensor zero = Tensor::zeros({2, 2});
    CHECK(matmul(zero, b).data().isZero());
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2 x 3]"), DimensionError);
}

TEST_CASE("matmul backward matches dC rules") {
    Rng rng(11);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    Tensor loss = sum(matmul(a, b));
    backward(loss);
    // dA = dC * B^T with dC all ones
    Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(3, 2);
    Eigen::MatrixXd da = ones * b.to_matrix().transpose();
    Eigen::MatrixXd db = a.to_matrix().transpose() * ones;
    CHECK(Eigen::Map<const RowMat>(a.grad().data(), 3, 4).isApprox(da, 1e-12));
    CHECK(Eigen::Map<const RowMat>(b.grad().data(), 4, 2).isApprox(db, 1e-12));
}

TEST_CASE("softmax_rows analytic cases") {
    Tensor x = Tensor::from_matrix((Eigen::MatrixXd(1, 3) << 0, 0, 0).finished());
    Tensor sx = softmax_rows(x);
    for (double v : sx.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));

    Tensor y = Tensor::from_matrix((Eigen::MatrixXd(1, 2) << 0, std::log(2.0)).finished());
    Tensor sy = softmax_rows(y);
    CHECK(sy.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-14));
    CHECK(sy.data()[1] == doctest::Approx(2.0 / 3).epsilon(1e-14));

    Tensor z = Tensor::from_matrix((Eigen::MatrixXd(1, 3) << 1, 2, 3).finished());
    Tensor sz = softmax_rows(z);
    // direct exp-normalize oracle
    double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(sz.data()[i] - std::exp(1.0 + i) / denom) < 1e-12);
    }
}

TEST_CASE("softmax_rows properties: row sums and shift invariance") {
    Rng rng(5);
    for (int it = 0; it < 50; ++it) {
        const auto r = static_cast<Eigen::Index>(rng.uniform_int(1, 5));
        const auto c = static_cast<Eigen::Index>(rng.uniform_int(1, 6));
        Tensor x = random_tensor({r, c}, rng, false, 3.0);
        Tensor s = softmax_rows(x);
        for (Eigen::Index i = 0; i < r; ++i) {
            CHECK(std::abs(s.data().segment(i * c, c).sum() - 1.0) <= 1e-12);
        }
        const double shift = rng.uniform(-5.0, 5.0);
        Tensor shifted = softmax_rows(affine(x, 1.0, shift));
        CHECK((s.data() - shifted.data()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("softmax_rows rejects NaN") {
    Eigen::MatrixXd m(1, 2);
    m << 1.0, std::nan("");
    CHECK_THROWS_AS(softmax_rows(Tensor::from_matrix(m)), NumericError);
}

TEST_CASE("sigmoid saturation and analytic values") {
    Tensor x = Tensor::from_flat({3}, (Eigen::VectorXd(3) << 0.0, -100.0, std::log(3.0)).finished());
    Tensor y = sigmoid(x);
    CHECK(y.data()[0] == 0.5);
    CHECK(y.data()[1] >= 0.0);
    CHECK(y.data()[1] < 1e-40);
    CHECK(y.data()[2] == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("conv2d identity kernel passes input through") {
    Rng rng(3);
    Tensor x = random_tensor({1, 3, 3}, rng, false);
    Tensor k = Tensor::full({1, 1, 1, 1}, 1.0);
    Tensor bias = Tensor::zeros({1});
    CHECK(conv2d_single(x, k, bias).data() == x.data());
}

TEST_CASE("conv2d even kernel matches the sliding-window oracle") {
    Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
    Tensor bias = Tensor::zeros({1});
    Tensor y = conv2d(x, k, bias);
    Eigen::VectorXd expect = testutil::naive_conv2d(x.data(), 1, 1, 2, 2, k.data(), 1, 2, 2,
                                                    bias.data());
    CHECK((y.data() - expect).cwiseAbs().maxCoeff() == 0.0);
    // top-left position covers the full 2x2 patch
    CHECK(y.data()[0] == 4.0);
}

TEST_CASE("conv2d zero kernels give constant bias output") {
    Rng rng(4);
    Tensor x = random_tensor({2, 5, 4}, rng, false);
    Tensor k = Tensor::zeros({3, 2, 3, 3});
    Tensor bias = Tensor::full({3}, 2.5);
    Tensor y = conv2d_single(x, k, bias);
    CHECK((y.data().array() == 2.5).all());
}

TEST_CASE("conv2d channel mismatch raises dimension error") {
    Tensor x = Tensor::zeros({1, 2, 3, 3});
    Tensor k = Tensor::zeros({1, 3, 2, 2});
    Tensor bias = Tensor::zeros({1});
    CHECK_THROWS_AS(conv2d(x, k, bias), DimensionError);
}

TEST_CASE("conv2d equals the naive oracle on shapes up to 4x4x8x8") {
    Rng rng(17);
    for (int it = 0; it < 60; ++it) {
        const auto B = static_cast<Eigen::Index>(rng.uniform_int(1, 4));
        const auto cin = static_cast<Eigen::Index>(rng.uniform_int(1, 4));
        const auto H = static_cast<Eigen::Index>(rng.uniform_int(1, 8));
        const auto W = static_cast<Eigen::Index>(rng.uniform_int(1, 8));
        const auto cout = static_cast<Eigen::Index>(rng.uniform_int(1, 4));
        const auto kh = static_cast<Eigen::Index>(rng.uniform_int(1, std::min<Eigen::Index>(4, H + 1)));
        const auto kw = static_cast<Eigen::Index>(rng.uniform_int(1, std::min<Eigen::Index>(4, W + 1)));
        Tensor x = random_tensor({B, cin, H, W}, rng, false);
        Tensor k = random_tensor({cout, cin, kh, kw}, rng, false);
        Tensor bias = random_tensor({cout}, rng, false);
        Tensor y = conv2d(x, k, bias);
        Eigen::VectorXd expect =
            testutil::naive_conv2d(x.data(), B, cin, H, W, k.data(), cout, kh, kw, bias.data());
        CHECK((y.data() - expect).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("batch_norm constant input yields the shift") {
    Tensor x = Tensor::full({4, 2, 3}, 7.0);
    Tensor gamma = Tensor::from_flat({2}, (Eigen::VectorXd(2) << 2.0, -1.0).finished());
    Tensor beta = Tensor::from_flat({2}, (Eigen::VectorXd(2) << 0.25, -0.5).finished());
    RunningStats stats = RunningStats::make(2);
    Tensor y = batch_norm(x, gamma, beta, 1e-5, Mode::train, stats);
    for (Eigen::Index b = 0; b < 4; ++b) {
        for (Eigen::Index c = 0; c < 2; ++c) {
            for (Eigen::Index r = 0; r < 3; ++r) {
                CHECK(y.data()[(b * 2 + c) * 3 + r] == doctest::Approx(beta.data()[c]));
            }
        }
    }
}

TEST_CASE("batch_norm on an already standardized batch is near identity") {
    Eigen::VectorXd v(2);
    v << -1.0, 1.0;
    Tensor x = Tensor::from_flat({2, 1}, v);
    Tensor gamma = Tensor::full({1}, 1.0);
    Tensor beta = Tensor::zeros({1});
    RunningStats stats = RunningStats::make(1);
    Tensor y = batch_norm(x, gamma, beta, 1e-12, Mode::train, stats);
    CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("batch_norm train mode standardizes per channel") {
    Rng rng(23);
    Tensor x = random_tensor({32, 3, 5}, rng, false, 2.0, 1.0);
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    RunningStats stats = RunningStats::make(3);
    Tensor y = batch_norm(x, gamma, beta, 1e-9, Mode::train, stats);
    // recompute output moments per channel
    for (Eigen::Index c = 0; c < 3; ++c) {
        double sum = 0.0, sq = 0.0;
        for (Eigen::Index b = 0; b < 32; ++b) {
            for (Eigen::Index r = 0; r < 5; ++r) {
                const double v = y.data()[(b * 3 + c) * 5 + r];
                sum += v;
                sq += v * v;
            }
        }
        const double n = 32.0 * 5.0;
        const double mean = sum / n;
        const double var = sq / n - mean * mean;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("batch_norm empty batch raises") {
    Tensor x = Tensor::zeros({0, 2});
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    RunningStats stats = RunningStats::make(2);
    CHECK_THROWS_AS(batch_norm(x, gamma, beta, 1e-5, Mode::train, stats), ContractError);
}

TEST_CASE("backward analytic toy gradients") {
    Tensor x = Tensor::scalar(3.0, true);
    Tensor loss = mul(x, x);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));

    Tensor y = Tensor::scalar(0.0, true);
    Tensor s = sigmoid(y);
    backward(s);
    CHECK(y.grad()[0] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("backward requires a scalar root") {
    Tensor x = Tensor::zeros({2, 2}, true);
    CHECK_THROWS_AS(backward(add(x, x)), ContractError);
}

TEST_CASE("backward is deterministic and accumulates across passes") {
    Rng rng(31);
    Tensor a = random_tensor({4, 4}, rng);
    Tensor b = random_tensor({4, 4}, rng);
    auto build = [&] { return sum(mul(softmax_rows(matmul(a, b)), a)); };

    Tensor loss = build();
    backward(loss);
    Eigen::VectorXd first = a.grad();

    a.zero_grad();
    b.zero_grad();
    backward(loss); // same graph
    CHECK(a.grad() == first);

    backward(loss); // no zeroing: contributions add
    CHECK((a.grad() - 2.0 * first).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("finite differences agree for every differentiable op") {
    Rng rng(101);

    auto check = [&](const char* name, const std::function<Tensor()>& loss,
                     std::vector<Tensor> params) {
        const double err = max_fd_rel_error(loss, std::move(params));
        INFO(std::string(name));
        CHECK(err < 1e-4);
    };

    for (int it = 0; it < 5; ++it) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        check("add", [&] { return sum(mul(add(a, b), a)); }, {a, b});
        check("sub", [&] { return sum(mul(sub(a, b), b)); }, {a, b});
        check("mul", [&] { return sum(mul(a, b)); }, {a, b});
        Tensor d = random_tensor({3, 4}, rng, true, 0.3, 2.0); // away from zero
        check("div", [&] { return sum(div(a, d)); }, {a, d});
        check("affine", [&] { return sum(affine(a, 1.7, -0.3)); }, {a});
        Tensor r = random_tensor({3, 4}, rng, true, 1.0, 0.0);
        // keep relu inputs off the kink so central differences are valid
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            if (std::abs(r.mutable_data()[i]) < 0.05) r.mutable_data()[i] = 0.1;
        }
        check("relu", [&] { return sum(mul(relu(r), b)); }, {r});
        check("sigmoid", [&] { return sum(mul(sigmoid(a), b)); }, {a});
        Tensor pos = random_tensor({3, 4}, rng, true, 0.2, 1.5);
        check("log", [&] { return sum(log(pos)); }, {pos});
        Tensor c = random_tensor({3, 4}, rng, true, 2.0);
        for (Eigen::Index i = 0; i < c.size(); ++i) {
            // keep inputs away from the clamp boundaries
            if (std::abs(std::abs(c.mutable_data()[i]) - 1.0) < 0.05) c.mutable_data()[i] = 0.5;
        }
        check("clamp", [&] { return sum(mul(clamp(c, -1.0, 1.0), b)); }, {c});
        check("mean", [&] { return mean(mul(a, a)); }, {a});
        check("reshape", [&] { return sum(mul(reshape(a, {4, 3}), reshape(b, {4, 3}))); }, {a, b});

        Tensor t3 = random_tensor({2, 3, 4}, rng);
        Tensor w3 = random_tensor({3, 2, 4}, rng, false);
        check("permute3", [&] { return sum(mul(permute3(t3, {1, 0, 2}), w3)); }, {t3});
        Tensor sel_w = random_tensor({3, 4}, rng, false);
        check("select0", [&] { return sum(mul(select0(t3, 1), sel_w)); }, {t3});
        Tensor s1 = random_tensor({2, 2}, rng);
        Tensor s2 = random_tensor({2, 2}, rng);
        Tensor stack_w = random_tensor({2, 2, 2}, rng, false);
        check("stack0", [&] { return sum(mul(stack0({s1, s2}), stack_w)); }, {s1, s2});
        Tensor rowv = random_tensor({4}, rng);
        check("add_rowvec", [&] { return sum(mul(add_rowvec(a, rowv), b)); }, {a, rowv});
        Tensor table = random_tensor({5, 3}, rng);
        Tensor emb_w = random_tensor({4, 3}, rng, false);
        check("embedding_lookup",
              [&] { return sum(mul(embedding_lookup(table, {0, 2, 2, 4}), emb_w)); }, {table});

        Tensor m1 = random_tensor({3, 5}, rng);
        Tensor m2 = random_tensor({5, 2}, rng);
        check("matmul", [&] { return sum(matmul(m1, m2)); }, {m1, m2});
        Tensor tw = random_tensor({5, 3}, rng, false);
        check("transpose2", [&] { return sum(mul(transpose2(m1), tw)); }, {m1});
        check("softmax_rows", [&] { return sum(mul(softmax_rows(a), b)); }, {a});

        Tensor cx = random_tensor({2, 2, 4, 3}, rng);
        Tensor ck = random_tensor({3, 2, 3, 3}, rng);
        Tensor cb = random_tensor({3}, rng);
        Tensor cw = random_tensor({2, 3, 4, 3}, rng, false);
        check("conv2d", [&] { return sum(mul(conv2d(cx, ck, cb), cw)); }, {cx, ck, cb});

        Tensor bx = random_tensor({6, 3, 4}, rng, true, 1.5, 0.5);
        Tensor bg = random_tensor({3}, rng, true, 0.2, 1.0);
        Tensor bb = random_tensor({3}, rng);
        Tensor bw = random_tensor({6, 3, 4}, rng, false);
        RunningStats stats = RunningStats::make(3);
        check("batch_norm_train",
              [&] {
                  RunningStats local = stats;
                  return sum(mul(batch_norm(bx, bg, bb, 1e-5, Mode::train, local), bw));
              },
              {bx, bg, bb});
        RunningStats infer_stats = RunningStats::make(3);
        infer_stats.mean = Eigen::Vector3d(0.1, -0.2, 0.4);
        infer_stats.var = Eigen::Vector3d(0.8, 1.3, 0.6);
        check("batch_norm_infer",
              [&] {
                  return sum(mul(batch_norm(bx, bg, bb, 1e-5, Mode::infer, infer_stats), bw));
              },
              {bx, bg, bb});
    }
}

TEST_CASE("adam leaves parameters unchanged under zero gradient") {
    Tensor p = Tensor::from_flat({3}, (Eigen::VectorXd(3) << 1.0, -2.0, 0.5).finished(), true);
    std::vector<Tensor> params{p};
    AdamState state = AdamState::make(params, 0.01);
    Eigen::VectorXd before = p.data();
    adam_step(params, state);
    CHECK(p.data() == before);
}

TEST_CASE("adam first step moves by about the learning rate against the gradient") {
    Tensor p = Tensor::zeros({2}, true);
    std::vector<Tensor> params{p};
    AdamState state = AdamState::make(params, 0.05);
    Tensor g = Tensor::from_flat({2}, (Eigen::VectorXd(2) << 3.0, -0.7).finished());
    Tensor loss = sum(mul(p, g));
    backward(loss);
    adam_step(params, state);
    CHECK(p.data()[0] == doctest::Approx(-0.05).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(0.05).epsilon(1e-6));
}

TEST_CASE("adam drives a quadratic toward its minimum") {
    // reference trajectory from an independently scripted scalar update rule
    double ref_x = 1.0, ref_m = 0.0, ref_v = 0.0;
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;

    Tensor x = Tensor::scalar(1.0, true);
    std::vector<Tensor> params{x};
    AdamState state = AdamState::make(params, lr);
    for (int step = 1; step <= 100; ++step) {
        x.zero_grad();
        backward(mul(x, x));
        adam_step(params, state);

        const double g = 2.0 * ref_x;
        ref_m = b1 * ref_m + (1 - b1) * g;
        ref_v = b2 * ref_v + (1 - b2) * g * g;
        const double mhat = ref_m / (1 - std::pow(b1, step));
        const double vhat = ref_v / (1 - std::pow(b2, step));
        ref_x -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(x.data()[0] == doctest::Approx(ref_x).epsilon(1e-12));
    }
    CHECK(std::abs(x.data()[0]) < 0.05);
}

TEST_CASE("adam rejects mismatched state") {
    Tensor p = Tensor::zeros({3}, true);
    std::vector<Tensor> params{p};
    AdamState state = AdamState::make(params, 0.01);
    params[0] = Tensor::zeros({4}, true);
    CHECK_THROWS_AS(adam_step(params, state), DimensionError);
}
