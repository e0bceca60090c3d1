#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hdccl/distill.hpp"
#include "hdccl/errors.hpp"
#include "hdccl/gradcheck.hpp"
#include "oracles.hpp"

using namespace hdccl;
using V = Var<double>;
using M = Matrix<double>;

namespace {

RegionFeatures<double> random_regions(Index n, Index d, Rng& rng) {
    RegionFeatures<double> rf;
    rf.patch_features = V::constant(random_normal<double>(n, d, 1.0, rng));
    for (auto& c : rf.cls) c = V::constant(random_normal<double>(1, d, 1.0, rng));
    return rf;
}

void set_identity(Linear<double>& lin) {
    lin.weight.mutable_value() = M::Identity(lin.in_dim(), lin.out_dim());
    lin.bias.mutable_value().setZero();
}

M normalized(const M& x) {
    M out = x;
    for (int i = 0; i < x.rows(); ++i) out.row(i) /= oracle::row_norm(x, i);
    return out;
}

/// Tr(K H L H) / (B - 1)^2 with elementwise loops and the median heuristic.
double hsic_oracle(const M& x_raw, const M& y_raw) {
    const int b = static_cast<int>(x_raw.rows());
    auto kernel = [b](const M& raw) {
        const M x = normalized(raw);
        M dist(b, b);
        std::vector<double> upper;
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < b; ++j) {
                dist(i, j) = (x.row(i) - x.row(j)).norm();
                if (j > i) upper.push_back(dist(i, j));
            }
        std::sort(upper.begin(), upper.end());
        const std::size_t m = upper.size();
        double sigma = m % 2 ? upper[m / 2] : 0.5 * (upper[m / 2 - 1] + upper[m / 2]);
        if (sigma <= 0.0) sigma = 1.0;
        M k(b, b);
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < b; ++j) k(i, j) = std::exp(-dist(i, j) * dist(i, j) / (2.0 * sigma * sigma));
        return k;
    };
    const M k = kernel(x_raw);
    const M l = kernel(y_raw);
    M h(b, b);
    for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) h(i, j) = (i == j ? 1.0 : 0.0) - 1.0 / b;
    const M prod = oracle::matmul(oracle::matmul(k, h), oracle::matmul(l, h));
    double trace = 0.0;
    for (int i = 0; i < b; ++i) trace += prod(i, i);
    return trace / ((b - 1.0) * (b - 1.0));
}

double info_nce_oracle(const M& a_raw, const M& b_raw, double tau) {
    const M a = normalized(a_raw);
    const M b = normalized(b_raw);
    double total = 0.0;
    for (int i = 0; i < a.rows(); ++i) {
        double z = 0.0;
        for (int j = 0; j < b.rows(); ++j) z += std::exp(oracle::dot(a, i, b, j) / tau);
        total += -std::log(std::exp(oracle::dot(a, i, b, i) / tau) / z);
    }
    return total / static_cast<double>(a.rows());
}

}  // namespace

TEST_CASE("identity encoders pass the CLS vectors through") {
    Rng rng(1);
    DistillParams<double> params(4, 2, rng);
    for (Linear<double>* lin : {&params.ge, &params.ce, &params.de_bef, &params.de_aft}) set_identity(*lin);
    const auto bef = random_regions(3, 4, rng);
    const auto aft = random_regions(3, 4, rng);
    const ContextVectors<double> cv = context_encode(bef, aft, params);
    CHECK(cv.g_bef.value() == bef.cls_of(Region::Glo).value());
    CHECK(cv.g_aft.value() == aft.cls_of(Region::Glo).value());
    CHECK(cv.c_bef.value() == bef.cls_of(Region::Com).value());
    CHECK(cv.c_aft.value() == aft.cls_of(Region::Com).value());
    CHECK(cv.d_bef_global.value() == bef.cls_of(Region::Diff).value());
    CHECK(cv.d_aft_global.value() == aft.cls_of(Region::Diff).value());
}

TEST_CASE("shared global and common encoders, separate difference encoders") {
    Rng rng(2);
    DistillParams<double> params(4, 2, rng);
    params.de_bef.bias.mutable_value().setConstant(0.1);
    const auto rf = random_regions(3, 4, rng);
    const ContextVectors<double> cv = context_encode(rf, rf, params);
    CHECK(cv.g_bef.value() == cv.g_aft.value());
    CHECK(cv.c_bef.value() == cv.c_aft.value());
    CHECK_FALSE(cv.d_bef_global.value() == cv.d_aft_global.value());
}

TEST_CASE("context vectors equal direct affine maps of the CLS vectors") {
    Rng rng(3);
    DistillParams<double> params(5, 1, rng);
    for (Linear<double>* lin : {&params.ge, &params.ce, &params.de_bef, &params.de_aft})
        lin->bias.mutable_value() = random_normal<double>(1, 5, 1.0, rng);
    const auto bef = random_regions(2, 5, rng);
    const auto aft = random_regions(2, 5, rng);
    const ContextVectors<double> cv = context_encode(bef, aft, params);
    auto close = [](const M& a, const M& b) { return (a - b).cwiseAbs().maxCoeff() < 1e-12; };
    CHECK(close(cv.g_bef.value(), oracle::affine(bef.cls_of(Region::Glo).value(), params.ge)));
    CHECK(close(cv.c_aft.value(), oracle::affine(aft.cls_of(Region::Com).value(), params.ce)));
    CHECK(close(cv.d_bef_global.value(), oracle::affine(bef.cls_of(Region::Diff).value(), params.de_bef)));
    CHECK(close(cv.d_aft_global.value(), oracle::affine(aft.cls_of(Region::Diff).value(), params.de_aft)));
    RegionFeatures<double> wrong = bef;
    wrong.cls[1] = V::constant(M::Ones(1, 3));
    CHECK_THROWS_AS(context_encode(wrong, aft, params), DimensionError);
}

TEST_CASE("InfoNCE closed forms") {
    Rng rng(4);
    const M one = random_normal<double>(1, 3, 1.0, rng);
    CHECK(info_nce(V::constant(one), V::constant(random_normal<double>(1, 3, 1.0, rng))).item() == 0.0);
    const M same = M::Ones(4, 3);
    CHECK(std::abs(info_nce(V::constant(same), V::constant(same), 0.07).item() - std::log(4.0)) <= 1e-6);
    const M eye = M::Identity(2, 2);
    const double expected = std::log(1.0 + std::exp(-1.0));
    CHECK(info_nce(V::constant(eye), V::constant(eye), 1.0).item() == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("InfoNCE equals a direct evaluation and is non-negative") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const M a = random_normal<double>(6, 4, 1.0, rng);
        const M b = random_normal<double>(6, 4, 1.0, rng);
        const double v = info_nce(V::constant(a), V::constant(b), 0.07).item();
        CHECK(v >= 0.0);
        CHECK(v == doctest::Approx(info_nce_oracle(a, b, 0.07)).epsilon(1e-10));
    }
}

TEST_CASE("InfoNCE errors") {
    M a = M::Ones(2, 3);
    M z = a;
    z.row(0).setZero();
    CHECK_THROWS_AS(info_nce(V::constant(a), V::constant(z)), NormalizationError);
    CHECK_THROWS_AS(info_nce(V::constant(a), V::constant(a), 0.0), ConfigError);
}

TEST_CASE("HSIC vanishes when one side is constant") {
    Rng rng(6);
    const M x = random_normal<double>(5, 4, 1.0, rng);
    const M y = M::Ones(5, 4);
    CHECK(std::abs(hsic_loss(V::constant(x), V::constant(y)).item()) <= 1e-10);
}

TEST_CASE("HSIC 2x2 closed form with off-diagonal kernel entries of 1/e") {
    const M eye = M::Identity(2, 2);
    const double expected = std::pow(1.0 - std::exp(-1.0), 2.0);
    CHECK(std::abs(hsic_loss(V::constant(eye), V::constant(eye), 1.0).item() - expected) <= 1e-6);
    CHECK(expected == doctest::Approx(0.3996).epsilon(1e-4));
}

TEST_CASE("HSIC with the median heuristic equals a direct trace computation") {
    Rng rng(7);
    for (int b : {3, 4, 6}) {
        const M x = random_normal<double>(b, 3, 1.0, rng);
        const M y = random_normal<double>(b, 3, 1.0, rng);
        const double v = hsic_loss(V::constant(x), V::constant(y)).item();
        CHECK(v == doctest::Approx(hsic_oracle(x, y)).epsilon(1e-10));
        CHECK(v >= -1e-12);
        CHECK(v == doctest::Approx(hsic_loss(V::constant(y), V::constant(x)).item()).epsilon(1e-12));
    }
}

TEST_CASE("HSIC errors") {
    const M one = M::Ones(1, 3);
    CHECK_THROWS_AS(hsic_loss(V::constant(one), V::constant(one)), BatchSizeError);
    const M two = M::Identity(2, 3);
    CHECK_THROWS_AS(hsic_loss(V::constant(two), V::constant(two), 0.0), ConfigError);
    CHECK_THROWS_AS(hsic_loss(V::constant(two), V::constant(M::Identity(3, 3))), DimensionError);
}

TEST_CASE("context loss is the unit-weight sum of its three terms") {
    Rng rng(8);
    DistillParams<double> params(4, 2, rng);
    std::vector<ContextVectors<double>> batch;
    for (int b = 0; b < 5; ++b) batch.push_back(context_encode(random_regions(2, 4, rng), random_regions(2, 4, rng), params));
    const ContextLoss<double> loss = context_loss(batch);
    M gb(5, 4), ga(5, 4), cb(5, 4), ca(5, 4), db(5, 4), da(5, 4);
    for (int b = 0; b < 5; ++b) {
        gb.row(b) = batch[static_cast<std::size_t>(b)].g_bef.value();
        ga.row(b) = batch[static_cast<std::size_t>(b)].g_aft.value();
        cb.row(b) = batch[static_cast<std::size_t>(b)].c_bef.value();
        ca.row(b) = batch[static_cast<std::size_t>(b)].c_aft.value();
        db.row(b) = batch[static_cast<std::size_t>(b)].d_bef_global.value();
        da.row(b) = batch[static_cast<std::size_t>(b)].d_aft_global.value();
    }
    CHECK(loss.glo.item() == doctest::Approx(info_nce_oracle(gb, ga, 0.07)).epsilon(1e-10));
    CHECK(loss.reg.item() == doctest::Approx(info_nce_oracle(cb, ca, 0.07)).epsilon(1e-10));
    CHECK(loss.hsic.item() == doctest::Approx(hsic_oracle(db, da)).epsilon(1e-10));
    CHECK(loss.con.item() == doctest::Approx(loss.glo.item() + loss.reg.item() + loss.hsic.item()).epsilon(1e-14));
    CHECK_THROWS_AS(context_loss(std::vector<ContextVectors<double>>{batch[0]}), BatchSizeError);
}

TEST_CASE("zero fusion weights give a zero change representation") {
    Rng rng(9);
    DistillParams<double> params(4, 2, rng);
    params.fuse.weight.mutable_value().setZero();
    params.fuse.bias.mutable_value().setZero();
    const auto bef = random_regions(6, 4, rng);
    const auto aft = random_regions(6, 4, rng);
    const ContextVectors<double> cv = context_encode(bef, aft, params);
    const GridShape g{2, 3};
    const DifferenceRepr<double> rep =
        distill_difference(PatchFeatures<double>{bef.patch_features, g, ImageTag::Bef},
                           PatchFeatures<double>{aft.patch_features, g, ImageTag::Aft}, Mask{1, 1, 0, 1, 0, 1},
                           Mask{1, 0, 1, 1, 1, 0}, cv, params);
    CHECK(rep.d.rows() == 6);
    CHECK(rep.d.cols() == 4);
    CHECK(rep.d.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two-patch change representation matches a step-by-step evaluation") {
    Rng rng(10);
    const Index d = 2;
    DistillParams<double> params(d, 1, rng);
    for (Linear<double>* lin : {&params.mhca.query, &params.mhca.key, &params.mhca.value, &params.mhca.output, &params.phi})
        set_identity(*lin);
    params.fuse.bias.mutable_value() << 0.05, -0.02;
    const auto bef = random_regions(2, d, rng);
    const auto aft = random_regions(2, d, rng);
    const ContextVectors<double> cv = context_encode(bef, aft, params);
    const Mask mb = {1, 0};
    const Mask ma = {1, 1};
    const DifferenceRepr<double> rep =
        distill_difference(PatchFeatures<double>{bef.patch_features, GridShape{1, 2}, ImageTag::Bef},
                           PatchFeatures<double>{aft.patch_features, GridShape{1, 2}, ImageTag::Aft}, mb, ma, cv, params);

    const M xb = bef.patch_features.value();
    const M xa = aft.patch_features.value();
    auto z_input = [&](const M& x, const Mask& m, const M& c) {
        M z(2, 2 * d);
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < d; ++j) z(i, j) = m[static_cast<std::size_t>(i)] ? x(i, j) : 0.0;
            for (int j = 0; j < d; ++j) z(i, d + j) = c(0, j);
        }
        return z;
    };
    const M zb = oracle::affine(z_input(xb, mb, cv.c_bef.value()), params.z_proj);
    const M za = oracle::affine(z_input(xa, ma, cv.c_aft.value()), params.z_proj);
    // Single head with identity projections: softmax(zb za^T / sqrt(d)) za.
    M logits(2, 2);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) logits(i, j) = oracle::dot(zb, i, za, j) / std::sqrt(static_cast<double>(d));
    const M x_tilde = oracle::matmul(oracle::softmax_rows(logits), za);
    M local(2, d);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < d; ++j) local(i, j) = std::tanh(xb(i, j) - x_tilde(i, j));
    M cat(2, 2 * d);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < d; ++j) cat(i, j) = cv.d_bef_global.value()(0, j);
        for (int j = 0; j < d; ++j) cat(i, d + j) = local(i, j);
    }
    M expected = oracle::affine(cat, params.fuse);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < d; ++j) expected(i, j) = std::max(0.0, expected(i, j));

    CHECK((rep.z_com_bef.value() - zb).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((rep.x_tilde_com_bef.value() - x_tilde).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((rep.d_local.value() - local).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((rep.d.value() - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(rep.d_global.value().row(0) == rep.d_global.value().row(1));
}

TEST_CASE("global difference rows are identical and shapes are checked") {
    Rng rng(11);
    DistillParams<double> params(4, 2, rng);
    const auto bef = random_regions(9, 4, rng);
    const auto aft = random_regions(9, 4, rng);
    const ContextVectors<double> cv = context_encode(bef, aft, params);
    const GridShape g{3, 3};
    const DifferenceRepr<double> rep =
        distill_difference(PatchFeatures<double>{bef.patch_features, g, ImageTag::Bef},
                           PatchFeatures<double>{aft.patch_features, g, ImageTag::Aft}, Mask(9, 1), Mask(9, 1), cv,
                           params);
    for (Index i = 1; i < 9; ++i) CHECK(rep.d_global.value().row(i) == rep.d_global.value().row(0));
    CHECK(rep.d.value().allFinite());
    const PatchFeatures<double> small{V::constant(M::Ones(4, 4)), GridShape{2, 2}, ImageTag::Aft};
    CHECK_THROWS_AS(distill_difference(PatchFeatures<double>{bef.patch_features, g, ImageTag::Bef}, small, Mask(9, 1),
                                       Mask(4, 1), cv, params),
                    DimensionError);
}

TEST_CASE("distillation and context-loss gradients match central differences") {
    CHECK(grad_check(GradComponent::Distill, 1e-5, 5, 20).max_rel_error() <= 1e-4);
    CHECK(grad_check(GradComponent::Context, 1e-5, 5, 20).max_rel_error() <= 1e-4);
    CHECK(grad_check(GradComponent::InfoNce, 1e-5, 5, 20).max_rel_error() <= 1e-4);
    CHECK(grad_check(GradComponent::Hsic, 1e-5, 5, 20).max_rel_error() <= 1e-4);
}
