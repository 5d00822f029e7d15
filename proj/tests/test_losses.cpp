#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sanet/losses.hpp"
#include "test_util.hpp"

using namespace sanet;
using namespace sanet::nn;
using sanet::test::random_tensor;

namespace {

// Straight-line evaluations of the loss formulas, used as oracles.
double jaccard_oracle(const Tensor<double>& p, const Tensor<double>& g, double eps = 1e-5)
{
    double total = 0.0;
    for (std::int64_t c = 0; c < p.shape().c; ++c) {
        double inter = 0.0, uni = 0.0;
        const auto pc = p.channel(c);
        const auto gc = g.channel(c);
        for (std::size_t i = 0; i < pc.size(); ++i) {
            inter += pc[i] * gc[i];
            uni += pc[i] + gc[i] - pc[i] * gc[i];
        }
        total += 1.0 - (inter + eps) / (uni + eps);
    }
    return total;
}

double focal_oracle(const Tensor<double>& p, const Tensor<double>& g, double gamma = 2.0, double clamp = 1e-7)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], clamp, 1.0 - clamp);
        const double pt = g[i] > 0.5 ? q : 1.0 - q;
        acc += -std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    return acc / static_cast<double>(p.size());
}

Tensor<double> random_probs(Shape s, std::uint64_t seed)
{
    return random_tensor<double>(s, seed, 0.02, 0.98);
}

Tensor<double> random_mask(Shape s, std::uint64_t seed, unsigned one_in = 3)
{
    Tensor<double> t(s);
    std::mt19937_64 rng(seed);
    for (double& v : t.values())
        v = static_cast<double>(rng() % one_in == 0);
    return t;
}

double scalar(const Var<double>& v) { return v.value()[0]; }

}  // namespace

TEST_CASE("jaccard: worked values")
{
    SUBCASE("perfect binary prediction")
    {
        const auto g = random_mask({3, 4, 4, 4}, 1);
        CHECK(scalar(loss::jaccard_loss(Var<double>(g), g)) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("empty prediction against 100 positives")
    {
        Tensor<double> g({1, 5, 5, 5});
        for (std::size_t i = 0; i < 100; ++i)
            g[i] = 1.0;
        const double eps = 1e-5;
        const double got = scalar(loss::jaccard_loss(Var<double>(Tensor<double>(g.shape())), g));
        CHECK(got == doctest::Approx(1.0 - eps / (100.0 + eps)).epsilon(1e-12));
    }
    SUBCASE("half probability on an all-ones 2^3 volume")
    {
        const Tensor<double> g({1, 2, 2, 2}, 1.0);
        const Tensor<double> p({1, 2, 2, 2}, 0.5);
        const double eps = 1e-5;
        const double want = 1.0 - (4.0 + eps) / (8.0 - 4.0 + 4.0 + eps);
        CHECK(scalar(loss::jaccard_loss(Var<double>(p), g)) == doctest::Approx(want).epsilon(1e-12));
        CHECK(want == doctest::Approx(0.5).epsilon(1e-5));
    }
    SUBCASE("channels are summed")
    {
        const auto p = random_probs({3, 4, 4, 4}, 2);
        const auto g = random_mask({3, 4, 4, 4}, 3);
        CHECK(scalar(loss::jaccard_loss(Var<double>(p), g)) == doctest::Approx(jaccard_oracle(p, g)).epsilon(1e-12));
    }
}

TEST_CASE("focal: worked values")
{
    SUBCASE("single voxel at p = 0.5")
    {
        const Tensor<double> p({1, 1, 1, 1}, 0.5);
        const Tensor<double> g({1, 1, 1, 1}, 1.0);
        const double got = scalar(loss::focal_loss(Var<double>(p), g));
        CHECK(got == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
        CHECK(got == doctest::Approx(0.1733).epsilon(1e-3));
    }
    SUBCASE("perfect prediction is clamped to nearly zero")
    {
        const auto g = random_mask({3, 4, 4, 4}, 4);
        const double got = scalar(loss::focal_loss(Var<double>(g), g));
        CHECK(got >= 0.0);
        CHECK(got < 1e-15);
    }
    SUBCASE("gamma = 0 is mean binary cross-entropy")
    {
        const auto p = random_probs({3, 4, 4, 4}, 5);
        const auto g = random_mask({3, 4, 4, 4}, 6);
        double bce = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i)
            bce += -(g[i] * std::log(p[i]) + (1.0 - g[i]) * std::log(1.0 - p[i]));
        bce /= static_cast<double>(p.size());
        CHECK(scalar(loss::focal_loss(Var<double>(p), g, 0.0)) == doctest::Approx(bce).epsilon(1e-12));
    }
    SUBCASE("matches the voxel formula")
    {
        const auto p = random_probs({3, 5, 4, 3}, 7);
        const auto g = random_mask({3, 5, 4, 3}, 8);
        CHECK(scalar(loss::focal_loss(Var<double>(p), g)) == doctest::Approx(focal_oracle(p, g)).epsilon(1e-12));
    }
}

TEST_CASE("losses reject mismatched shapes")
{
    const auto p = random_probs({3, 4, 4, 4}, 1);
    const auto g = random_mask({3, 4, 4, 2}, 2);
    CHECK_THROWS_AS(loss::jaccard_loss(Var<double>(p), g), ShapeError);
    CHECK_THROWS_AS(loss::focal_loss(Var<double>(p), g), ShapeError);
    ModelOutput<double> out{Var<double>(p), {}};
    CHECK_THROWS_AS(loss::total_loss(out, g), ShapeError);
    ModelOutput<double> bad_head{Var<double>(p), {Var<double>(random_probs({3, 4, 4, 2}, 3))}};
    CHECK_THROWS_AS(loss::total_loss(bad_head, random_mask({3, 4, 4, 4}, 4)), ShapeError);
}

TEST_CASE("total loss averages heads uniformly")
{
    const Shape s{3, 4, 4, 4};
    const auto g = random_mask(s, 11);
    const auto main = random_probs(s, 12);

    SUBCASE("single head")
    {
        const auto terms = loss::total_loss(ModelOutput<double>{Var<double>(main), {}}, g);
        const double want = jaccard_oracle(main, g) + focal_oracle(main, g);
        CHECK(terms.value() == doctest::Approx(want).epsilon(1e-12));
        REQUIRE(terms.per_head.size() == 1);
        CHECK(terms.jaccard == doctest::Approx(jaccard_oracle(main, g)).epsilon(1e-12));
        CHECK(terms.focal == doctest::Approx(focal_oracle(main, g)).epsilon(1e-12));
    }
    SUBCASE("identical heads equal one head")
    {
        const ModelOutput<double> out{Var<double>(main), {Var<double>(main), Var<double>(main), Var<double>(main)}};
        const auto terms = loss::total_loss(out, g);
        CHECK(terms.per_head.size() == 4);
        CHECK(terms.value() ==
              doctest::Approx(jaccard_oracle(main, g) + focal_oracle(main, g)).epsilon(1e-12));
    }
    SUBCASE("distinct heads")
    {
        std::vector<Tensor<double>> heads{main, random_probs(s, 13), random_probs(s, 14)};
        const ModelOutput<double> out{Var<double>(heads[0]), {Var<double>(heads[1]), Var<double>(heads[2])}};
        const auto terms = loss::total_loss(out, g);
        double want = 0.0;
        for (std::size_t h = 0; h < heads.size(); ++h) {
            CHECK(terms.per_head[h].jaccard == doctest::Approx(jaccard_oracle(heads[h], g)).epsilon(1e-12));
            CHECK(terms.per_head[h].focal == doctest::Approx(focal_oracle(heads[h], g)).epsilon(1e-12));
            want += jaccard_oracle(heads[h], g) + focal_oracle(heads[h], g);
        }
        CHECK(terms.value() == doctest::Approx(want / 3.0).epsilon(1e-12));
    }
    SUBCASE("perfect heads give nearly zero")
    {
        const ModelOutput<double> out{Var<double>(g), {Var<double>(g), Var<double>(g)}};
        CHECK(loss::total_loss(out, g).value() < 1e-12);
    }
    SUBCASE("composite loss of a bare map matches a single head")
    {
        const double a = loss::composite_loss(main, g);
        CHECK(a == doctest::Approx(loss::total_loss(ModelOutput<double>{Var<double>(main), {}}, g).value()));
    }
}

TEST_CASE("property: ranges over random inputs")
{
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const Shape s{3, 3 + static_cast<std::int64_t>(seed % 3), 4, 5};
        const auto p = random_tensor<double>(s, 100 + seed, 0.0, 1.0);
        const auto g = random_mask(s, 200 + seed, 2 + static_cast<unsigned>(seed % 4));
        const double j = scalar(loss::jaccard_loss(Var<double>(p), g));
        const double f = scalar(loss::focal_loss(Var<double>(p), g));
        CHECK(j >= 0.0);
        CHECK(j <= 3.0);
        CHECK(f >= 0.0);
    }
}

TEST_CASE("property: moving one voxel toward its target never increases either term")
{
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const Shape s{3, 3, 3, 3};
        auto p = random_tensor<double>(s, 300 + trial, 0.0, 1.0);
        const auto g = random_mask(s, 400 + trial);
        const std::size_t i = rng() % p.size();
        const double j0 = scalar(loss::jaccard_loss(Var<double>(p), g));
        const double f0 = scalar(loss::focal_loss(Var<double>(p), g));
        p[i] += (g[i] - p[i]) * 0.5;
        CHECK(scalar(loss::jaccard_loss(Var<double>(p), g)) <= j0 + 1e-12);
        CHECK(scalar(loss::focal_loss(Var<double>(p), g)) <= f0 + 1e-12);
    }
}

TEST_CASE("property: permuting voxels jointly leaves both terms unchanged")
{
    const Shape s{3, 4, 4, 4};
    const auto p = random_probs(s, 41);
    const auto g = random_mask(s, 42);
    const auto n = static_cast<std::size_t>(s.spatial());
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(43));
    Tensor<double> pp(s), gp(s);
    for (std::int64_t c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < n; ++i) {
            pp.channel(c)[i] = p.channel(c)[perm[i]];
            gp.channel(c)[i] = g.channel(c)[perm[i]];
        }
    CHECK(scalar(loss::jaccard_loss(Var<double>(pp), gp)) ==
          doctest::Approx(scalar(loss::jaccard_loss(Var<double>(p), g))).epsilon(1e-12));
    CHECK(scalar(loss::focal_loss(Var<double>(pp), gp)) ==
          doctest::Approx(scalar(loss::focal_loss(Var<double>(p), g))).epsilon(1e-12));
}

TEST_CASE("gradients match central differences on 4^3 inputs")
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Shape s{3, 4, 4, 4};
        const auto g = random_mask(s, 500 + seed);
        const Var<double> p(random_probs(s, 600 + seed), true);
        CAPTURE(seed);
        CHECK(sanet::test::gradient_check([&] { return loss::jaccard_loss(p, g); }, {p}, 24, seed) < 1e-3);
        CHECK(sanet::test::gradient_check([&] { return loss::focal_loss(p, g); }, {p}, 24, seed) < 1e-3);
        const Var<double> ds(random_probs(s, 700 + seed), true);
        CHECK(sanet::test::gradient_check(
                  [&] {
                      return loss::total_loss(ModelOutput<double>{p, {ds}}, g).total;
                  },
                  {p, ds}, 24, seed) < 1e-3);
    }
}

TEST_CASE("single precision agrees with double")
{
    const Shape s{3, 6, 5, 4};
    const auto p = random_probs(s, 71);
    const auto g = random_mask(s, 72);
    const auto pf = p.cast<float>();
    const auto gf = g.cast<float>();
    CHECK(loss::total_loss(ModelOutput<float>{Var<float>(pf), {}}, gf).value() ==
          doctest::Approx(loss::total_loss(ModelOutput<double>{Var<double>(p), {}}, g).value()).epsilon(1e-5));
}
