#include <gtest/gtest.h>

#include <numeric>

#include "support.hpp"

using namespace nipq;
using nipq::test::Gen;

namespace {

using D = BasicTensor<double>;

/// 0.5·w H wᵀ for a row vector w.
std::function<D()> quadratic_loss(const D& w, const D& h) {
    return [w, h] { return sum(matmul(w, h) * w) * 0.5; };
}

D diag_matrix(const std::vector<double>& d) {
    const std::size_t n = d.size();
    std::vector<double> m(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) m[i * n + i] = d[i];
    return D(Shape{n, n}, m);
}

/// Spearman without ties: 1 − 6Σd²/(n(n²−1)).
double spearman_no_ties(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    auto rank = [n](const std::vector<double>& v) {
        std::vector<double> r(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t below = 0;
            for (std::size_t j = 0; j < n; ++j) below += v[j] < v[i];
            r[i] = static_cast<double>(below + 1);
        }
        return r;
    };
    const auto ra = rank(a), rb = rank(b);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += (ra[i] - rb[i]) * (ra[i] - rb[i]);
    const double nd = static_cast<double>(n);
    return 1.0 - 6.0 * s / (nd * (nd * nd - 1.0));
}

struct Blobs {
    Dataset train, test;
};

Blobs blobs(std::uint64_t seed, std::size_t n = 400) {
    BlobOptions o{n, 4, 8, 4.0, 1.0};
    Blobs b{make_gaussian_blobs(o, seed, "train"), {}};
    o.n = 200;
    b.test = make_gaussian_blobs(o, seed, "test");
    return b;
}

TrainConfig quick(std::uint64_t seed) {
    TrainConfig c;
    c.stage1_epochs = 4;
    c.stage2_epochs = 1;
    c.lr = 5e-3;
    c.batch_size = 32;
    c.seed = seed;
    return c;
}

Network trained_mlp(std::uint64_t seed, const Blobs& b) {
    Network net = build_network(mlp_spec(8, {16}, 4), seed);
    train_two_stage(net, b.train, b.test, quick(seed));
    return net;
}

std::vector<std::vector<float>> snapshot(Network& net) {
    std::vector<std::vector<float>> s;
    for (auto& p : net.parameters()) s.push_back(p.tensor.to_vector());
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Statistics

TEST(Statistics, AverageRanksWithTies) {
    EXPECT_EQ(average_ranks({10, 30, 20}), (std::vector<double>{1, 3, 2}));
    EXPECT_EQ(average_ranks({5, 5, 1, 5}), (std::vector<double>{3, 3, 1, 3}));
    EXPECT_EQ(average_ranks({2, 2}), (std::vector<double>{1.5, 1.5}));
}

TEST(Statistics, CorrelationExamples) {
    EXPECT_NEAR(pearson({1, 2, 3}, {2, 4, 6}), 1.0, 1e-15);
    EXPECT_NEAR(pearson({1, 2, 3}, {3, 2, 1}), -1.0, 1e-15);
    EXPECT_EQ(pearson({1, 1, 1}, {1, 2, 3}), 0.0);
    EXPECT_NEAR(spearman({1, 2, 3, 4}, {1, 8, 27, 64}), 1.0, 1e-15);
    EXPECT_THROW(pearson({1}, {1}), Error);
    EXPECT_THROW(pearson({1, 2}, {1, 2, 3}), Error);
}

TEST(Statistics, SpearmanMatchesClosedFormAndIsRankInvariant) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Gen g(seed);
        const std::size_t n = g.size(3, 40);
        std::vector<double> a(n), b(n), a3(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = g.uniform(-5, 5);
            b[i] = g.uniform(-5, 5);
            a3[i] = std::exp(a[i]) + a[i] * a[i] * a[i];
        }
        const double rho = spearman(a, b);
        EXPECT_NEAR(rho, spearman_no_ties(a, b), 1e-12);
        EXPECT_GE(rho, -1.0);
        EXPECT_LE(rho, 1.0);
        EXPECT_NEAR(spearman(a3, b), rho, 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Hutchinson trace

TEST(HessianTrace, DiagonalQuadratic) {
    D w(Shape{1, 3}, {0.3, -0.2, 0.5}, true);
    RngStream rng(1, 2);
    const auto r = hessian_trace<double>(quadratic_loss(w, diag_matrix({1, 2, 3})), {{w}}, {"w"}, 50, rng);
    // diagonal H: every Rademacher probe gives the trace
    EXPECT_NEAR(r.trace[0], 6.0, 1e-6);
    EXPECT_NEAR(r.std_error[0], 0.0, 1e-6);
    EXPECT_EQ(r.n_probes, 50u);
    EXPECT_EQ(r.n_elements[0], 3u);
    EXPECT_NEAR(r.trace_per_element[0], 2.0, 1e-6);
}

TEST(HessianTrace, IdentityGivesDimension) {
    for (std::size_t n : {1u, 7u, 40u}) {
        D w(Shape{1, n}, std::vector<double>(n, 0.1), true);
        const auto sq = [w] { return sum(w * w) * 0.5; };
        RngStream rng(n, 3);
        EXPECT_NEAR(hessian_trace<double>(sq, {{w}}, {"w"}, 1000, rng).trace[0], static_cast<double>(n), 0.05 * n);
    }
}

TEST(HessianTrace, LinearLossIsZero) {
    Gen g(5);
    D w = g.normal<double>({1, 12}, 1.0, true);
    const D c = g.normal<double>({1, 12});
    RngStream rng(5, 1);
    const auto r = hessian_trace<double>([w, c] { return sum(w * c); }, {{w}}, {"w"}, 200, rng);
    EXPECT_LE(std::abs(r.trace[0]), std::max(3.0 * r.std_error[0], 1e-6));
}

TEST(HessianTrace, RejectsFewerThanTwoProbes) {
    D w(Shape{1, 2}, {1, 1}, true);
    RngStream rng(0, 0);
    EXPECT_THROW(hessian_trace<double>(quadratic_loss(w, diag_matrix({1, 1})), {{w}}, {"w"}, 1, rng), Error);
    EXPECT_THROW(hessian_trace<double>(quadratic_loss(w, diag_matrix({1, 1})), {{w}}, {"a", "b"}, 5, rng), Error);
}

TEST(HessianTrace, UnbiasedOnRandomQuadratics) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Gen g(seed);
        const std::size_t dim = g.size(4, 12);
        std::vector<double> eig(dim);
        for (auto& e : eig) e = g.uniform(0.2, 5.0);
        const auto p = random_quadratic(dim, eig, g.rng);
        EXPECT_NEAR(p.trace(), std::accumulate(eig.begin(), eig.end(), 0.0), 1e-9);
        D h(Shape{dim, dim}, p.h);
        D w = g.normal<double>({1, dim}, 1.0, true);
        RngStream rng(seed, 11);
        const auto r = hessian_trace<double>(quadratic_loss(w, h), {{w}}, {"w"}, 1000, rng);
        EXPECT_LT(std::abs(r.trace[0] - p.trace()) / p.trace(), 0.05) << "seed " << seed;
    }
    for (std::uint64_t seed = 100; seed < 103; ++seed) {
        Gen g(seed);
        const auto p = random_quadratic(8, {0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4}, g.rng);
        D h(Shape{8, 8}, p.h);
        D w = g.normal<double>({1, 8}, 1.0, true);
        RngStream rng(seed, 11);
        const auto r = hessian_trace<double>(quadratic_loss(w, h), {{w}}, {"w"}, 10000, rng);
        EXPECT_LT(std::abs(r.trace[0] - p.trace()) / p.trace(), 0.02) << "seed " << seed;
    }
}

TEST(HessianTrace, StandardErrorShrinksWithProbes) {
    Gen g(9);
    const auto p = random_quadratic(10, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, g.rng);
    D h(Shape{10, 10}, p.h);
    D w = g.normal<double>({1, 10}, 1.0, true);
    RngStream r1(1, 1), r2(2, 2);
    const double se100 = hessian_trace<double>(quadratic_loss(w, h), {{w}}, {"w"}, 100, r1).std_error[0];
    const double se1600 = hessian_trace<double>(quadratic_loss(w, h), {{w}}, {"w"}, 1600, r2).std_error[0];
    EXPECT_NEAR(se100 / se1600, 4.0, 1.2);
}

TEST(HessianTrace, GroupsSplitTheTrace) {
    // block-diagonal quadratic on (a, b): per-group traces are exact for diagonal blocks
    D a(Shape{1, 2}, {0.1, 0.2}, true), b(Shape{1, 3}, {0.3, 0.4, 0.5}, true);
    const D ha = diag_matrix({2, 4}), hb = diag_matrix({1, 1, 7});
    std::function<D()> f = [&] { return quadratic_loss(a, ha)() + quadratic_loss(b, hb)(); };
    RngStream rng(4, 4);
    const auto r = hessian_trace<double>(f, {{a}, {b}}, {"a", "b"}, 20, rng);
    EXPECT_NEAR(r.trace[0], 6.0, 1e-6);
    EXPECT_NEAR(r.trace[1], 9.0, 1e-6);
    EXPECT_EQ(r.names, (std::vector<std::string>{"a", "b"}));
}

TEST(HessianTrace, ParametersAndGradientsRestored) {
    Gen g(2);
    D w = g.normal<double>({1, 6}, 1.0, true);
    const auto before = w.to_vector();
    RngStream rng(0, 0);
    hessian_trace<double>(quadratic_loss(w, diag_matrix({1, 2, 3, 4, 5, 6})), {{w}}, {"w"}, 10, rng);
    EXPECT_EQ(w.to_vector(), before);
    for (double v : w.grad_vector()) EXPECT_EQ(v, 0.0);
}

TEST(HessianTrace, LinearRegressionLayerMatchesAnalyticTrace) {
    // single dense layer with MSE: H = (2/n)·XᵀX per output row, trace = 2/n·Σ‖x‖²
    RngStream rng(7, 0);
    const std::size_t n = 256, d = 6;
    const auto x = rng.normal_vector<float>(n * d);
    const auto y = rng.normal_vector<float>(n);
    Dataset ds{Tensor(Shape{n, d}, x), Tensor(Shape{n, 1}, y), TaskKind::regression, 0, "train"};
    Network net = build_network(mlp_spec(d, {}, 1), 3);
    double sq = 0;
    for (float v : x) sq += static_cast<double>(v) * v;
    const double expected = 2.0 / n * sq;
    RngStream probe(1, 1);
    const auto r = layer_weight_traces(net, ds, 2000, probe);
    ASSERT_EQ(r.trace.size(), 1u);
    EXPECT_NEAR(r.trace[0], expected, 0.05 * expected);
    EXPECT_NEAR(r.trace_per_element[0], expected / d, 0.05 * expected / d);
}

// ---------------------------------------------------------------------------
// Noise magnitude on quadratics

TEST(NoisyQuadratic, ClosedFormExample) {
    QuadraticProblem p;
    p.dim = 3;
    p.h = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    p.w = {0, 0, 0};
    EXPECT_NEAR(noisy_quadratic_closed_form(p, 0.6), 0.18, 1e-15);
    RngStream rng(0, 0);
    EXPECT_NEAR(noisy_quadratic_monte_carlo(p, 0.6, 100000, rng), 0.18, 0.05 * 0.18);
}

TEST(NoisyQuadratic, ClosedFormMatchesDiagonalHandComputation) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Gen g(seed);
        const std::size_t dim = g.size(1, 6);
        QuadraticProblem p;
        p.dim = dim;
        p.h.assign(dim * dim, 0.0);
        p.w.resize(dim);
        const double eps = g.uniform(0.1, 1.0);
        double expected = 0;
        for (std::size_t i = 0; i < dim; ++i) {
            p.h[i * dim + i] = g.uniform(0, 4);
            p.w[i] = g.uniform(-1, 1);
            // E[(w+u)²] = w² + ε²/3 for u ~ U[−ε, ε]
            expected += 0.5 * p.h[i * dim + i] * (p.w[i] * p.w[i] + eps * eps / 3.0);
        }
        EXPECT_NEAR(noisy_quadratic_closed_form(p, eps), expected, 1e-12);
    }
}

TEST(NoisyQuadratic, MonteCarloMatchesClosedForm) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Gen g(seed);
        const std::size_t dim = g.size(2, 8);
        std::vector<double> eig(dim);
        for (auto& e : eig) e = g.uniform(0.5, 3.0);
        auto p = random_quadratic(dim, eig, g.rng);
        for (auto& v : p.w) v = g.uniform(-0.5, 0.5);
        const double eps = g.uniform(0.1, 1.0);
        const double cf = noisy_quadratic_closed_form(p, eps);
        EXPECT_NEAR(noisy_quadratic_monte_carlo(p, eps, 100000, g.rng), cf, 0.05 * cf) << "seed " << seed;
    }
}

TEST(NoiseProbe, EpsilonConvergesToZero) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Gen g(seed);
        const auto p = random_quadratic(3, {1, 2, 3}, g.rng);
        const auto r = noise_magnitude_probe(p, NoiseProbeOptions{}, g.rng);
        ASSERT_EQ(r.eps.size(), NoiseProbeOptions{}.n_steps + 1);
        EXPECT_LT(std::abs(r.eps.back()), 0.01 * r.eps.front()) << "seed " << seed;
        EXPECT_LT(r.loss.back(), r.loss.front());
    }
}

TEST(NoiseProbe, EpsilonConvergesWhileTrainingWeights) {
    Gen g(3);
    auto p = random_quadratic(4, {0.5, 1, 2, 4}, g.rng);
    for (auto& v : p.w) v = g.uniform(-1, 1);
    NoiseProbeOptions o;
    o.train_w = true;
    o.n_steps = 400;
    const auto r = noise_magnitude_probe(p, o, g.rng);
    EXPECT_LT(std::abs(r.eps.back()), 0.01 * r.eps.front());
}

TEST(NoiseProbe, LinearLossOnlyDrifts) {
    // zero curvature: each step moves ε by lr·mean(u·c), a zero-mean walk with
    // per-step std lr·‖c‖/√(3·samples)
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Gen g(seed);
        const auto p = random_quadratic(3, {1, 2, 3}, g.rng);
        NoiseProbeOptions o;
        o.linear = true;
        const auto r = noise_magnitude_probe(p, o, g.rng);
        double c2 = 0;
        for (std::size_t i = 0; i < 3; ++i) c2 += p.h[i] * p.h[i];
        const double walk = o.lr * std::sqrt(c2 / (3.0 * o.samples_per_step)) * std::sqrt(static_cast<double>(o.n_steps));
        EXPECT_LT(std::abs(r.eps.back() - r.eps.front()), 4.0 * walk + 1e-6) << "seed " << seed;
    }
}

// ---------------------------------------------------------------------------
// Truncation boundary

TEST(BoundaryProbe, AlphaGrowsFromSmallInit) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = boundary_probe(BoundaryProbeOptions{}, seed);
        EXPECT_GT(r.alpha.back(), r.alpha.front()) << "seed " << seed;
        EXPECT_LT(r.final_loss, r.initial_loss);
        EXPECT_GE(r.negative_gradient_fraction, 0.95);
        EXPECT_GT(r.spearman, 0.8);
    }
}

TEST(BoundaryProbe, AlphaStationaryWithoutTruncation) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        BoundaryProbeOptions o;
        o.init_alpha_fraction = 1.0;
        const auto r = boundary_probe(o, seed);
        EXPECT_LT(std::abs(r.alpha.back() - r.alpha.front()) / r.alpha.front(), 0.05) << "seed " << seed;
    }
}

TEST(BoundaryProbe, FiniteDifferenceSignWhenTruncationDominates) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Gen g(seed);
        const std::size_t n = 128, d = 8;
        const Tensor x = g.uniform_tensor({n, d}, 0, 1);
        const Tensor w = g.uniform_tensor({3, d}, 0, 1);
        const Tensor y = linear(x, w);
        auto loss_at = [&](float a) {
            NoGradGuard ng;
            QuantParams<float> q;
            q.mode = QuantMode::quant;
            set_bit(q, 8.0f);
            set_alpha(q, a);
            return static_cast<double>(mse(linear(quantize(x, q, nullptr), w), y).item());
        };
        const float a = 0.25f;
        EXPECT_LT(loss_at(a * 1.05f), loss_at(a * 0.95f)) << "seed " << seed;
    }
}

// ---------------------------------------------------------------------------
// Robustness sweep

TEST(Sweep, UnitFactorMatchesBaselineAndRestores) {
    const auto b = blobs(1);
    Network net = trained_mlp(1, b);
    const auto before = snapshot(net);
    const double base = evaluate_quant(net, b.test).metric();
    for (auto t : {SweepTarget::activation, SweepTarget::weight, SweepTarget::both}) {
        const auto r = robustness_sweep(net, b.test, {0.5, 0.8, 1.0, 1.2}, t);
        ASSERT_EQ(r.metric.size(), 4u);
        EXPECT_EQ(r.metric[2], base);
        EXPECT_EQ(r.baseline_metric, base);
        for (double m : r.metric) EXPECT_TRUE(std::isfinite(m));
    }
    EXPECT_EQ(snapshot(net), before);
    EXPECT_EQ(evaluate_quant(net, b.test).metric(), base);
    for (auto* l : net.quant_layers()) {
        EXPECT_EQ(l->w_quant.alpha_scale, 1.0f);
        EXPECT_EQ(l->a_quant.alpha_scale, 1.0f);
    }
}

TEST(Sweep, ZeroFactorGivesChanceOnBalancedClasses) {
    const auto b = blobs(2);
    Network net = trained_mlp(2, b);
    const auto r = robustness_sweep(net, b.test, {0.0, 1.0}, SweepTarget::both);
    EXPECT_NEAR(r.metric[0], 0.25, 1e-12);
}

TEST(Sweep, RejectsBadFactors) {
    const auto b = blobs(3, 40);
    Network net = build_network(mlp_spec(8, {4}, 4), 3);
    EXPECT_THROW(robustness_sweep(net, b.test, {0.9, 1.1}, SweepTarget::both), Error);
    EXPECT_THROW(robustness_sweep(net, b.test, {-0.1, 1.0}, SweepTarget::both), Error);
    EXPECT_THROW(parse_sweep_target("bias"), Error);
    EXPECT_EQ(parse_sweep_target("weight"), SweepTarget::weight);
}

TEST(Sweep, IntegratedDropTrapezoid) {
    SweepResult r;
    r.factors = {1.2, 0.8, 1.0, 0.5};
    r.baseline_metric = 0.9;
    r.metric = {0.7, 0.8, 0.9, 0.1};
    // drops 0.1 at 0.8, 0 at 1.0, 0.2 at 1.2: 0.2·0.05 + 0.2·0.1
    EXPECT_NEAR(integrated_drop(r), 0.03, 1e-12);
    r.metric = {0.9, 0.9, 0.9, 0.9};
    EXPECT_EQ(integrated_drop(r), 0.0);
}

// ---------------------------------------------------------------------------
// Landscape

TEST(Landscape, FilterNormalizedRowsMatchWeightNorms) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Gen g(seed);
        const std::size_t rows = g.size(1, 6), cols = g.size(1, 10);
        const Tensor w = g.normal({rows, cols});
        const auto d = filter_normalized_direction(w, g.rng);
        const auto wd = w.to_vector();
        for (std::size_t r = 0; r < rows; ++r) {
            double nw = 0, nd = 0;
            for (std::size_t i = r * cols; i < (r + 1) * cols; ++i) {
                nw += static_cast<double>(wd[i]) * wd[i];
                nd += static_cast<double>(d[i]) * d[i];
            }
            EXPECT_NEAR(std::sqrt(nd), std::sqrt(nw), 1e-4 * std::max(1.0, std::sqrt(nw)));
        }
    }
}

TEST(Landscape, CenterFiniteAndRestored) {
    const auto b = blobs(4);
    Network net = trained_mlp(4, b);
    const auto before = snapshot(net);
    const double base = evaluate_quant(net, b.test).loss;
    RngStream rng(4, 0);
    const auto r = landscape_slice(net, b.test, 5, 0.5, rng);
    ASSERT_EQ(r.loss.size(), 25u);
    EXPECT_EQ(r.coords, (std::vector<double>{-0.5, -0.25, 0.0, 0.25, 0.5}));
    EXPECT_EQ(r.center_loss, base);
    EXPECT_EQ(r.loss[2 * 5 + 2], base);
    for (double v : r.loss) EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(r.mean_increase(0.5), r.mean_increase(0.0));
    EXPECT_EQ(r.mean_increase(0.0), 0.0);
    EXPECT_EQ(snapshot(net), before);
    EXPECT_EQ(evaluate_quant(net, b.test).loss, base);
    EXPECT_THROW(landscape_slice(net, b.test, 0, 0.5, rng), Error);
}

// ---------------------------------------------------------------------------
// Sensitivity

TEST(Sensitivity, ReportShapeAndCorrelationRange) {
    const auto b = blobs(5);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        Network net = build_network(mlp_spec(8, {16, 16}, 4), seed);
        auto cfg = quick(seed);
        cfg.targets = {ResourceTarget{ResourceKind::avg_bit_weight, 4.0, 1.0, 1.0}};
        train_two_stage(net, b.train, b.test, cfg);
        RngStream rng(seed, 1);
        const auto rep = sensitivity_report(net, b.train, 20, rng);
        const auto layers = net.quant_layers();
        ASSERT_EQ(rep.rows.size(), layers.size());
        for (std::size_t i = 0; i < layers.size(); ++i) {
            EXPECT_EQ(rep.rows[i].name, layers[i]->name);
            EXPECT_EQ(rep.rows[i].bit_w, deployed_weight_bits(*layers[i]));
            EXPECT_TRUE(std::isfinite(rep.rows[i].trace));
        }
        EXPECT_GE(rep.rank_correlation, -1.0);
        EXPECT_LE(rep.rank_correlation, 1.0);
    }
}

TEST(Sensitivity, PairTraceOrderingFollowsInputScale) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        SensitivityPairOptions o;
        const auto run = [&](double scale_a) {
            o.scale_a = scale_a;
            const auto train = make_sensitivity_pair_data(o, seed, "train");
            const auto test = make_sensitivity_pair_data(o, seed, "test");
            Network net = build_network(sensitivity_pair_spec(o.dim_a, o.dim_b, o.hidden), seed);
            return verify_sensitivity_pair(net, train, test, sensitivity_pair_fp_config(seed), 200, -1e300);
        };
        const auto forward = run(3.0), swapped = run(1.0 / 3.0);
        EXPECT_GE(forward.ratio, 5.0) << "seed " << seed;
        EXPECT_LT(swapped.ratio, 1.0 / 5.0) << "seed " << seed;
        EXPECT_LT(forward.fp_loss, 0.1);
        EXPECT_LT(swapped.fp_loss, 0.1);
    }
}

TEST(Sensitivity, PairCheckRejectsWeakInstance) {
    SensitivityPairOptions o;
    o.scale_a = 1.0;
    o.n_train = 256;
    const auto train = make_sensitivity_pair_data(o, 0, "train");
    Network net = build_network(sensitivity_pair_spec(), 0);
    auto cfg = sensitivity_pair_fp_config(0);
    cfg.stage1_epochs = 5;
    EXPECT_THROW(verify_sensitivity_pair(net, train, train, cfg, 20, 50.0), Error);
}

// ---------------------------------------------------------------------------
// Truncation versus min-max

TEST(Compare, RowsCoverEveryBitSeedAndVariant) {
    RunConfig c;
    c.dataset.n_train = 200;
    c.dataset.n_test = 100;
    c.network.hidden = {8};
    c.train = quick(0);
    c.train.stage1_epochs = 2;
    c.train.warmup_epochs = 0;
    const auto rows = compare_truncation_minmax(c, {3.0, 5.0}, 2);
    ASSERT_EQ(rows.size(), 8u);
    std::size_t trunc = 0;
    for (const auto& r : rows) {
        trunc += r.variant == "truncation";
        EXPECT_TRUE(r.metric >= 0.0 && r.metric <= 1.0);
        EXPECT_TRUE(r.bits == 3.0 || r.bits == 5.0);
    }
    EXPECT_EQ(trunc, 4u);
}

TEST(Compare, HighBitBothVariantsMatchFullPrecision) {
    RunConfig c;
    c.dataset.n_train = 2000;
    c.dataset.n_test = 1000;
    c.dataset.separation = 3.0;
    c.network.hidden = {32};
    c.train = quick(0);
    c.train.stage1_epochs = 8;
    const auto rows = compare_truncation_minmax(c, {13.9}, 1);
    auto fp_cfg = c;
    fp_cfg.train.method = TrainMethod::fp;
    const auto e = make_experiment(fp_cfg);
    Network net = build_network(e.spec, c.seed);
    const double fp = train_two_stage(net, e.train, e.test, fp_cfg.train).final_eval.metric();
    for (const auto& r : rows) EXPECT_NEAR(r.metric, fp, 0.01) << r.variant;
}

TEST(Compare, MinmaxExactOnSymmetricTwoPointWeights) {
    QuantParams<float> q;
    q.variant = QuantVariant::minmax;
    q.mode = QuantMode::quant;
    q.is_signed = true;
    set_bit(q, 2.25f);
    const Tensor w(Shape{2, 3}, {-0.7f, 0.7f, 0.7f, -0.7f, -0.7f, 0.7f});
    EXPECT_EQ(quantize(w, q, nullptr).to_vector(), w.to_vector());
}
