#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dec_scenario.hpp"
#include "fixtures.hpp"
#include "gradient_suite.hpp"
#include "test_util.hpp"
#include "urgency/dec.hpp"

#include <cmath>
#include <limits>

using namespace urgency;
using testutil::error_kind;

namespace {

Eigen::MatrixXd random(Index r, Index c, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return gradsuite::random_matrix(r, c, rng, scale);
}

DecConfig quick_config() {
    DecConfig c;
    c.pretrain.epochs = 2;
    c.batch = 64;
    c.update_interval = 3;
    c.max_iterations = 12;
    return c;
}

} // namespace

TEST_CASE("canonical network size") {
    const auto ae = make_dec_autoencoder(1);
    CHECK(ae.param_count() == 652'150);
    CHECK(ae.input_dim() == 50);
    CHECK(ae.latent_dim() == 100);
    CHECK(ae.encode(random(3, 50, 2)).cols() == 100);
    CHECK(ae.decode(random(3, 100, 2)).cols() == 50);
}

TEST_CASE("soft assignment") {
    Eigen::MatrixXd z(1, 1), mu(2, 1);
    z << 0;
    mu << 0, 2;
    const auto q = soft_assign(z, mu);
    CHECK(q(0, 0) == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(q(0, 1) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));

    Eigen::MatrixXd far(3, 2);
    far << 1, 1, 1e4, 0, 0, -1e4;
    Eigen::MatrixXd at(1, 2);
    at << 1, 1;
    const auto q1 = soft_assign(at, far);
    CHECK(q1(0, 0) == doctest::Approx(1.0).epsilon(1e-7));

    const auto qr = soft_assign(random(40, 5, 3), random(3, 5, 4));
    for (Index i = 0; i < qr.rows(); ++i) CHECK(std::abs(qr.row(i).sum() - 1.0) <= 1e-12);
    CHECK(error_kind([] { soft_assign(Eigen::MatrixXd(2, 3), Eigen::MatrixXd(2, 4)); }) == ErrorKind::shape);
}

TEST_CASE("target distribution") {
    Eigen::MatrixXd one(1, 2);
    one << 5.0 / 6.0, 1.0 / 6.0;
    CHECK((target_distribution(one) - one).norm() < 1e-15);

    Eigen::MatrixXd q(2, 2);
    q << 0.9, 0.1, 0.6, 0.4;
    // f = (1.5, 0.5): row 1 is (0.54, 0.02) normalised, row 2 (0.24, 0.32).
    const auto p = target_distribution(q);
    CHECK(p(0, 0) == doctest::Approx(0.54 / 0.56).epsilon(1e-12));
    CHECK(p(0, 1) == doctest::Approx(0.02 / 0.56).epsilon(1e-12));
    CHECK(p(1, 0) == doctest::Approx(0.24 / 0.56).epsilon(1e-12));
    CHECK(p(1, 1) == doctest::Approx(0.32 / 0.56).epsilon(1e-12));
    CHECK(p(0, 0) == doctest::Approx(0.9643).epsilon(1e-4));
    CHECK(p(1, 1) == doctest::Approx(0.5714).epsilon(1e-4));

    Rng rng(6);
    const auto pr = target_distribution(gradsuite::random_simplex(30, 3, rng));
    for (Index i = 0; i < pr.rows(); ++i) CHECK(std::abs(pr.row(i).sum() - 1.0) <= 1e-9);
}

TEST_CASE("zero-epoch pretraining leaves the network untouched") {
    const auto x = random(20, 50, 7);
    PretrainConfig cfg;
    cfg.epochs = 0;
    const auto init = make_dec_autoencoder(9);
    const auto out = pretrain_autoencoder(x, init, cfg, 9);
    for (std::size_t l = 0; l < init.encoder.layers.size(); ++l) {
        CHECK(out.autoencoder.encoder.layers[l].w == init.encoder.layers[l].w);
        CHECK(out.autoencoder.decoder.layers[l].b == init.decoder.layers[l].b);
    }
    CHECK(out.autoencoder.param_count() == 652'150);
}

TEST_CASE("pretraining reduces reconstruction error tenfold") {
    Eigen::MatrixXd centers = random(4, 50, 10, 2.0);
    const auto data = fixture::blobs(centers, 50, 0.5, 11);
    REQUIRE(data.x.rows() == 200);
    PretrainConfig cfg;
    const auto out = pretrain_autoencoder(data.x, cfg, 12);
    CHECK(out.epoch_mse.size() == 200);
    CHECK(out.final_mse < 0.1 * out.initial_mse);
}

TEST_CASE("pretraining rejects the wrong width and non-finite data") {
    PretrainConfig cfg;
    cfg.epochs = 1;
    CHECK(error_kind([&] { pretrain_autoencoder(random(5, 49, 1), cfg, 1); }) == ErrorKind::shape);
    Eigen::MatrixXd bad = random(8, 50, 1);
    bad(3, 3) = std::numeric_limits<double>::quiet_NaN();
    CHECK(error_kind([&] { pretrain_autoencoder(bad, cfg, 1); }) == ErrorKind::divergence);
}

TEST_CASE("composite loss gradient") {
    nn::GradCheckOptions opt;
    const auto r = gradsuite::check_dec_small(16, opt);
    CHECK(r.passed);
    CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("refinement invariants and determinism") {
    const auto data = fixture::dec_fixture(3);
    const auto cfg = quick_config();
    auto run = [&] {
        auto pre = pretrain_autoencoder(data.x, make_dec_autoencoder(5), cfg.pretrain, 5);
        return dec_train(data.x, std::move(pre.autoencoder), 5, cfg);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.model.assignments == b.model.assignments);
    CHECK(a.model.centers == b.model.centers);
    CHECK(a.model.method == "dec");
    CHECK(a.model.centers.rows() == 3);
    CHECK(a.model.centers.cols() == 100);
    CHECK(a.model.assignments.size() == 150);
    for (Index i = 0; i < a.state.q.rows(); ++i) {
        CHECK(std::abs(a.state.q.row(i).sum() - 1.0) <= 1e-9);
        CHECK(std::abs(a.state.p.row(i).sum() - 1.0) <= 1e-9);
    }
    for (const auto& h : a.state.history) {
        CHECK(h.kld >= 0.0);
        CHECK(h.total == doctest::Approx(h.recon_loss + cfg.gamma * h.kld));
        if (h.label_change_fraction) {
            CHECK(*h.label_change_fraction >= 0.0);
            CHECK(*h.label_change_fraction <= 1.0);
        }
    }
}

TEST_CASE("tolerance above one stops at the first check") {
    const auto data = fixture::dec_fixture(4);
    auto cfg = quick_config();
    cfg.tolerance = 1.1;
    auto pre = pretrain_autoencoder(data.x, make_dec_autoencoder(6), cfg.pretrain, 6);
    const auto r = dec_train(data.x, std::move(pre.autoencoder), 6, cfg);
    CHECK(r.state.converged);
    CHECK(r.state.checks == 1);
    CHECK(r.state.iterations == cfg.update_interval);
}

TEST_CASE("unchanged assignments give a zero change fraction") {
    // With a zero learning rate nothing moves between checks.
    const auto data = fixture::dec_fixture(5);
    auto cfg = quick_config();
    cfg.sgd.lr = 0.0;
    cfg.tolerance = 1e-9;
    auto pre = pretrain_autoencoder(data.x, make_dec_autoencoder(7), cfg.pretrain, 7);
    const auto r = dec_train(data.x, std::move(pre.autoencoder), 7, cfg);
    CHECK(r.state.label_change_fraction == 0.0);
    CHECK(r.state.converged);
    CHECK(r.model.assignments == r.initial_labels);
}

TEST_CASE("refined clusters are at least as compact as the K-means start") {
    const auto out = scenario::run_dec_scenario();
    MESSAGE("kmeans " << out.kmeans_silhouette << ", init labels refined " << out.init_on_refined << ", dec "
                      << out.dec_silhouette);
    CHECK(out.dec_silhouette >= out.kmeans_silhouette);
    CHECK(out.dec_silhouette >= out.init_on_refined);
}

TEST_CASE("history and checkpoint files") {
    testutil::TempDir dir;
    const auto data = fixture::dec_fixture(6);
    const auto cfg = quick_config();
    auto pre = pretrain_autoencoder(data.x, make_dec_autoencoder(8), cfg.pretrain, 8);
    const auto r = dec_train(data.x, std::move(pre.autoencoder), 8, cfg);
    write_dec_history(r.state.history, dir / "h.csv");
    const auto csv = testutil::read_file(dir / "h.csv");
    CHECK(csv.rfind("iteration,recon_loss,kld,total,label_change_fraction\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == r.state.history.size() + 1);
    write_dec_checkpoint(r, cfg, 8, dir / "dec.ckpt");
    CHECK(std::filesystem::file_size(dir / "dec.ckpt") > 652'150 * 8);
}

TEST_CASE("config JSON round trip") {
    DecConfig c;
    c.update_interval = 77;
    c.gamma = 0.25;
    c.pretrain.epochs = 5;
    const auto back = dec_config_from_json(to_json(c));
    CHECK(back.update_interval == 77);
    CHECK(back.gamma == 0.25);
    CHECK(back.pretrain.epochs == 5);
    CHECK(back.tolerance == c.tolerance);
}
