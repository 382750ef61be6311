#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"
#include "urgency/error.hpp"
#include "urgency/reduce.hpp"
#include "urgency/rng.hpp"

using namespace urgency;

namespace {

EmbeddingMatrix make(const Eigen::MatrixXd& data) {
    EmbeddingMatrix m;
    m.data = data;
    for (Eigen::Index i = 0; i < data.rows(); ++i) m.ids.push_back("p" + std::to_string(i));
    return m;
}

EmbeddingMatrix gaussian(Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd x(n, dim);
    for (Eigen::Index j = 0; j < dim; ++j)
        for (Eigen::Index i = 0; i < n; ++i) x(i, j) = rng.normal() * (1.0 + 0.1 * static_cast<double>(j)) + 0.3 * j;
    return make(x);
}

} // namespace

TEST_CASE("points on a line give a component parallel to it") {
    Eigen::VectorXd dir(5), origin(5);
    dir << 1, -2, 0.5, 3, 1;
    origin << 4, 4, -1, 0, 2;
    Eigen::MatrixXd x(3, 5);
    for (int i = 0; i < 3; ++i) x.row(i) = (origin + (i * 1.7 - 0.4) * dir).transpose();
    const auto model = pca_fit(make(x), 1);
    const double cosine = model.components.row(0).dot(dir) / dir.norm();
    CHECK(std::abs(cosine) > 1.0 - 1e-9);
    CHECK(model.components.row(0).cwiseAbs().maxCoeff() == doctest::Approx(model.components.row(0).maxCoeff()));
}

TEST_CASE("axis-aligned centered data yields coordinate axes") {
    Eigen::MatrixXd x(4, 3);
    x << 3, 0, 0, -3, 0, 0, 0, 1, 0, 0, -1, 0;
    const auto model = pca_fit(make(x), 2);
    CHECK(model.components.row(0).isApprox(Eigen::RowVector3d(1, 0, 0), 1e-12));
    CHECK(model.components.row(1).isApprox(Eigen::RowVector3d(0, 1, 0), 1e-12));
}

TEST_CASE("rank errors") {
    const auto x = gaussian(20, 70, 1);
    try {
        pca_fit(x, 60);
        FAIL("expected rank error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::rank);
    }
    CHECK_THROWS_AS(pca_fit(gaussian(5, 3, 1), 4), Error);
}

TEST_CASE("pca model invariants and transform") {
    const auto x = gaussian(80, 30, 2);
    const auto model = pca_fit(x, 10);
    CHECK(model.in_dim() == 30);
    CHECK(model.out_dim() == 10);
    const Eigen::MatrixXd gram = model.components * model.components.transpose();
    CHECK((gram - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-8);
    for (Eigen::Index i = 1; i < 10; ++i) CHECK(model.explained_variance(i) <= model.explained_variance(i - 1));
    CHECK(model.explained_variance.minCoeff() >= 0.0);

    const auto z = pca_transform(model, x);
    CHECK(z.ids == x.ids);
    const Eigen::RowVectorXd zmean = z.data.colwise().mean();
    for (Eigen::Index j = 0; j < 10; ++j) {
        const double var = (z.data.col(j).array() - zmean(j)).square().sum() / static_cast<double>(z.n() - 1);
        CHECK(std::abs(var - model.explained_variance(j)) < 1e-8);
    }
    const Eigen::RowVectorXd xmean = x.data.colwise().mean();
    const double total = (x.data.rowwise() - xmean).array().square().sum() / static_cast<double>(x.n() - 1);
    CHECK(model.explained_variance.sum() <= total + 1e-8);

    for (Eigen::Index i = 0; i < x.n(); ++i)
        for (Eigen::Index k = i + 1; k < x.n(); ++k)
            CHECK((z.data.row(i) - z.data.row(k)).norm() <= (x.data.row(i) - x.data.row(k)).norm() + 1e-8);

    EmbeddingMatrix mean_only = make(model.mean.transpose());
    CHECK(pca_transform(model, mean_only).data.norm() < 1e-12);
    CHECK_THROWS_AS(pca_transform(model, gaussian(3, 29, 1)), Error);
}

TEST_CASE("identity model is a coordinate projection") {
    PcaModel model;
    model.mean = Eigen::VectorXd::Zero(60);
    model.components = Eigen::MatrixXd::Identity(50, 60);
    model.explained_variance = Eigen::VectorXd::Ones(50);
    const auto x = gaussian(3, 60, 4);
    CHECK(pca_transform(model, x).data == x.data.leftCols(50));
}

TEST_CASE("pca_fit is bit-deterministic and the model round-trips") {
    testutil::TempDir dir;
    const auto x = gaussian(60, 40, 8);
    const auto a = pca_fit(x, 5), b = pca_fit(x, 5);
    CHECK(a.components == b.components);
    CHECK(a.explained_variance == b.explained_variance);
    write_pca_model(a, dir / "m.json");
    const auto back = read_pca_model(dir / "m.json");
    CHECK(back.components == a.components);
    CHECK(back.mean == a.mean);
}

TEST_CASE("import_reduced checks the dimension") {
    testutil::TempDir dir;
    write_embeddings(gaussian(3, 50, 1), dir / "r.emb", EmbeddingFormat::binary);
    CHECK(import_reduced(dir / "r.emb").dim() == 50);
    write_embeddings(gaussian(3, 49, 1), dir / "bad.emb", EmbeddingFormat::binary);
    CHECK_THROWS_AS(import_reduced(dir / "bad.emb"), Error);
    CHECK(import_reduced(dir / "bad.emb", 49).n() == 3);
}
