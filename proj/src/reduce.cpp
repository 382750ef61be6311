#include "urgency/reduce.hpp"

#include "urgency/error.hpp"

#include <fstream>
#include <json.hpp>

namespace urgency {

PcaModel pca_fit(const EmbeddingMatrix& x, Eigen::Index out_dim) {
    const Eigen::Index n = x.n();
    const Eigen::Index dim = x.dim();
    if (out_dim < 1 || out_dim > std::min(n - 1, dim))
        throw Error(ErrorKind::rank, "cannot extract " + std::to_string(out_dim) + " components from " +
                                         std::to_string(n) + " points in " + std::to_string(dim) + " dimensions");

    PcaModel model;
    model.mean = x.data.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.data.rowwise() - model.mean.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    model.components = svd.matrixV().leftCols(out_dim).transpose();
    model.explained_variance = sv.head(out_dim).array().square() / static_cast<double>(n - 1);

    for (Eigen::Index c = 0; c < out_dim; ++c) {
        Eigen::Index arg = 0;
        model.components.row(c).cwiseAbs().maxCoeff(&arg);
        if (model.components(c, arg) < 0) model.components.row(c) *= -1.0;
    }
    return model;
}

EmbeddingMatrix pca_transform(const PcaModel& model, const EmbeddingMatrix& x) {
    if (x.dim() != model.in_dim())
        throw Error(ErrorKind::shape, "input has dimension " + std::to_string(x.dim()) + ", model expects " +
                                          std::to_string(model.in_dim()));
    EmbeddingMatrix out;
    out.ids = x.ids;
    out.data = (x.data.rowwise() - model.mean.transpose()) * model.components.transpose();
    return out;
}

EmbeddingMatrix import_reduced(const std::filesystem::path& path, Eigen::Index expected_dim) {
    auto m = read_embeddings(path);
    if (m.n() > 0 && m.dim() != expected_dim)
        throw Error(ErrorKind::format, path.string() + ": reduced dimension " + std::to_string(m.dim()) + " != " +
                                           std::to_string(expected_dim));
    return m;
}

void write_pca_model(const PcaModel& model, const std::filesystem::path& path) {
    auto to_vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    nlohmann::json components = nlohmann::json::array();
    for (Eigen::Index r = 0; r < model.components.rows(); ++r) components.push_back(to_vec(model.components.row(r)));
    nlohmann::json doc = {{"in_dim", model.in_dim()},
                          {"out_dim", model.out_dim()},
                          {"mean", to_vec(model.mean)},
                          {"explained_variance", to_vec(model.explained_variance)},
                          {"components", components}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << doc.dump() << '\n';
}

PcaModel read_pca_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    try {
        auto doc = nlohmann::json::parse(in);
        auto to_eigen = [](const std::vector<double>& v) {
            return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
        };
        PcaModel m;
        m.mean = to_eigen(doc.at("mean").get<std::vector<double>>());
        m.explained_variance = to_eigen(doc.at("explained_variance").get<std::vector<double>>());
        const auto rows = doc.at("components").get<std::vector<std::vector<double>>>();
        m.components.resize(static_cast<Eigen::Index>(rows.size()), m.mean.size());
        for (std::size_t r = 0; r < rows.size(); ++r) m.components.row(static_cast<Eigen::Index>(r)) = to_eigen(rows[r]).transpose();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, path.string() + ": " + e.what());
    }
}

} // namespace urgency
