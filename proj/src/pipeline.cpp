#include "urgency/pipeline.hpp"

#include "urgency/corpus.hpp"
#include "urgency/reduce.hpp"
#include "urgency/validity.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <set>

namespace urgency {

namespace fs = std::filesystem;

namespace {

enum StageSeed : std::uint64_t { kReduce = 1, kScan = 2, kKmeans = 3, kAutoencoder = 4, kDec = 5, kSample = 6, kSession = 7, kSplit = 8, kTrain = 9, kCv = 10 };

fs::path resolve(const nlohmann::json& j, const char* key, const fs::path& base) {
    if (!j.contains(key) || j[key].is_null()) return {};
    const fs::path p = j[key].get<std::string>();
    return p.is_absolute() ? p : base / p;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorKind::io, "write failed on " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, path.string() + ": " + e.what());
    }
}

nlohmann::json scan_json(const SilhouetteScan& scan) {
    return {{"k", scan.ks}, {"silhouette", scan.scores}, {"chosen_k", scan.chosen_k}};
}

nlohmann::json validity_json(const ValidityReport& r) {
    return {{"silhouette", r.silhouette}, {"calinski_harabasz", r.calinski_harabasz}, {"davies_bouldin", r.davies_bouldin},
            {"n", r.n}, {"k", r.k}};
}

// Inverse of the cluster map, so stored labels can be reused as cluster ids.
std::vector<int> clusters_of(const LabelTable& table, const std::vector<std::string>& ids, const std::array<int, kNumClasses>& map) {
    std::array<int, kNumClasses> inverse{};
    for (int c = 0; c < kNumClasses; ++c) inverse[static_cast<std::size_t>(map[static_cast<std::size_t>(c)])] = c;
    std::vector<int> out;
    for (const auto& id : ids) out.push_back(inverse[static_cast<std::size_t>(table.at(id))]);
    return out;
}

struct Stage {
    std::string name;
    std::uint64_t seed = 0;
    nlohmann::json config;
    std::vector<fs::path> inputs;
    std::vector<fs::path> outputs;
    // Returns false to record a pause instead of success.
    std::function<bool(std::string& message)> body;
};

class Runner {
public:
    Runner(const PipelineConfig& config, const fs::path& workdir)
        : config_(config), workdir_(workdir), manifest_path_(workdir / "manifest.json") {
        if (fs::exists(manifest_path_)) {
            outcome_.manifest = read_manifest(manifest_path_);
        } else {
            outcome_.manifest.seed = config.seed;
            outcome_.manifest.config = config.snapshot();
        }
    }

    // True when the pipeline should continue past this stage.
    bool run(const Stage& stage) {
        if (up_to_date(stage)) {
            outcome_.reused.push_back(stage.name);
            return true;
        }
        StageRecord rec;
        rec.name = stage.name;
        rec.seed = stage.seed;
        rec.config = stage.config;
        rec.started = utc_timestamp();
        bool proceed = false;
        try {
            rec.inputs = digest(stage.inputs);
            std::string message;
            proceed = stage.body(message);
            rec.message = message;
            rec.status = proceed ? "ok" : "paused";
            if (proceed) rec.outputs = digest(stage.outputs);
        } catch (const std::exception& e) {
            rec.status = "failed";
            rec.message = e.what();
            rec.finished = utc_timestamp();
            outcome_.manifest.stages.push_back(rec);
            write_manifest(outcome_.manifest, manifest_path_);
            throw;
        }
        rec.finished = utc_timestamp();
        outcome_.manifest.stages.push_back(rec);
        write_manifest(outcome_.manifest, manifest_path_);
        if (proceed) outcome_.executed.push_back(stage.name);
        else outcome_.paused = true;
        return proceed;
    }

    RunOutcome take() { return std::move(outcome_); }

private:
    std::string label(const fs::path& p) const {
        const auto rel = p.lexically_relative(workdir_);
        if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
        return p.generic_string();
    }

    std::vector<FileDigest> digest(const std::vector<fs::path>& files) const {
        std::vector<FileDigest> out;
        for (const auto& f : files) out.push_back({label(f), sha256_file(f)});
        return out;
    }

    bool up_to_date(const Stage& stage) const {
        const StageRecord* rec = outcome_.manifest.last_ok(stage.name);
        if (!rec || rec->config != stage.config || rec->seed != stage.seed) return false;
        if (rec->inputs.size() != stage.inputs.size() || rec->outputs.size() != stage.outputs.size()) return false;
        auto matches = [&](const std::vector<FileDigest>& recorded, const std::vector<fs::path>& files) {
            for (std::size_t i = 0; i < files.size(); ++i) {
                if (recorded[i].path != label(files[i]) || !fs::exists(files[i])) return false;
                if (recorded[i].sha256 != sha256_file(files[i])) return false;
            }
            return true;
        };
        return matches(rec->inputs, stage.inputs) && matches(rec->outputs, stage.outputs);
    }

    const PipelineConfig& config_;
    fs::path workdir_;
    fs::path manifest_path_;
    RunOutcome outcome_;
};

std::vector<fs::path> preprocess_inputs(const PipelineConfig& c) {
    std::vector<fs::path> in{c.corpus};
    for (const char* f : {"stopwords_general.txt", "stopwords_medical.txt", "abbreviations.txt", "phrases.txt"})
        if (!c.preprocess_dir.empty() && fs::exists(c.preprocess_dir / f)) in.push_back(c.preprocess_dir / f);
    return in;
}

std::vector<std::string> kept_ids(const std::vector<TranscriptRecord>& records) {
    std::vector<std::string> ids;
    for (const auto& r : records)
        if (!r.flagged) ids.push_back(r.id);
    return ids;
}

} // namespace

nlohmann::json PipelineConfig::snapshot() const {
    nlohmann::json experts_json = nlohmann::json::array();
    for (const auto& e : experts) experts_json.push_back(e.id); // tokens stay out of the manifest
    return {{"seed", seed},
            {"corpus", corpus.generic_string()},
            {"preprocess_dir", preprocess_dir.generic_string()},
            {"specialty", specialty},
            {"embeddings", embeddings.generic_string()},
            {"sequences", sequences.generic_string()},
            {"reduce", {{"method", reduce_method}, {"dim", reduce_dim}, {"import", reduced_import.generic_string()}}},
            {"scan", {{"kmin", scan_kmin}, {"kmax", scan_kmax}}},
            {"kmeans", {{"k", k}, {"n_init", kmeans.n_init}, {"max_iter", kmeans.max_iter}}},
            {"dec", to_json(dec)},
            {"cluster_to_label", cluster_to_label},
            {"delphi", {{"session_id", session_id}, {"fraction", review_fraction}, {"experts", experts_json}}},
            {"split", {{"train_fraction", train_fraction}}},
            {"classifier", clf::to_json(classifier)},
            {"cv_folds", cv_folds}};
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const fs::path& base) {
    try {
        PipelineConfig c;
        c.seed = j.value("seed", c.seed);
        c.corpus = resolve(j, "corpus", base);
        c.embeddings = resolve(j, "embeddings", base);
        c.sequences = resolve(j, "sequences", base);
        if (c.corpus.empty() || c.embeddings.empty() || c.sequences.empty())
            throw Error(ErrorKind::parse, "pipeline config needs corpus, embeddings and sequences");
        if (j.contains("preprocess")) {
            const auto& p = j["preprocess"];
            c.preprocess_dir = resolve(p, "config_dir", base);
            c.specialty = p.value("specialty", c.specialty);
        }
        if (j.contains("reduce")) {
            const auto& r = j["reduce"];
            c.reduce_method = r.value("method", c.reduce_method);
            c.reduce_dim = r.value("dim", c.reduce_dim);
            c.reduced_import = resolve(r, "import", base);
            if (c.reduce_method != "pca" && c.reduce_method != "import")
                throw Error(ErrorKind::parse, "reduce.method must be pca or import");
            if (c.reduce_method == "import" && c.reduced_import.empty())
                throw Error(ErrorKind::parse, "reduce.method import needs reduce.import");
        }
        if (j.contains("scan")) {
            c.scan_kmin = j["scan"].value("kmin", c.scan_kmin);
            c.scan_kmax = j["scan"].value("kmax", c.scan_kmax);
        }
        if (j.contains("kmeans")) {
            const auto& k = j["kmeans"];
            c.k = k.value("k", c.k);
            c.kmeans.n_init = k.value("n_init", c.kmeans.n_init);
            c.kmeans.max_iter = k.value("max_iter", c.kmeans.max_iter);
        }
        if (c.k != kNumClasses) throw Error(ErrorKind::domain, "the label pipeline needs k = 3 (one cluster per urgency class)");
        if (j.contains("dec")) c.dec = dec_config_from_json(j["dec"]);
        if (j.contains("cluster_to_label")) {
            c.cluster_to_label = j["cluster_to_label"].get<std::array<int, kNumClasses>>();
            std::set<int> seen(c.cluster_to_label.begin(), c.cluster_to_label.end());
            if (seen != std::set<int>{0, 1, 2}) throw Error(ErrorKind::domain, "cluster_to_label must be a permutation of 0,1,2");
        }
        if (j.contains("delphi")) {
            const auto& d = j["delphi"];
            c.session_id = d.value("session_id", c.session_id);
            c.review_fraction = d.value("fraction", c.review_fraction);
            for (const auto& e : d.value("experts", nlohmann::json::array()))
                c.experts.push_back({e.at("id").get<std::string>(), e.at("token").get<std::string>()});
        }
        if (c.experts.empty()) throw Error(ErrorKind::parse, "pipeline config needs at least one delphi expert");
        if (j.contains("split")) c.train_fraction = j["split"].value("train_fraction", c.train_fraction);
        if (j.contains("classifier")) c.classifier = clf::train_config_from_json(j["classifier"]);
        c.cv_folds = j.value("cv_folds", c.cv_folds);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("pipeline config: ") + e.what());
    }
}

PipelineConfig read_pipeline_config(const fs::path& path) {
    return pipeline_config_from_json(read_json(path), fs::absolute(path).parent_path());
}

fs::path session_store_dir(const fs::path& workdir) { return workdir / "sessions"; }

LabelTable label_clusters(const std::vector<std::string>& ids, std::span<const int> clusters,
                          const std::array<int, kNumClasses>& map, Provenance provenance) {
    std::vector<int> labels;
    for (int c : clusters) {
        if (c < 0 || c >= kNumClasses) throw Error(ErrorKind::domain, "cluster id outside 0..2");
        labels.push_back(map[static_cast<std::size_t>(c)]);
    }
    return LabelTable::from(ids, labels, provenance);
}

DecModel read_dec_checkpoint(const fs::path& path) {
    const auto ck = nn::read_checkpoint(path);
    if (ck.header.value("model", "") != "dec") throw Error(ErrorKind::format, path.string() + ": not a DEC checkpoint");
    const auto& enc = ck.header.at("encoder");
    AutoencoderShape shape;
    shape.input = enc.front().at("in").get<Eigen::Index>();
    shape.hidden.clear();
    for (std::size_t i = 0; i + 1 < enc.size(); ++i) shape.hidden.push_back(enc[i].at("out").get<Eigen::Index>());
    shape.latent = enc.back().at("out").get<Eigen::Index>();
    DecModel m{Autoencoder::build(shape, 0), Eigen::MatrixXd::Zero(ck.header.at("centers").at(0).get<Eigen::Index>(),
                                                                    ck.header.at("centers").at(1).get<Eigen::Index>())};
    nn::unflatten(dec_parameters(m.autoencoder, m.centers), ck.values);
    return m;
}

RunOutcome run_pipeline(const PipelineConfig& c, const fs::path& workdir_in) {
    const fs::path workdir = fs::absolute(workdir_in);
    WorkdirLock lock(workdir);
    Runner runner(c, workdir);
    auto at = [&](const char* name) { return workdir / name; };
    const fs::path records = at("records.jsonl"), reduced = at("reduced.emb"), pca = at("pca.json"), scan = at("scan.json"),
                   km_labels = at("kmeans_labels.csv"), km_model = at("kmeans.json"), dec_labels = at("dec_labels.csv"),
                   dec_ckpt = at("dec.ckpt"), dec_history = at("dec_history.csv"), validity = at("validity.json"),
                   sample = at("review_sample.json"), final_labels = at("final_labels.csv"), model = at("model.ckpt"),
                   split = at("split.json"), train_log = at("train_log.json"), report = at("report.json");
    const fs::path session_file = session_store_dir(workdir) / (c.session_id + ".json");

    Stage pre{"preprocess", 0, {{"specialty", c.specialty}}, preprocess_inputs(c), {records}, [&](std::string& msg) {
                  auto cfg = c.preprocess_dir.empty() ? PreprocessConfig{} : PreprocessConfig::from_directory(c.preprocess_dir);
                  cfg.specialty_filter = c.specialty;
                  const auto recs = load_corpus(c.corpus, cfg);
                  write_records(recs, records);
                  const auto kept = kept_ids(recs);
                  msg = std::to_string(recs.size()) + " records, " + std::to_string(recs.size() - kept.size()) + " flagged empty";
                  return true;
              }};
    if (!runner.run(pre)) return runner.take();

    const bool import = c.reduce_method == "import";
    Stage red{"reduce", derive_seed(c.seed, kReduce), {{"method", c.reduce_method}, {"dim", c.reduce_dim}},
              {records, import ? c.reduced_import : c.embeddings}, import ? std::vector<fs::path>{reduced} : std::vector<fs::path>{reduced, pca},
              [&](std::string& msg) {
                  const auto ids = kept_ids(read_records(records));
                  EmbeddingMatrix out;
                  if (import) {
                      out = import_reduced(c.reduced_import, c.reduce_dim).select(ids);
                  } else {
                      const auto raw = read_embeddings(c.embeddings).select(ids);
                      const auto model_ = pca_fit(raw, c.reduce_dim);
                      write_pca_model(model_, pca);
                      out = pca_transform(model_, raw);
                      const double total = model_.explained_variance.sum();
                      msg = "pca " + std::to_string(raw.dim()) + " -> " + std::to_string(c.reduce_dim) + ", retained variance " +
                            std::to_string(total);
                  }
                  write_embeddings(out, reduced, EmbeddingFormat::binary);
                  return true;
              }};
    if (!runner.run(red)) return runner.take();

    Stage sk{"scan-k", derive_seed(c.seed, kScan), {{"kmin", c.scan_kmin}, {"kmax", c.scan_kmax}, {"n_init", c.kmeans.n_init}},
             {reduced}, {scan}, [&](std::string& msg) {
                 const auto x = read_embeddings(reduced);
                 const auto s = silhouette_scan(x.data, c.scan_kmin, c.scan_kmax, derive_seed(c.seed, kScan), c.kmeans);
                 write_json(scan_json(s), scan);
                 msg = "silhouette prefers k=" + std::to_string(s.chosen_k);
                 if (s.chosen_k != c.k) msg += "; labels still use k=" + std::to_string(c.k);
                 return true;
             }};
    if (!runner.run(sk)) return runner.take();

    Stage km{"cluster-kmeans", derive_seed(c.seed, kKmeans),
             {{"k", c.k}, {"n_init", c.kmeans.n_init}, {"max_iter", c.kmeans.max_iter}, {"cluster_to_label", c.cluster_to_label}},
             {reduced}, {km_labels, km_model}, [&](std::string&) {
                 const auto x = read_embeddings(reduced);
                 const auto m = kmeans_fit(x.data, c.k, derive_seed(c.seed, kKmeans), c.kmeans);
                 write_json(to_json(m), km_model);
                 write_labels(label_clusters(x.ids, m.assignments, c.cluster_to_label, Provenance::kmeans), km_labels);
                 return true;
             }};
    if (!runner.run(km)) return runner.take();

    Stage dc{"cluster-dec", derive_seed(c.seed, kDec), {{"dec", to_json(c.dec)}, {"cluster_to_label", c.cluster_to_label}},
             {reduced, km_labels}, {dec_labels, dec_ckpt, dec_history}, [&](std::string& msg) {
                 const auto x = read_embeddings(reduced);
                 const auto km_table = read_labels(km_labels);
                 const auto km_clusters = clusters_of(km_table, x.ids, c.cluster_to_label);
                 const auto pre_ae = pretrain_autoencoder(x.data, make_dec_autoencoder(derive_seed(c.seed, kAutoencoder)), c.dec.pretrain,
                                                          derive_seed(c.seed, kAutoencoder));
                 auto result = dec_train(x.data, pre_ae.autoencoder, derive_seed(c.seed, kDec), c.dec);
                 // Renumber DEC clusters to agree with K-means where possible.
                 const auto aligned = align_labels(km_clusters, result.model.assignments, c.k);
                 std::vector<int> perm(static_cast<std::size_t>(c.k), -1);
                 for (std::size_t i = 0; i < aligned.size(); ++i) perm[static_cast<std::size_t>(result.model.assignments[i])] = aligned[i];
                 for (int from = 0, next = 0; from < c.k; ++from)
                     if (perm[static_cast<std::size_t>(from)] < 0) {
                         while (std::find(perm.begin(), perm.end(), next) != perm.end()) ++next;
                         perm[static_cast<std::size_t>(from)] = next;
                     }
                 Eigen::MatrixXd centers(result.model.centers.rows(), result.model.centers.cols());
                 for (int from = 0; from < c.k; ++from) centers.row(perm[static_cast<std::size_t>(from)]) = result.model.centers.row(from);
                 result.model.centers = centers;
                 result.model.assignments = aligned;
                 write_dec_checkpoint(result, c.dec, derive_seed(c.seed, kDec), dec_ckpt);
                 write_dec_history(result.state.history, dec_history);
                 write_labels(label_clusters(x.ids, aligned, c.cluster_to_label, Provenance::dec), dec_labels);
                 msg = std::to_string(result.state.iterations) + " iterations, " + std::to_string(result.state.checks) + " checks, " +
                       (result.state.converged ? "converged" : "stopped at max_iterations");
                 return true;
             }};
    if (!runner.run(dc)) return runner.take();

    Stage va{"validity", derive_seed(c.seed, kKmeans), nlohmann::json::object(), {reduced, km_labels, dec_labels, dec_ckpt}, {validity}, [&](std::string& msg) {
                 const auto x = read_embeddings(reduced);
                 const auto km_l = read_labels(km_labels).labels_for(x.ids);
                 const auto dec_l = read_labels(dec_labels).labels_for(x.ids);
                 const auto dec_model = read_dec_checkpoint(dec_ckpt);
                 const Eigen::MatrixXd z = dec_model.autoencoder.encode(x.data);
                 const auto z_km = kmeans_fit(z, c.k, derive_seed(c.seed, kKmeans), c.kmeans);
                 nlohmann::json out = {{"reduced", {{"kmeans", validity_json(validity_report(x.data, km_l))},
                                                    {"dec", validity_json(validity_report(x.data, dec_l))}}},
                                       {"dec_latent", {{"dec", validity_json(validity_report(z, dec_l))},
                                                       {"kmeans", validity_json(validity_report(z, z_km.assignments))}}}};
                 write_json(out, validity);
                 msg = "silhouette kmeans " + std::to_string(out["reduced"]["kmeans"]["silhouette"].get<double>()) + ", dec latent " +
                       std::to_string(out["dec_latent"]["dec"]["silhouette"].get<double>());
                 return true;
             }};
    if (!runner.run(va)) return runner.take();

    Stage ds{"delphi-sample", derive_seed(c.seed, kSample),
             {{"session_id", c.session_id}, {"fraction", c.review_fraction}, {"experts", c.snapshot()["delphi"]["experts"]}},
             {records, km_labels, dec_labels}, {sample}, [&](std::string& msg) {
                 const auto km_table = read_labels(km_labels);
                 const auto dec_table = read_labels(dec_labels);
                 const auto s = delphi::build_review_sample(km_table, dec_table, c.review_fraction, derive_seed(c.seed, kSample));
                 std::map<std::string, std::string> raw;
                 for (const auto& r : read_records(records)) raw[r.id] = r.raw_text;
                 auto session = delphi::create_session(c.session_id, s, raw, km_table, dec_table, c.experts, derive_seed(c.seed, kSession));
                 delphi::SessionStore store(session_store_dir(workdir));
                 std::lock_guard guard(store.writer_mutex());
                 if (store.exists(c.session_id)) {
                     if (delphi::session_request(store.load(c.session_id)) != delphi::session_request(session))
                         throw Error(ErrorKind::immutable, "session '" + c.session_id +
                                                               "' already exists with different content; choose a new session_id");
                 } else {
                     store.save(session);
                 }
                 write_json({{"session_id", c.session_id},
                             {"fraction", s.fraction},
                             {"target", s.target},
                             {"disagreement_ids", s.disagreement_ids},
                             {"balanced_ids", s.balanced_ids},
                             {"warnings", s.warnings}},
                            sample);
                 msg = std::to_string(s.size()) + " items (" + std::to_string(s.disagreement_ids.size()) + " disagreements)";
                 for (const auto& w : s.warnings) msg += "; " + w;
                 return true;
             }};
    if (!runner.run(ds)) return runner.take();

    Stage df{"delphi-finalize", 0, {{"session_id", c.session_id}}, {sample}, {final_labels, session_file}, [&](std::string& msg) {
                 delphi::SessionStore store(session_store_dir(workdir));
                 std::lock_guard guard(store.writer_mutex());
                 auto session = store.load(c.session_id);
                 if (!session.finalized) {
                     std::size_t pending = 0;
                     for (const auto& e : session.experts) pending += e.status != delphi::ExpertStatus::submitted;
                     if (pending > 0) {
                         msg = "waiting for " + std::to_string(pending) + " expert submission(s)";
                         return false;
                     }
                     delphi::finalize_labels(session);
                     store.save(session);
                 }
                 write_labels(session.final_labels, final_labels);
                 msg = std::to_string(session.items.size()) + " reviewed ids fused";
                 return true;
             }};
    if (!runner.run(df)) return runner.take();

    const auto split_seed = derive_seed(c.seed, kSplit);
    clf::TrainConfig train_cfg = c.classifier;
    train_cfg.seed = derive_seed(c.seed, kTrain);
    Stage tr{"train", train_cfg.seed, {{"train_fraction", c.train_fraction}, {"split_seed", split_seed}, {"classifier", clf::to_json(train_cfg)}},
             {c.sequences, final_labels}, {model, split, train_log}, [&](std::string& msg) {
                 const auto seqs = read_token_sequences(c.sequences);
                 const auto labels = read_labels(final_labels);
                 const auto plan = clf::stratified_split(labels, c.train_fraction, split_seed);
                 const clf::Dataset data{seqs, labels};
                 auto net = clf::BiLstmNetwork::init(seqs.dim, train_cfg.hidden, train_cfg.dropout, train_cfg.seed);
                 const auto result = clf::train(std::move(net), data, plan.train_ids, train_cfg);
                 nlohmann::json log = nlohmann::json::array();
                 for (const auto& e : result.log) {
                     nlohmann::json row = {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}};
                     row["validation_loss"] = e.validation_loss ? nlohmann::json(*e.validation_loss) : nlohmann::json(nullptr);
                     log.push_back(row);
                 }
                 write_json({{"epochs", log},
                             {"best_epoch", result.best_epoch},
                             {"class_weights", std::vector<double>(result.class_weights.data(), result.class_weights.data() + result.class_weights.size())},
                             {"truncated_sequences", seqs.truncated}},
                            train_log);
                 write_json({{"seed", split_seed}, {"train_fraction", c.train_fraction}, {"train_ids", plan.train_ids}, {"test_ids", plan.test_ids},
                             {"train_counts", plan.train_counts}, {"test_counts", plan.test_counts}},
                            split);
                 write_bilstm_checkpoint(result.net, {{"config", clf::to_json(train_cfg)}, {"best_epoch", result.best_epoch}}, model);
                 msg = std::to_string(plan.train_ids.size()) + " train / " + std::to_string(plan.test_ids.size()) + " test, best epoch " +
                       std::to_string(result.best_epoch);
                 return true;
             }};
    if (!runner.run(tr)) return runner.take();

    Stage ev{"evaluate", derive_seed(c.seed, kCv), {{"cv_folds", c.cv_folds}, {"classifier", clf::to_json(train_cfg)}},
             {c.sequences, final_labels, model, split}, {report}, [&](std::string& msg) {
                 const auto seqs = read_token_sequences(c.sequences);
                 const auto labels = read_labels(final_labels);
                 const auto plan = read_json(split);
                 const auto test_ids = plan.at("test_ids").get<std::vector<std::string>>();
                 const clf::Dataset data{seqs, labels};
                 const auto net = clf::read_bilstm_checkpoint(model);
                 const auto rep = clf::evaluate(net, data, test_ids);
                 nlohmann::json out = {{"test", clf::to_json(rep)}};
                 if (c.cv_folds > 0) {
                     const auto train_ids = plan.at("train_ids").get<std::vector<std::string>>();
                     out["cv"] = clf::to_json(clf::cross_validate(data, train_ids, c.cv_folds, derive_seed(c.seed, kCv), train_cfg));
                 }
                 write_json(out, report);
                 msg = "test accuracy " + std::to_string(rep.accuracy) + ", macro F1 " + std::to_string(rep.macro_f1);
                 return true;
             }};
    runner.run(ev);
    return runner.take();
}

} // namespace urgency
