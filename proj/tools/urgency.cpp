// Command-line front end: one subcommand per pipeline stage, plus `serve`
// for the Delphi review API and `run` for the whole manifest-tracked pipeline.

#include "urgency/classifier.hpp"
#include "urgency/corpus.hpp"
#include "urgency/dec.hpp"
#include "urgency/delphi.hpp"
#include "urgency/delphi_server.hpp"
#include "urgency/embedding_store.hpp"
#include "urgency/kmeans.hpp"
#include "urgency/pipeline.hpp"
#include "urgency/reduce.hpp"
#include "urgency/validity.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace urgency;

namespace {

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string workdir = ".";
    std::string format = "json";
};

nlohmann::json load_json(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, path + ": " + e.what());
    }
}

void save_json(const nlohmann::json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// Flattens nested objects into dotted key,value rows.
void flatten_csv(const nlohmann::json& j, const std::string& prefix, std::ostream& out) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) flatten_csv(v, prefix.empty() ? k : prefix + "." + k, out);
    } else if (j.is_array() && !j.empty() && (j.front().is_object() || j.front().is_array())) {
        for (std::size_t i = 0; i < j.size(); ++i) flatten_csv(j[i], prefix + "." + std::to_string(i), out);
    } else if (j.is_array()) {
        out << prefix << ',';
        for (std::size_t i = 0; i < j.size(); ++i) out << (i ? ";" : "") << j[i].dump();
        out << '\n';
    } else {
        out << prefix << ',' << (j.is_string() ? j.get<std::string>() : j.dump()) << '\n';
    }
}

void emit(const nlohmann::json& j, const Globals& g) {
    if (g.format == "csv") {
        std::cout << "key,value\n";
        flatten_csv(j, "", std::cout);
    } else {
        std::cout << j.dump(2) << '\n';
    }
}

nlohmann::json validity_json(const ValidityReport& r) {
    return {{"silhouette", r.silhouette}, {"calinski_harabasz", r.calinski_harabasz}, {"davies_bouldin", r.davies_bouldin},
            {"n", r.n}, {"k", r.k}};
}

std::vector<delphi::ExpertSpec> parse_experts(const std::vector<std::string>& specs) {
    std::vector<delphi::ExpertSpec> out;
    for (const auto& s : specs) {
        const auto colon = s.find(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == s.size())
            throw Error(ErrorKind::parse, "expert must be given as id:token, got '" + s + "'");
        out.push_back({s.substr(0, colon), s.substr(colon + 1)});
    }
    return out;
}

std::vector<std::string> ids_from_split(const std::string& path, const char* key) {
    return load_json(path).at(key).get<std::vector<std::string>>();
}

int serve(const delphi::ServerConfig& cfg) {
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    delphi::DelphiServer server(cfg);
    const int port = server.bind();
    std::cerr << "serving on http://" << cfg.host << ':' << port << " (store " << cfg.store_dir.string() << ")\n";
    std::thread worker([&] { server.run(); });
    int sig = 0;
    sigwait(&signals, &sig);
    std::cerr << "shutting down\n";
    server.stop();
    worker.join();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Surgical-urgency labeling pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", URGENCY_VERSION);
    Globals g;
    app.add_option("--config", g.config, "JSON config for the subcommand");
    app.add_option("--seed", g.seed, "Random seed")->each([&](const std::string&) { g.seed_given = true; });
    app.add_option("--workdir", g.workdir, "Working directory for run/serve");
    app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"json", "csv"}));

    std::function<void()> action;

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Filter and normalise the corpus");
    std::string pre_in, pre_dir, pre_out, pre_specialty = "Surgery";
    pre->add_option("--in", pre_in, "Corpus CSV or JSONL")->required();
    pre->add_option("--lists", pre_dir, "Directory with stopword, abbreviation and phrase lists");
    pre->add_option("--specialty", pre_specialty);
    pre->add_option("--out", pre_out, "Output records JSONL")->required();
    pre->callback([&] {
        action = [&] {
            auto cfg = pre_dir.empty() ? PreprocessConfig{} : PreprocessConfig::from_directory(pre_dir);
            cfg.specialty_filter = pre_specialty;
            const auto records = load_corpus(pre_in, cfg);
            write_records(records, pre_out);
            std::size_t flagged = 0;
            for (const auto& r : records) flagged += r.flagged;
            emit({{"records", records.size()}, {"flagged", flagged}, {"out", pre_out}}, g);
        };
    });

    // embed-check
    auto* ec = app.add_subcommand("embed-check", "Validate an embedding file, optionally against records");
    std::string ec_in, ec_records;
    ec->add_option("--in", ec_in)->required();
    ec->add_option("--records", ec_records, "Records JSONL whose ids must all be covered");
    ec->callback([&] {
        action = [&] {
            const auto m = read_embeddings(ec_in);
            validate(m);
            nlohmann::json out = {{"n", m.n()}, {"dim", m.dim()}};
            if (!ec_records.empty()) {
                std::set<std::string> have(m.ids.begin(), m.ids.end());
                std::vector<std::string> missing;
                for (const auto& r : read_records(ec_records))
                    if (!r.flagged && !have.count(r.id)) missing.push_back(r.id);
                out["missing"] = missing;
                if (!missing.empty()) {
                    emit(out, g);
                    throw Error(ErrorKind::integrity, std::to_string(missing.size()) + " record id(s) have no embedding");
                }
            }
            emit(out, g);
        };
    });

    // reduce
    auto* red = app.add_subcommand("reduce", "Project embeddings to the clustering space");
    std::string red_in, red_out, red_method = "pca", red_model;
    int red_dim = 50;
    red->add_option("--in", red_in)->required();
    red->add_option("--out", red_out)->required();
    red->add_option("--dim", red_dim);
    red->add_option("--method", red_method)->check(CLI::IsMember({"pca", "import"}));
    red->add_option("--model", red_model, "Write the fitted PCA model here");
    red->callback([&] {
        action = [&] {
            EmbeddingMatrix out;
            if (red_method == "import") {
                out = import_reduced(red_in, red_dim);
            } else {
                const auto raw = read_embeddings(red_in);
                const auto model = pca_fit(raw, red_dim);
                if (!red_model.empty()) write_pca_model(model, red_model);
                out = pca_transform(model, raw);
            }
            const bool binary = fs::path(red_out).extension() != ".jsonl";
            write_embeddings(out, red_out, binary ? EmbeddingFormat::binary : EmbeddingFormat::jsonl);
            emit({{"n", out.n()}, {"dim", out.dim()}, {"method", red_method}}, g);
        };
    });

    // scan-k
    auto* sk = app.add_subcommand("scan-k", "Silhouette scan over k");
    std::string sk_in;
    int kmin = 2, kmax = 9;
    KmeansOptions sk_opts;
    sk->add_option("--in", sk_in)->required();
    sk->add_option("--kmin", kmin);
    sk->add_option("--kmax", kmax);
    sk->add_option("--n-init", sk_opts.n_init);
    sk->callback([&] {
        action = [&] {
            const auto x = read_embeddings(sk_in);
            const auto s = silhouette_scan(x.data, kmin, kmax, g.seed, sk_opts);
            if (g.format == "csv") {
                std::cout << "k,silhouette\n";
                for (std::size_t i = 0; i < s.ks.size(); ++i) std::cout << s.ks[i] << ',' << s.scores[i] << '\n';
            } else {
                emit({{"k", s.ks}, {"silhouette", s.scores}, {"chosen_k", s.chosen_k}}, g);
            }
        };
    });

    // cluster-kmeans
    auto* km = app.add_subcommand("cluster-kmeans", "K-means labels");
    std::string km_in, km_out, km_model;
    int km_k = 3;
    KmeansOptions km_opts;
    km->add_option("--in", km_in)->required();
    km->add_option("--k", km_k);
    km->add_option("--n-init", km_opts.n_init);
    km->add_option("--out", km_out)->required();
    km->add_option("--model", km_model);
    km->callback([&] {
        action = [&] {
            const auto x = read_embeddings(km_in);
            const auto m = kmeans_fit(x.data, km_k, g.seed, km_opts);
            if (!km_model.empty()) save_json(to_json(m), km_model);
            write_labels(LabelTable::from(x.ids, m.assignments, Provenance::kmeans), km_out);
            emit({{"k", m.k}, {"inertia", m.inertia}, {"iterations", m.iterations_run}}, g);
        };
    });

    // cluster-dec
    auto* dc = app.add_subcommand("cluster-dec", "Deep Embedded Clustering labels");
    std::string dc_in, dc_out, dc_model, dc_history, dc_align;
    dc->add_option("--in", dc_in)->required();
    dc->add_option("--out", dc_out)->required();
    dc->add_option("--model", dc_model);
    dc->add_option("--history", dc_history);
    dc->add_option("--align", dc_align, "K-means labels CSV to renumber clusters against");
    dc->callback([&] {
        action = [&] {
            const auto cfg = dec_config_from_json(load_json(g.config));
            const auto x = read_embeddings(dc_in);
            const auto pre_ae = pretrain_autoencoder(x.data, make_dec_autoencoder(derive_seed(g.seed, 4)), cfg.pretrain, derive_seed(g.seed, 4));
            auto result = dec_train(x.data, pre_ae.autoencoder, g.seed, cfg);
            auto labels = result.model.assignments;
            if (!dc_align.empty()) labels = align_labels(read_labels(dc_align).labels_for(x.ids), labels, cfg.n_clusters);
            if (!dc_model.empty()) write_dec_checkpoint(result, cfg, g.seed, dc_model);
            if (!dc_history.empty()) write_dec_history(result.state.history, dc_history);
            write_labels(LabelTable::from(x.ids, labels, Provenance::dec), dc_out);
            emit({{"iterations", result.state.iterations},
                  {"checks", result.state.checks},
                  {"converged", result.state.converged},
                  {"pretrain_mse", {{"initial", pre_ae.initial_mse}, {"final", pre_ae.final_mse}}}},
                 g);
        };
    });

    // validity
    auto* va = app.add_subcommand("validity", "Cluster validity indices");
    std::string va_in, va_labels;
    va->add_option("--in", va_in)->required();
    va->add_option("--labels", va_labels)->required();
    va->callback([&] {
        action = [&] {
            const auto x = read_embeddings(va_in);
            const auto labels = read_labels(va_labels).labels_for(x.ids);
            emit(validity_json(validity_report(x.data, labels)), g);
        };
    });

    // delphi-sample
    auto* ds = app.add_subcommand("delphi-sample", "Draw the review sample and open a Delphi session");
    std::string ds_km, ds_dec, ds_records, ds_session = "review", ds_store = "sessions", ds_out;
    double ds_fraction = 0.2;
    std::vector<std::string> ds_experts;
    ds->add_option("--kmeans", ds_km)->required();
    ds->add_option("--dec", ds_dec)->required();
    ds->add_option("--records", ds_records, "Records JSONL providing raw text")->required();
    ds->add_option("--fraction", ds_fraction);
    ds->add_option("--session", ds_session);
    ds->add_option("--store", ds_store);
    ds->add_option("--expert", ds_experts, "id:token, repeatable")->required();
    ds->add_option("--out", ds_out, "Write the sample JSON here");
    ds->callback([&] {
        action = [&] {
            const auto km_t = read_labels(ds_km);
            const auto dec_t = read_labels(ds_dec);
            const auto s = delphi::build_review_sample(km_t, dec_t, ds_fraction, g.seed);
            std::map<std::string, std::string> raw;
            for (const auto& r : read_records(ds_records)) raw[r.id] = r.raw_text;
            const auto session = delphi::create_session(ds_session, s, raw, km_t, dec_t, parse_experts(ds_experts), derive_seed(g.seed, 7));
            delphi::SessionStore store(ds_store);
            if (store.exists(ds_session)) throw Error(ErrorKind::immutable, "session '" + ds_session + "' already exists");
            store.save(session);
            nlohmann::json out = {{"session_id", ds_session}, {"target", s.target}, {"disagreement_ids", s.disagreement_ids},
                                  {"balanced_ids", s.balanced_ids}, {"warnings", s.warnings}};
            if (!ds_out.empty()) save_json(out, ds_out);
            for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
            emit({{"session_id", ds_session}, {"items", s.size()}, {"disagreements", s.disagreement_ids.size()}}, g);
        };
    });

    // serve
    auto* sv = app.add_subcommand("serve", "Serve the Delphi review API");
    delphi::ServerConfig sv_cfg;
    std::string sv_store, sv_static;
    sv->add_option("--store", sv_store, "Session store (default <workdir>/sessions)");
    sv->add_option("--static", sv_static, "Review console assets");
    sv->add_option("--host", sv_cfg.host);
    sv->add_option("--port", sv_cfg.port);
    sv->add_option("--coordinator-token", sv_cfg.coordinator_token)->envname("URGENCY_COORDINATOR_TOKEN")->required();
    sv->callback([&] {
        action = [&] {
            sv_cfg.store_dir = sv_store.empty() ? session_store_dir(g.workdir) : fs::path(sv_store);
            sv_cfg.static_dir = sv_static;
            serve(sv_cfg);
        };
    });

    // delphi-finalize
    auto* df = app.add_subcommand("delphi-finalize", "Fuse submitted votes into the final label table");
    std::string df_store = "sessions", df_session = "review", df_out;
    df->add_option("--store", df_store);
    df->add_option("--session", df_session);
    df->add_option("--out", df_out)->required();
    df->callback([&] {
        action = [&] {
            delphi::SessionStore store(df_store);
            auto session = store.load(df_session);
            if (!session.finalized) {
                delphi::finalize_labels(session);
                store.save(session);
            }
            write_labels(session.final_labels, df_out);
            emit({{"session_id", df_session}, {"labels", session.final_labels.size()}, {"reviewed", session.items.size()}}, g);
        };
    });

    // train
    auto* tr = app.add_subcommand("train", "Train the BiLSTM classifier");
    std::string tr_seq, tr_labels, tr_out, tr_report, tr_split_out;
    std::uint64_t split_seed = 0;
    double tr_fraction = 0.8;
    tr->add_option("--sequences", tr_seq)->required();
    tr->add_option("--labels", tr_labels)->required();
    tr->add_option("--split-seed", split_seed);
    tr->add_option("--train-fraction", tr_fraction);
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--report", tr_report);
    tr->add_option("--split-out", tr_split_out, "Write the train/test ids here");
    tr->callback([&] {
        action = [&] {
            auto cfg = clf::train_config_from_json(load_json(g.config));
            if (g.seed_given) cfg.seed = g.seed;
            const auto seqs = read_token_sequences(tr_seq);
            const auto labels = read_labels(tr_labels);
            const auto plan = clf::stratified_split(labels, tr_fraction, split_seed);
            const clf::Dataset data{seqs, labels};
            const auto result = clf::train(clf::BiLstmNetwork::init(seqs.dim, cfg.hidden, cfg.dropout, cfg.seed), data, plan.train_ids, cfg);
            clf::write_bilstm_checkpoint(result.net, {{"config", clf::to_json(cfg)}, {"best_epoch", result.best_epoch}}, tr_out);
            if (!tr_split_out.empty())
                save_json({{"seed", split_seed}, {"train_ids", plan.train_ids}, {"test_ids", plan.test_ids}}, tr_split_out);
            const auto report = clf::evaluate(result.net, data, plan.test_ids);
            if (!tr_report.empty()) save_json(clf::to_json(report), tr_report);
            emit(clf::to_json(report), g);
        };
    });

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score a trained classifier");
    std::string ev_seq, ev_labels, ev_model, ev_split, ev_report;
    ev->add_option("--sequences", ev_seq)->required();
    ev->add_option("--labels", ev_labels)->required();
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--split", ev_split, "Split JSON; its test_ids are scored (default: every labeled id)");
    ev->add_option("--report", ev_report);
    ev->callback([&] {
        action = [&] {
            const auto seqs = read_token_sequences(ev_seq);
            const auto labels = read_labels(ev_labels);
            const auto ids = ev_split.empty() ? labels.ids() : ids_from_split(ev_split, "test_ids");
            const auto report = clf::evaluate(clf::read_bilstm_checkpoint(ev_model), clf::Dataset{seqs, labels}, ids);
            if (!ev_report.empty()) save_json(clf::to_json(report), ev_report);
            emit(clf::to_json(report), g);
        };
    });

    // cv
    auto* cv = app.add_subcommand("cv", "Stratified cross-validation");
    std::string cv_seq, cv_labels;
    int cv_folds = 5;
    cv->add_option("--sequences", cv_seq)->required();
    cv->add_option("--labels", cv_labels)->required();
    cv->add_option("--folds", cv_folds);
    cv->callback([&] {
        action = [&] {
            const auto cfg = clf::train_config_from_json(load_json(g.config));
            const auto seqs = read_token_sequences(cv_seq);
            const auto labels = read_labels(cv_labels);
            emit(clf::to_json(clf::cross_validate(clf::Dataset{seqs, labels}, labels.ids(), cv_folds, g.seed, cfg)), g);
        };
    });

    // search
    auto* se = app.add_subcommand("search", "Seeded random hyperparameter search scored by CV macro-F1");
    std::string se_seq, se_labels, se_space;
    int trials = 10, se_folds = 3;
    se->add_option("--sequences", se_seq)->required();
    se->add_option("--labels", se_labels)->required();
    se->add_option("--trials", trials);
    se->add_option("--folds", se_folds);
    se->add_option("--space", se_space, "Search space JSON");
    se->callback([&] {
        action = [&] {
            const auto base = clf::train_config_from_json(load_json(g.config));
            const auto space = clf::search_space_from_json(load_json(se_space));
            const auto seqs = read_token_sequences(se_seq);
            const auto labels = read_labels(se_labels);
            const auto r = clf::random_search(space, trials, g.seed, clf::Dataset{seqs, labels}, labels.ids(), se_folds, base);
            nlohmann::json all = nlohmann::json::array();
            for (const auto& t : r.trials) all.push_back({{"config", clf::to_json(t.config)}, {"macro_f1", t.score}});
            emit({{"best", clf::to_json(r.best)}, {"best_score", r.best_score}, {"best_trial", r.best_trial}, {"trials", all}}, g);
        };
    });

    // run
    auto* run = app.add_subcommand("run", "Run or resume the manifest-tracked pipeline");
    run->callback([&] {
        action = [&] {
            if (g.config.empty()) throw Error(ErrorKind::parse, "run needs --config");
            auto cfg = read_pipeline_config(g.config);
            if (g.seed_given) cfg.seed = g.seed;
            const auto outcome = run_pipeline(cfg, g.workdir);
            nlohmann::json out = {{"executed", outcome.executed}, {"reused", outcome.reused}, {"paused", outcome.paused},
                                  {"manifest", (fs::path(g.workdir) / "manifest.json").string()}};
            if (outcome.paused)
                out["next"] = "collect expert submissions for session '" + cfg.session_id + "' (serve), then rerun";
            emit(out, g);
        };
    });

    CLI11_PARSE(app, argc, argv);
    try {
        if (action) action();
    } catch (const Error& e) {
        std::cerr << "error[" << to_string(e.kind()) << "]: " << e.message() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
