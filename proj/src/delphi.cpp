#include "urgency/delphi.hpp"

#include "urgency/error.hpp"
#include "urgency/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace urgency::delphi {

namespace {

constexpr double kTieTolerance = 1e-12;

std::string_view status_name(ExpertStatus s) { return s == ExpertStatus::submitted ? "submitted" : "pending"; }

void check_label(int label) {
    if (label < 0 || label >= kNumClasses) throw Error(ErrorKind::domain, "label " + std::to_string(label) + " outside {0,1,2}");
}

bool valid_session_id(const std::string& id) {
    return !id.empty() && id.size() <= 128 &&
           std::all_of(id.begin(), id.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'; });
}

nlohmann::json labels_json(const LabelTable& t) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : t.entries()) out.push_back({{"id", e.id}, {"label", e.label}, {"provenance", to_string(e.provenance)}});
    return out;
}

LabelTable labels_from_json(const nlohmann::json& j, Provenance fallback) {
    LabelTable t;
    for (const auto& e : j) {
        const std::string id = e.at("id");
        if (t.contains(id)) throw Error(ErrorKind::integrity, "duplicate id '" + id + "' in label list");
        const auto prov = e.contains("provenance") ? provenance_from_string(e["provenance"].get<std::string>()) : fallback;
        t.set(id, e.at("label").get<int>(), prov);
    }
    return t;
}

nlohmann::json fused_json(const FusedItem& f) {
    return {{"id", f.id},
            {"scores", f.scores},
            {"final_label", f.final_label},
            {"dec_label", f.dec_label},
            {"kmeans_label", f.kmeans_label},
            {"disagreement", f.dec_label != f.kmeans_label},
            {"expert_votes", f.expert_votes}};
}

} // namespace

ReviewSample build_review_sample(const LabelTable& kmeans, const LabelTable& dec, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error(ErrorKind::domain, "sample fraction must be in [0, 1]");
    if (kmeans.size() != dec.size()) throw Error(ErrorKind::integrity, "K-means and DEC label tables cover different ids");
    ReviewSample sample;
    sample.fraction = fraction;
    sample.target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dec.size())));

    std::array<std::vector<std::string>, kNumClasses> pools;
    for (const auto& e : dec.entries()) {
        const auto km = kmeans.find(e.id);
        if (!km) throw Error(ErrorKind::integrity, "id '" + e.id + "' has a DEC label but no K-means label");
        if (*km != e.label) sample.disagreement_ids.push_back(e.id);
        else pools[static_cast<std::size_t>(e.label)].push_back(e.id);
    }
    if (sample.target < sample.disagreement_ids.size()) {
        sample.warnings.push_back("quota " + std::to_string(sample.target) + " is below the " +
                                  std::to_string(sample.disagreement_ids.size()) + " disagreements; sampling disagreements only");
        return sample;
    }

    Rng rng(seed);
    for (auto& pool : pools) rng.shuffle(std::span<std::string>(pool));

    std::size_t remaining = sample.target - sample.disagreement_ids.size();
    std::array<std::size_t, kNumClasses> take{};
    // Deal one slot at a time to the lowest category that still has candidates.
    for (int round = 0; remaining > 0; ++round) {
        bool progressed = false;
        for (std::size_t c = 0; c < pools.size() && remaining > 0; ++c) {
            if (take[c] < pools[c].size() && take[c] == static_cast<std::size_t>(round)) {
                ++take[c];
                --remaining;
                progressed = true;
            }
        }
        if (!progressed) break;
    }
    const auto [lo, hi] = std::minmax_element(take.begin(), take.end());
    if (*hi - *lo > 1)
        sample.warnings.push_back("a DEC category has too few agreeing ids; balanced counts are uneven");
    for (std::size_t c = 0; c < pools.size(); ++c)
        sample.balanced_ids.insert(sample.balanced_ids.end(), pools[c].begin(), pools[c].begin() + static_cast<std::ptrdiff_t>(take[c]));
    return sample;
}

const FusedItem* FusionResult::find(const std::string& id) const {
    for (const auto& f : items)
        if (f.id == id) return &f;
    return nullptr;
}

const ReviewItem& DelphiSession::item(const std::string& transcript_id) const {
    for (const auto& it : items)
        if (it.id == transcript_id) return it;
    throw Error(ErrorKind::not_found, "transcript '" + transcript_id + "' is not in session " + id);
}

Expert& DelphiSession::expert(const std::string& expert_id) {
    for (auto& e : experts)
        if (e.id == expert_id) return e;
    throw Error(ErrorKind::not_found, "expert '" + expert_id + "' is not in session " + id);
}

const Expert& DelphiSession::expert(const std::string& expert_id) const {
    return const_cast<DelphiSession*>(this)->expert(expert_id);
}

bool DelphiSession::all_submitted() const {
    return !experts.empty() && std::all_of(experts.begin(), experts.end(), [](const Expert& e) { return e.status == ExpertStatus::submitted; });
}

DelphiSession create_session(const std::string& session_id, const ReviewSample& sample,
                             const std::map<std::string, std::string>& raw_text, const LabelTable& kmeans,
                             const LabelTable& dec, const std::vector<ExpertSpec>& experts, std::uint64_t seed) {
    if (!valid_session_id(session_id)) throw Error(ErrorKind::domain, "invalid session id '" + session_id + "'");
    if (experts.empty()) throw Error(ErrorKind::domain, "a session needs at least one expert");
    DelphiSession s;
    s.id = session_id;
    s.dec_labels = dec;
    std::set<std::string> expert_ids, tokens;
    for (const auto& e : experts) {
        if (e.id.empty() || e.token.empty()) throw Error(ErrorKind::domain, "experts need an id and a token");
        if (!expert_ids.insert(e.id).second) throw Error(ErrorKind::integrity, "duplicate expert '" + e.id + "'");
        if (!tokens.insert(e.token).second) throw Error(ErrorKind::integrity, "experts must have distinct tokens");
        s.experts.push_back({e.id, e.token, ExpertStatus::pending, {}});
    }
    std::vector<std::string> ids = sample.disagreement_ids;
    ids.insert(ids.end(), sample.balanced_ids.begin(), sample.balanced_ids.end());
    Rng rng(seed);
    rng.shuffle(std::span<std::string>(ids));
    for (const auto& id : ids) {
        auto text = raw_text.find(id);
        s.items.push_back({id, text == raw_text.end() ? std::string{} : text->second, dec.at(id), kmeans.at(id)});
    }
    return s;
}

void record_vote(DelphiSession& session, const std::string& expert_id, const std::string& transcript_id, int label) {
    if (session.finalized) throw Error(ErrorKind::immutable, "session " + session.id + " is finalized");
    auto& expert = session.expert(expert_id);
    session.item(transcript_id);
    check_label(label);
    if (expert.status == ExpertStatus::submitted) {
        auto it = expert.votes.find(transcript_id);
        if (it != expert.votes.end() && it->second == label) return;
        throw Error(ErrorKind::immutable, "expert '" + expert_id + "' has already submitted");
    }
    expert.votes[transcript_id] = label;
}

void submit(DelphiSession& session, const std::string& expert_id) {
    auto& expert = session.expert(expert_id);
    if (expert.status == ExpertStatus::submitted) return;
    std::size_t missing = 0;
    for (const auto& item : session.items) missing += !expert.votes.contains(item.id);
    if (missing > 0)
        throw Error(ErrorKind::not_ready, std::to_string(missing) + " item(s) still unlabeled for expert '" + expert_id + "'");
    expert.status = ExpertStatus::submitted;
}

FusionResult fuse_labels(const DelphiSession& session) {
    if (!session.all_submitted()) {
        std::string pending;
        for (const auto& e : session.experts)
            if (e.status != ExpertStatus::submitted) pending += (pending.empty() ? "" : ", ") + e.id;
        throw Error(ErrorKind::not_ready, "waiting for expert submissions: " + pending);
    }
    const auto& w = session.weights;
    const double per_expert = w.expert_block / static_cast<double>(session.experts.size());
    FusionResult result;
    for (const auto& item : session.items) {
        FusedItem f;
        f.id = item.id;
        f.dec_label = item.dec_label;
        f.kmeans_label = item.kmeans_label;
        std::array<int, kNumClasses> counts{};
        for (const auto& e : session.experts) {
            const int v = e.votes.at(item.id);
            ++counts[static_cast<std::size_t>(v)];
            f.expert_votes[e.id] = v;
        }
        for (int c = 0; c < kNumClasses; ++c) {
            const auto idx = static_cast<std::size_t>(c);
            f.scores[idx] = per_expert * counts[idx] + (item.dec_label == c ? w.dec : 0.0) + (item.kmeans_label == c ? w.kmeans : 0.0);
        }
        const double best = *std::max_element(f.scores.begin(), f.scores.end());
        auto tied = [&](int c) { return f.scores[static_cast<std::size_t>(c)] >= best - kTieTolerance; };
        if (tied(item.dec_label)) {
            f.final_label = item.dec_label;
        } else {
            f.final_label = 0;
            while (!tied(f.final_label)) ++f.final_label;
        }
        result.items.push_back(std::move(f));
    }
    return result;
}

LabelTable finalize_labels(DelphiSession& session, const LabelTable& dec) {
    if (session.finalized) return session.final_labels;
    auto fusion = fuse_labels(session);
    LabelTable table;
    std::map<std::string, std::string> sources;
    for (const auto& e : dec.entries()) {
        if (const auto* f = fusion.find(e.id)) {
            table.set(e.id, f->final_label, Provenance::delphi);
            sources[e.id] = "fused";
        } else {
            table.set(e.id, e.label, Provenance::delphi);
            sources[e.id] = "dec";
        }
    }
    for (const auto& f : fusion.items)
        if (!table.contains(f.id)) throw Error(ErrorKind::integrity, "sampled id '" + f.id + "' missing from the DEC table");
    session.fusion = std::move(fusion);
    session.final_labels = table;
    session.label_sources = std::move(sources);
    session.finalized = true;
    return table;
}

LabelTable finalize_labels(DelphiSession& session) { return finalize_labels(session, session.dec_labels); }

nlohmann::json expert_view(const DelphiSession& session, const std::string& expert_id) {
    const auto& expert = session.expert(expert_id);
    const bool revealed = expert.status == ExpertStatus::submitted;
    nlohmann::json items = nlohmann::json::array();
    std::size_t labeled = 0, agree_dec = 0, agree_km = 0;
    for (const auto& item : session.items) {
        nlohmann::json row = {{"id", item.id}, {"raw_text", item.raw_text}};
        auto v = expert.votes.find(item.id);
        row["draft_label"] = v == expert.votes.end() ? nlohmann::json(nullptr) : nlohmann::json(v->second);
        if (v != expert.votes.end()) ++labeled;
        if (revealed) {
            row["dec_label"] = item.dec_label;
            row["kmeans_label"] = item.kmeans_label;
            if (v != expert.votes.end()) {
                agree_dec += v->second == item.dec_label;
                agree_km += v->second == item.kmeans_label;
            }
        }
        items.push_back(std::move(row));
    }
    nlohmann::json out = {{"session", session.id},
                          {"expert", expert.id},
                          {"status", status_name(expert.status)},
                          {"labeled", labeled},
                          {"total", session.items.size()},
                          {"items", items}};
    if (revealed) out["agreement"] = {{"with_dec", agree_dec}, {"with_kmeans", agree_km}, {"total", session.items.size()}};
    return out;
}

nlohmann::json coordinator_view(const DelphiSession& session) {
    nlohmann::json experts = nlohmann::json::array();
    for (const auto& e : session.experts)
        experts.push_back({{"id", e.id}, {"status", status_name(e.status)}, {"labeled", e.votes.size()}});
    nlohmann::json items = nlohmann::json::array();
    for (const auto& item : session.items)
        items.push_back({{"id", item.id},
                         {"dec_label", item.dec_label},
                         {"kmeans_label", item.kmeans_label},
                         {"disagreement", item.disagreement()}});
    nlohmann::json out = {{"session", session.id},
                          {"finalized", session.finalized},
                          {"all_submitted", session.all_submitted()},
                          {"weights", {{"expert_block", session.weights.expert_block}, {"dec", session.weights.dec}, {"kmeans", session.weights.kmeans}}},
                          {"experts", experts},
                          {"items", items}};
    if (session.finalized && session.fusion) {
        nlohmann::json fusion = nlohmann::json::array();
        for (const auto& f : session.fusion->items) fusion.push_back(fused_json(f));
        out["fusion"] = fusion;
    }
    return out;
}

nlohmann::json session_request(const DelphiSession& s) {
    nlohmann::json experts = nlohmann::json::array();
    for (const auto& e : s.experts) experts.push_back({{"id", e.id}, {"token", e.token}});
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : s.items)
        items.push_back({{"id", it.id}, {"raw_text", it.raw_text}, {"dec_label", it.dec_label}, {"kmeans_label", it.kmeans_label}});
    return {{"session_id", s.id},
            {"experts", experts},
            {"items", items},
            {"weights", {{"expert_block", s.weights.expert_block}, {"dec", s.weights.dec}, {"kmeans", s.weights.kmeans}}},
            {"dec_labels", labels_json(s.dec_labels)}};
}

DelphiSession session_from_request(const nlohmann::json& r) {
    try {
        DelphiSession s;
        s.id = r.at("session_id");
        if (!valid_session_id(s.id)) throw Error(ErrorKind::domain, "invalid session id '" + s.id + "'");
        std::set<std::string> expert_ids, tokens, item_ids;
        for (const auto& e : r.at("experts")) {
            Expert ex{e.at("id"), e.at("token"), ExpertStatus::pending, {}};
            if (ex.id.empty() || ex.token.empty()) throw Error(ErrorKind::domain, "experts need an id and a token");
            if (!expert_ids.insert(ex.id).second || !tokens.insert(ex.token).second)
                throw Error(ErrorKind::integrity, "expert ids and tokens must be unique");
            s.experts.push_back(std::move(ex));
        }
        if (s.experts.empty()) throw Error(ErrorKind::domain, "a session needs at least one expert");
        s.dec_labels = labels_from_json(r.at("dec_labels"), Provenance::dec);
        for (const auto& it : r.at("items")) {
            ReviewItem item{it.at("id"), it.value("raw_text", std::string{}), it.at("dec_label"), it.at("kmeans_label")};
            check_label(item.dec_label);
            check_label(item.kmeans_label);
            if (!item_ids.insert(item.id).second) throw Error(ErrorKind::integrity, "duplicate item '" + item.id + "'");
            if (!s.dec_labels.contains(item.id)) throw Error(ErrorKind::integrity, "item '" + item.id + "' has no DEC label");
            s.items.push_back(std::move(item));
        }
        if (r.contains("weights")) {
            const auto& w = r["weights"];
            s.weights = {w.value("expert_block", 0.6), w.value("dec", 0.3), w.value("kmeans", 0.1)};
            if (std::abs(s.weights.expert_block + s.weights.dec + s.weights.kmeans - 1.0) > 1e-12)
                throw Error(ErrorKind::domain, "fusion weights must sum to 1");
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("session request: ") + e.what());
    }
}

nlohmann::json to_json(const DelphiSession& s) {
    auto doc = session_request(s);
    nlohmann::json experts = nlohmann::json::array();
    for (const auto& e : s.experts)
        experts.push_back({{"id", e.id}, {"token", e.token}, {"status", status_name(e.status)}, {"votes", e.votes}});
    doc["experts"] = experts;
    doc["finalized"] = s.finalized;
    if (s.finalized && s.fusion) {
        nlohmann::json fusion = nlohmann::json::array();
        for (const auto& f : s.fusion->items) fusion.push_back(fused_json(f));
        doc["fusion"] = fusion;
        doc["final_labels"] = labels_json(s.final_labels);
        doc["label_sources"] = s.label_sources;
    }
    return doc;
}

DelphiSession session_from_json(const nlohmann::json& j) {
    auto s = session_from_request(j);
    try {
        const auto& experts = j.at("experts");
        for (std::size_t i = 0; i < s.experts.size(); ++i) {
            s.experts[i].status = experts[i].value("status", "pending") == "submitted" ? ExpertStatus::submitted : ExpertStatus::pending;
            if (experts[i].contains("votes")) s.experts[i].votes = experts[i]["votes"].get<std::map<std::string, int>>();
        }
        s.finalized = j.value("finalized", false);
        if (s.finalized) {
            FusionResult fusion;
            for (const auto& f : j.at("fusion")) {
                FusedItem item;
                item.id = f.at("id");
                item.scores = f.at("scores").get<std::array<double, 3>>();
                item.final_label = f.at("final_label");
                item.dec_label = f.at("dec_label");
                item.kmeans_label = f.at("kmeans_label");
                item.expert_votes = f.at("expert_votes").get<std::map<std::string, int>>();
                fusion.items.push_back(std::move(item));
            }
            s.fusion = std::move(fusion);
            s.final_labels = labels_from_json(j.at("final_labels"), Provenance::delphi);
            s.label_sources = j.at("label_sources").get<std::map<std::string, std::string>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, std::string("session document: ") + e.what());
    }
    return s;
}

SessionStore::SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw Error(ErrorKind::io, "cannot create session store " + dir_.string() + ": " + ec.message());
}

std::filesystem::path SessionStore::path_for(const std::string& session_id) const {
    if (!valid_session_id(session_id)) throw Error(ErrorKind::not_found, "invalid session id '" + session_id + "'");
    return dir_ / (session_id + ".json");
}

bool SessionStore::exists(const std::string& session_id) const {
    return valid_session_id(session_id) && std::filesystem::exists(path_for(session_id));
}

DelphiSession SessionStore::load(const std::string& session_id) const {
    const auto path = path_for(session_id);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::not_found, "no session '" + session_id + "'");
    try {
        return session_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::parse, path.string() + ": " + e.what());
    }
}

void SessionStore::save(const DelphiSession& session) {
    const auto path = path_for(session.id);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
        out << to_json(session).dump(2) << '\n';
        out.flush();
        if (!out) throw Error(ErrorKind::io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorKind::io, "cannot replace " + path.string() + ": " + ec.message());
}

std::vector<std::string> SessionStore::list() const {
    std::vector<std::string> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir_))
        if (entry.path().extension() == ".json") out.push_back(entry.path().stem().string());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace urgency::delphi
