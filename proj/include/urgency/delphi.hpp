#pragma once

#include "urgency/embedding_store.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace urgency::delphi {

struct ReviewSample {
    std::vector<std::string> disagreement_ids;
    std::vector<std::string> balanced_ids;
    double fraction = 0.2;
    std::size_t target = 0;
    std::vector<std::string> warnings;

    std::size_t size() const { return disagreement_ids.size() + balanced_ids.size(); }
};

// Every id where the two clusterings disagree, topped up to round(fraction * n)
// with ids drawn per DEC category so category counts differ by at most one.
ReviewSample build_review_sample(const LabelTable& kmeans, const LabelTable& dec, double fraction, std::uint64_t seed);

struct FusionWeights {
    double expert_block = 0.6;
    double dec = 0.3;
    double kmeans = 0.1;
};

struct ReviewItem {
    std::string id;
    std::string raw_text;
    int dec_label = 0;
    int kmeans_label = 0;
    bool disagreement() const { return dec_label != kmeans_label; }
};

enum class ExpertStatus { pending, submitted };

struct Expert {
    std::string id;
    std::string token;
    ExpertStatus status = ExpertStatus::pending;
    std::map<std::string, int> votes;
};

struct FusedItem {
    std::string id;
    std::array<double, 3> scores{};
    int final_label = 0;
    int dec_label = 0;
    int kmeans_label = 0;
    std::map<std::string, int> expert_votes;
};

struct FusionResult {
    std::vector<FusedItem> items;
    const FusedItem* find(const std::string& id) const;
};

struct DelphiSession {
    std::string id;
    std::vector<ReviewItem> items; // presentation order
    std::vector<Expert> experts;
    FusionWeights weights;
    // Full-corpus DEC labels; unsampled ids inherit these on finalization.
    LabelTable dec_labels;
    bool finalized = false;
    std::optional<FusionResult> fusion;
    LabelTable final_labels;
    std::map<std::string, std::string> label_sources; // "fused" or "dec"

    const ReviewItem& item(const std::string& transcript_id) const;
    Expert& expert(const std::string& expert_id);
    const Expert& expert(const std::string& expert_id) const;
    bool all_submitted() const;
};

struct ExpertSpec {
    std::string id;
    std::string token;
};

// Items appear in a seeded shuffle so queue position reveals nothing about
// cluster membership or disagreement status.
DelphiSession create_session(const std::string& session_id, const ReviewSample& sample,
                             const std::map<std::string, std::string>& raw_text, const LabelTable& kmeans,
                             const LabelTable& dec, const std::vector<ExpertSpec>& experts, std::uint64_t seed);

// Drafts may be overwritten until the expert submits. After submission an
// identical vote is accepted as a no-op and a different one is rejected.
void record_vote(DelphiSession& session, const std::string& expert_id, const std::string& transcript_id, int label);

// Requires a vote on every item; repeated submission is a no-op.
void submit(DelphiSession& session, const std::string& expert_id);

// score[c] = block * (share of experts voting c) + dec * [dec = c] + kmeans * [km = c];
// ties go to the DEC label when it is tied for the maximum, else the lowest index.
FusionResult fuse_labels(const DelphiSession& session);

// Fuses, then covers every DEC id: sampled ids get fused labels, the rest keep DEC's.
LabelTable finalize_labels(DelphiSession& session, const LabelTable& dec);
LabelTable finalize_labels(DelphiSession& session);

// Queue for one expert: ids, raw text, own drafts. Machine labels appear
// only after this expert submits; other experts' votes never appear.
nlohmann::json expert_view(const DelphiSession& session, const std::string& expert_id);
// Status and machine labels; the fusion table only once finalized.
nlohmann::json coordinator_view(const DelphiSession& session);

nlohmann::json to_json(const DelphiSession& session);
DelphiSession session_from_json(const nlohmann::json& j);

// Creation request as accepted by POST /sessions.
nlohmann::json session_request(const DelphiSession& session);
DelphiSession session_from_request(const nlohmann::json& request);

// One JSON document per session, replaced by write-to-temp plus rename.
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path dir);

    bool exists(const std::string& session_id) const;
    DelphiSession load(const std::string& session_id) const;
    void save(const DelphiSession& session);
    std::vector<std::string> list() const;
    const std::filesystem::path& dir() const { return dir_; }

    // Serialises read-modify-write cycles on the store.
    std::mutex& writer_mutex() { return writer_; }

private:
    std::filesystem::path path_for(const std::string& session_id) const;

    std::filesystem::path dir_;
    std::mutex writer_;
};

} // namespace urgency::delphi
