#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace urgency {

// Document vectors, one row per id. Values are stored on disk as 32-bit floats
// and held here in double precision.
struct EmbeddingMatrix {
    std::vector<std::string> ids;
    Eigen::MatrixXd data;

    Eigen::Index n() const { return data.rows(); }
    Eigen::Index dim() const { return data.cols(); }

    // Rows for the given ids, in the given order. Missing ids are an integrity error.
    EmbeddingMatrix select(const std::vector<std::string>& wanted) const;
};

enum class EmbeddingFormat { jsonl, binary };

// Binary if the file begins with the EMB1 magic, JSONL otherwise.
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path, EmbeddingFormat format);

// Throws unless ids are unique, |ids| = n and every entry is finite.
void validate(const EmbeddingMatrix& matrix);

inline constexpr std::uint32_t kMaxSequenceLength = 512;

struct TokenSequenceSet {
    std::vector<std::string> ids;
    std::uint32_t dim = 0;
    std::uint32_t max_len = kMaxSequenceLength;
    // Each sequence is true_len x dim.
    std::vector<Eigen::MatrixXd> sequences;
    // Length on disk, before any truncation to max_len.
    std::vector<std::uint32_t> original_lengths;
    std::size_t truncated = 0;

    std::size_t size() const { return ids.size(); }
    std::optional<std::size_t> index_of(std::string_view id) const;
};

TokenSequenceSet read_token_sequences(const std::filesystem::path& path);
void write_token_sequences(const TokenSequenceSet& set, const std::filesystem::path& path);

// Urgency encoding used everywhere a label is an integer.
enum class Urgency : int { elective = 0, immediate = 1, urgent = 2 };
inline constexpr int kNumClasses = 3;

std::string_view urgency_name(int label);

enum class Provenance { kmeans, dec, delphi };
std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

struct LabelEntry {
    std::string id;
    int label = 0;
    Provenance provenance = Provenance::dec;
};

// Ordered id -> label table. All joins happen by id.
class LabelTable {
public:
    LabelTable() = default;

    void set(const std::string& id, int label, Provenance provenance);
    std::optional<int> find(std::string_view id) const;
    int at(std::string_view id) const;
    bool contains(std::string_view id) const { return index_.contains(std::string(id)); }

    const std::vector<LabelEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::vector<std::string> ids() const;
    std::vector<int> labels_for(const std::vector<std::string>& ids) const;

    // Builds a table from aligned ids and labels.
    static LabelTable from(const std::vector<std::string>& ids, const std::vector<int>& labels, Provenance provenance);

private:
    std::vector<LabelEntry> entries_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

// CSV with header id,label,provenance.
LabelTable read_labels(const std::filesystem::path& path);
void write_labels(const LabelTable& table, const std::filesystem::path& path);
std::string labels_to_csv(const LabelTable& table);

} // namespace urgency
