#pragma once

// Deterministic stand-in for the upstream encoder: every token maps to a
// fixed Gaussian vector seeded by its FNV-1a hash, and a document vector is
// the mean of its token vectors.

#include "urgency/corpus.hpp"
#include "urgency/embedding_store.hpp"
#include "urgency/rng.hpp"

#include <algorithm>
#include <string_view>

namespace urgency::mock {

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline Eigen::VectorXd token_vector(std::string_view token, Eigen::Index dim, std::uint64_t salt) {
    Rng rng(derive_seed(fnv1a(token), salt));
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
    return v;
}

struct Encoded {
    EmbeddingMatrix documents;
    TokenSequenceSet sequences;
};

// Tokens come from the raw text, since the upstream model sees unprocessed notes.
inline Encoded encode(const std::vector<TranscriptRecord>& records, Eigen::Index dim, Eigen::Index token_dim,
                      std::uint64_t salt = 0) {
    Encoded out;
    out.sequences.dim = static_cast<std::uint32_t>(token_dim);
    out.documents.data.resize(static_cast<Eigen::Index>(records.size()), dim);
    for (std::size_t r = 0; r < records.size(); ++r) {
        auto tokens = split_whitespace(normalize_text(records[r].raw_text));
        if (tokens.empty()) tokens.push_back("[empty]");
        if (tokens.size() > kMaxSequenceLength) tokens.resize(kMaxSequenceLength);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
        Eigen::MatrixXd seq(static_cast<Eigen::Index>(tokens.size()), token_dim);
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            mean += token_vector(tokens[t], dim, salt);
            seq.row(static_cast<Eigen::Index>(t)) = token_vector(tokens[t], token_dim, salt + 1).transpose();
        }
        out.documents.ids.push_back(records[r].id);
        out.documents.data.row(static_cast<Eigen::Index>(r)) = (mean / static_cast<double>(tokens.size())).transpose();
        out.sequences.ids.push_back(records[r].id);
        out.sequences.original_lengths.push_back(static_cast<std::uint32_t>(tokens.size()));
        out.sequences.sequences.push_back(std::move(seq));
    }
    return out;
}

} // namespace urgency::mock
