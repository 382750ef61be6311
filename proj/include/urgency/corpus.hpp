#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace urgency {

struct TranscriptRecord {
    std::string id;
    std::string specialty;
    std::string raw_text;
    std::vector<std::string> tokens;
    std::string final_text;
    // Set when preprocessing left no tokens; such records are kept but skipped downstream.
    bool flagged = false;
};

using TokenList = std::vector<std::string>;

struct PreprocessConfig {
    std::map<std::string, std::string> abbreviation_map;
    std::vector<std::string> merge_phrases;
    std::set<std::string> general_stopwords;
    std::set<std::string> medical_stopwords;
    std::string specialty_filter = "Surgery";
    // Identity by default. Real lemmatization belongs to the upstream NLP toolchain.
    std::function<TokenList(TokenList)> lemmatize;

    // Loads the plain-text lists from a directory holding any of
    // stopwords_general.txt, stopwords_medical.txt, abbreviations.txt, phrases.txt.
    static PreprocessConfig from_directory(const std::filesystem::path& dir);
};

struct RawRecord {
    std::string id;
    std::string specialty;
    std::string transcription;
};

// Lowercases, replaces punctuation and decimal digits with spaces, collapses
// whitespace and trims. Total over arbitrary byte strings; invalid UTF-8 bytes
// are treated as punctuation.
std::string normalize_text(std::string_view raw);

TokenList split_whitespace(std::string_view text);

TokenList expand_abbreviations(const TokenList& tokens, const std::map<std::string, std::string>& map);

// Greedy left-to-right, longest phrase first; matched runs become one
// underscore-joined token.
TokenList merge_phrases(const TokenList& tokens, const std::vector<std::string>& phrases);

TokenList remove_stopwords(const TokenList& tokens, const PreprocessConfig& cfg);

// normalize -> expand -> merge -> stopwords.
TranscriptRecord preprocess(const RawRecord& record, const PreprocessConfig& cfg);

// CSV (header id,medical_specialty,transcription) or JSONL with the same keys.
std::vector<RawRecord> read_raw_corpus(const std::filesystem::path& path);

// Reads, filters by specialty and non-empty transcription, preprocesses.
std::vector<TranscriptRecord> load_corpus(const std::filesystem::path& path, const PreprocessConfig& cfg);

// One JSON object per line: id, specialty, raw_text, tokens, final_text, flagged.
void write_records(const std::vector<TranscriptRecord>& records, const std::filesystem::path& path);
std::vector<TranscriptRecord> read_records(const std::filesystem::path& path);

} // namespace urgency
