#include "urgency/corpus.hpp"

#include "urgency/error.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace urgency {

namespace {

constexpr char32_t kInvalid = 0xFFFFFFFF;

// Decodes one UTF-8 sequence starting at text[i], advancing i. Malformed input
// yields kInvalid and consumes a single byte.
char32_t decode_utf8(std::string_view text, std::size_t& i) {
    const auto lead = static_cast<unsigned char>(text[i]);
    if (lead < 0x80) {
        ++i;
        return lead;
    }
    int extra = 0;
    char32_t cp = 0;
    if ((lead & 0xE0) == 0xC0) {
        extra = 1;
        cp = lead & 0x1F;
    } else if ((lead & 0xF0) == 0xE0) {
        extra = 2;
        cp = lead & 0x0F;
    } else if ((lead & 0xF8) == 0xF0) {
        extra = 3;
        cp = lead & 0x07;
    } else {
        ++i;
        return kInvalid;
    }
    if (i + extra >= text.size()) {
        ++i;
        return kInvalid;
    }
    for (int k = 1; k <= extra; ++k) {
        const auto cont = static_cast<unsigned char>(text[i + k]);
        if ((cont & 0xC0) != 0x80) {
            ++i;
            return kInvalid;
        }
        cp = (cp << 6) | (cont & 0x3F);
    }
    i += extra + 1;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return kInvalid;
    return cp;
}

void encode_utf8(char32_t cp, std::string& out) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

bool in_range(char32_t cp, char32_t lo, char32_t hi) { return cp >= lo && cp <= hi; }

bool is_space(char32_t cp) {
    return cp == U' ' || in_range(cp, U'\t', U'\r') || cp == 0xA0 || cp == 0x1680 || in_range(cp, 0x2000, 0x200A) ||
           cp == 0x2028 || cp == 0x2029 || cp == 0x202F || cp == 0x205F || cp == 0x3000 || cp == 0xFEFF;
}

bool is_decimal_digit(char32_t cp) {
    return in_range(cp, U'0', U'9') || in_range(cp, 0x0660, 0x0669) || in_range(cp, 0x06F0, 0x06F9) ||
           in_range(cp, 0x0966, 0x096F) || in_range(cp, 0xFF10, 0xFF19);
}

// Punctuation and symbol blocks. Everything ASCII that is neither a letter,
// digit nor space counts, including the underscore.
bool is_punctuation(char32_t cp) {
    if (cp < 0x80) {
        return cp < 0x20 || cp == 0x7F ||
               !(in_range(cp, U'a', U'z') || in_range(cp, U'A', U'Z') || in_range(cp, U'0', U'9') || cp == U' ');
    }
    if (in_range(cp, 0x80, 0x9F)) return true;
    if (in_range(cp, 0xA1, 0xBF)) return cp != 0xAA && cp != 0xB5 && cp != 0xBA;
    if (cp == 0xD7 || cp == 0xF7) return true;
    return in_range(cp, 0x2010, 0x2027) || in_range(cp, 0x2030, 0x205E) || in_range(cp, 0x20A0, 0x20CF) ||
           in_range(cp, 0x2100, 0x214F) || in_range(cp, 0x2190, 0x23FF) || in_range(cp, 0x2500, 0x27BF) ||
           in_range(cp, 0x2E00, 0x2E7F) || in_range(cp, 0x3001, 0x303F) || in_range(cp, 0xFF01, 0xFF0F) ||
           in_range(cp, 0xFF1A, 0xFF20) || in_range(cp, 0xFF3B, 0xFF40) || in_range(cp, 0xFF5B, 0xFF65) ||
           cp == kInvalid;
}

char32_t to_lower(char32_t cp) {
    if (in_range(cp, U'A', U'Z')) return cp + 32;
    if (cp < 0x80) return cp;
    if (in_range(cp, 0xC0, 0xDE) && cp != 0xD7) return cp + 32;
    if (in_range(cp, 0x100, 0x137) || in_range(cp, 0x14A, 0x177)) return cp | 1;
    if (in_range(cp, 0x139, 0x148) || in_range(cp, 0x179, 0x17E)) return (cp & 1) ? cp + 1 : cp;
    if (cp == 0x178) return 0xFF;
    if (in_range(cp, 0x391, 0x3A9) && cp != 0x3A2) return cp + 32;
    if (in_range(cp, 0x410, 0x42F)) return cp + 32;
    if (in_range(cp, 0x400, 0x40F)) return cp + 80;
    if (in_range(cp, 0xFF21, 0xFF3A)) return cp + 32;
    return cp;
}

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::string join(const TokenList& tokens, char sep) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(sep);
        out += tokens[i];
    }
    return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        lines.push_back(std::move(t));
    }
    return lines;
}

// RFC 4180 rows; quoted fields may span lines. Returns (first line number, fields).
std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(const std::string& text,
                                                                        const std::string& name) {
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t line = 1;
    std::size_t row_line = 1;
    auto end_row = [&] {
        fields.push_back(std::move(field));
        field.clear();
        if (!(fields.size() == 1 && fields[0].empty())) rows.emplace_back(row_line, std::move(fields));
        fields.clear();
        field_started = false;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (field_started && !field.empty())
                throw Error(ErrorKind::parse, name + " line " + std::to_string(line) + ": stray quote inside field");
            quoted = true;
            field_started = true;
            break;
        case ',':
            fields.push_back(std::move(field));
            field.clear();
            field_started = false;
            break;
        case '\r':
            break;
        case '\n':
            end_row();
            ++line;
            row_line = line;
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (quoted) throw Error(ErrorKind::parse, name + " line " + std::to_string(row_line) + ": unterminated quoted field");
    if (!field.empty() || !fields.empty()) end_row();
    return rows;
}

std::vector<RawRecord> read_csv_corpus(const std::filesystem::path& path, const std::string& text) {
    const auto name = path.string();
    auto rows = parse_csv(text, name);
    if (rows.empty()) return {};
    const auto& header = rows.front().second;
    auto column = [&](std::string_view key) -> std::size_t {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (trim(header[c]) == key) return c;
        throw Error(ErrorKind::parse, name + " line 1: missing column '" + std::string(key) + "'");
    };
    const std::size_t id_col = column("id");
    const std::size_t spec_col = column("medical_specialty");
    const std::size_t text_col = column("transcription");
    std::vector<RawRecord> out;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& [line, fields] = rows[r];
        if (fields.size() != header.size())
            throw Error(ErrorKind::parse, name + " line " + std::to_string(line) + ": expected " +
                                              std::to_string(header.size()) + " fields, found " +
                                              std::to_string(fields.size()));
        out.push_back({trim(fields[id_col]), fields[spec_col], fields[text_col]});
    }
    return out;
}

std::vector<RawRecord> read_jsonl_corpus(const std::filesystem::path& path, std::istream& in) {
    std::vector<RawRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto where = path.string() + " line " + std::to_string(line_no);
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::parse, where + ": " + e.what());
        }
        if (!obj.is_object() || !obj.contains("id")) throw Error(ErrorKind::parse, where + ": expected object with 'id'");
        RawRecord rec;
        const auto& id = obj["id"];
        if (id.is_string()) rec.id = id.get<std::string>();
        else if (id.is_number_integer()) rec.id = std::to_string(id.get<long long>());
        else throw Error(ErrorKind::parse, where + ": 'id' must be a string or integer");
        if (auto it = obj.find("medical_specialty"); it != obj.end() && it->is_string()) rec.specialty = *it;
        if (auto it = obj.find("transcription"); it != obj.end() && it->is_string()) rec.transcription = *it;
        out.push_back(std::move(rec));
    }
    return out;
}

} // namespace

std::string normalize_text(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_space = false;
    std::size_t i = 0;
    while (i < raw.size()) {
        const char32_t cp = decode_utf8(raw, i);
        if (is_space(cp) || is_punctuation(cp) || is_decimal_digit(cp)) {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        encode_utf8(to_lower(cp), out);
    }
    return out;
}

TokenList split_whitespace(std::string_view text) {
    TokenList tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        const std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) tokens.emplace_back(text.substr(start, i - start));
    }
    return tokens;
}

TokenList expand_abbreviations(const TokenList& tokens, const std::map<std::string, std::string>& map) {
    TokenList out;
    out.reserve(tokens.size());
    for (const auto& token : tokens) {
        if (auto it = map.find(token); it != map.end()) {
            for (auto& piece : split_whitespace(it->second)) out.push_back(std::move(piece));
        } else {
            out.push_back(token);
        }
    }
    return out;
}

TokenList merge_phrases(const TokenList& tokens, const std::vector<std::string>& phrases) {
    std::vector<TokenList> split;
    split.reserve(phrases.size());
    for (const auto& p : phrases) {
        auto parts = split_whitespace(p);
        if (!parts.empty()) split.push_back(std::move(parts));
    }
    std::stable_sort(split.begin(), split.end(),
                     [](const TokenList& a, const TokenList& b) { return a.size() > b.size(); });

    TokenList out;
    out.reserve(tokens.size());
    std::size_t i = 0;
    while (i < tokens.size()) {
        const TokenList* match = nullptr;
        for (const auto& phrase : split) {
            if (i + phrase.size() > tokens.size()) continue;
            if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
                match = &phrase;
                break;
            }
        }
        if (match) {
            out.push_back(join(*match, '_'));
            i += match->size();
        } else {
            out.push_back(tokens[i++]);
        }
    }
    return out;
}

TokenList remove_stopwords(const TokenList& tokens, const PreprocessConfig& cfg) {
    TokenList out;
    out.reserve(tokens.size());
    for (const auto& token : tokens)
        if (!cfg.general_stopwords.contains(token) && !cfg.medical_stopwords.contains(token)) out.push_back(token);
    return out;
}

TranscriptRecord preprocess(const RawRecord& record, const PreprocessConfig& cfg) {
    TranscriptRecord out{record.id, record.specialty, record.transcription, {}, {}, false};
    auto tokens = split_whitespace(normalize_text(record.transcription));
    if (cfg.lemmatize) tokens = cfg.lemmatize(std::move(tokens));
    tokens = expand_abbreviations(tokens, cfg.abbreviation_map);
    tokens = merge_phrases(tokens, cfg.merge_phrases);
    tokens = remove_stopwords(tokens, cfg);
    out.final_text = join(tokens, ' ');
    out.tokens = std::move(tokens);
    out.flagged = out.tokens.empty();
    return out;
}

PreprocessConfig PreprocessConfig::from_directory(const std::filesystem::path& dir) {
    PreprocessConfig cfg;
    auto maybe = [&](const char* name) { return std::filesystem::exists(dir / name); };
    if (maybe("stopwords_general.txt"))
        for (auto& w : read_lines(dir / "stopwords_general.txt")) cfg.general_stopwords.insert(normalize_text(w));
    if (maybe("stopwords_medical.txt"))
        for (auto& w : read_lines(dir / "stopwords_medical.txt")) cfg.medical_stopwords.insert(normalize_text(w));
    if (maybe("phrases.txt")) {
        for (auto& p : read_lines(dir / "phrases.txt")) {
            auto norm = normalize_text(p);
            if (split_whitespace(norm).size() < 2)
                throw Error(ErrorKind::parse, "phrase '" + p + "' must have at least two tokens");
            cfg.merge_phrases.push_back(std::move(norm));
        }
    }
    if (maybe("abbreviations.txt")) {
        for (auto& line : read_lines(dir / "abbreviations.txt")) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw Error(ErrorKind::parse, "abbreviation line without '=': " + line);
            auto key = normalize_text(line.substr(0, eq));
            if (key.empty() || key.find(' ') != std::string::npos)
                throw Error(ErrorKind::parse, "abbreviation key must be a single token: " + line);
            cfg.abbreviation_map[key] = normalize_text(line.substr(eq + 1));
        }
    }
    return cfg;
}

std::vector<RawRecord> read_raw_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    const auto ext = path.extension().string();
    if (ext == ".jsonl" || ext == ".json") return read_jsonl_corpus(path, in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return read_csv_corpus(path, buf.str());
}

std::vector<TranscriptRecord> load_corpus(const std::filesystem::path& path, const PreprocessConfig& cfg) {
    const auto raw = read_raw_corpus(path);
    std::vector<TranscriptRecord> out;
    std::set<std::string> seen;
    const auto filter = trim(cfg.specialty_filter);
    for (const auto& rec : raw) {
        if (trim(rec.specialty) != filter) continue;
        if (trim(rec.transcription).empty()) continue;
        if (!seen.insert(rec.id).second) throw Error(ErrorKind::integrity, "duplicate id '" + rec.id + "' in " + path.string());
        out.push_back(preprocess(rec, cfg));
        out.back().specialty = filter;
    }
    if (out.empty()) throw Error(ErrorKind::empty_corpus, "no records in " + path.string() + " survive the '" + filter + "' filter");
    return out;
}

void write_records(const std::vector<TranscriptRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    for (const auto& r : records) {
        nlohmann::json obj = {{"id", r.id},         {"specialty", r.specialty},   {"raw_text", r.raw_text},
                              {"tokens", r.tokens}, {"final_text", r.final_text}, {"flagged", r.flagged}};
        out << obj.dump() << '\n';
    }
    if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

std::vector<TranscriptRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::vector<TranscriptRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto obj = nlohmann::json::parse(line);
            out.push_back({obj.at("id"), obj.at("specialty"), obj.at("raw_text"), obj.at("tokens").get<TokenList>(),
                           obj.at("final_text"), obj.at("flagged")});
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::parse, path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

} // namespace urgency
