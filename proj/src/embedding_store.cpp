#include "urgency/embedding_store.hpp"

#include "urgency/error.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace urgency {

namespace {

constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};
constexpr char kSeqMagic[4] = {'T', 'S', 'E', 'Q'};
constexpr std::uint8_t kSeqVersion = 1;

class ByteWriter {
public:
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_ += s;
    }
    void flush_to(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
    }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string bytes, std::string name) : buf_(std::move(bytes)), name_(std::move(name)) {}

    bool done() const { return pos_ == buf_.size(); }
    std::size_t remaining() const { return buf_.size() - pos_; }

    void need(std::size_t n) const {
        if (remaining() < n) throw Error(ErrorKind::format, name_ + ": truncated at byte " + std::to_string(pos_));
    }
    bool magic(const char (&m)[4]) {
        need(4);
        const bool ok = std::equal(m, m + 4, buf_.data() + pos_);
        pos_ += 4;
        return ok;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str() {
        const auto len = u32();
        need(len);
        std::string s = buf_.substr(pos_, len);
        pos_ += len;
        return s;
    }

private:
    std::string buf_;
    std::string name_;
    std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

bool starts_with_magic(const std::string& bytes, const char (&m)[4]) {
    return bytes.size() >= 4 && std::equal(m, m + 4, bytes.data());
}

EmbeddingMatrix read_binary_embeddings(const std::filesystem::path& path, std::string bytes) {
    ByteReader r(std::move(bytes), path.string());
    r.magic(kEmbMagic);
    const auto n = r.u32();
    const auto dim = r.u32();
    if (dim == 0 && n > 0) throw Error(ErrorKind::format, path.string() + ": zero dimension");
    r.need(std::size_t{n} * dim * 4);
    EmbeddingMatrix m;
    m.data.resize(n, dim);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j < dim; ++j) m.data(i, j) = static_cast<double>(r.f32());
    m.ids.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) m.ids.push_back(r.str());
    if (!r.done()) throw Error(ErrorKind::format, path.string() + ": trailing bytes after id table");
    validate(m);
    return m;
}

EmbeddingMatrix read_jsonl_embeddings(const std::filesystem::path& path, const std::string& bytes) {
    std::istringstream in(bytes);
    std::vector<std::string> ids;
    std::vector<std::vector<float>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path.string() + " row " + std::to_string(rows.size()) + " (line " + std::to_string(line_no) + ")";
        std::vector<float> vec;
        try {
            auto obj = nlohmann::json::parse(line);
            ids.push_back(obj.at("id").get<std::string>());
            for (const auto& v : obj.at("vector")) vec.push_back(static_cast<float>(v.get<double>()));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::format, where + ": " + e.what());
        }
        if (!rows.empty() && vec.size() != rows.front().size())
            throw Error(ErrorKind::format, where + ": dimension " + std::to_string(vec.size()) + " != " +
                                               std::to_string(rows.front().size()));
        if (vec.empty()) throw Error(ErrorKind::format, where + ": empty vector");
        for (float v : vec)
            if (!std::isfinite(v)) throw Error(ErrorKind::data, where + ": non-finite value");
        rows.push_back(std::move(vec));
    }
    EmbeddingMatrix m;
    m.ids = std::move(ids);
    const auto dim = rows.empty() ? 0 : rows.front().size();
    m.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) m.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    validate(m);
    return m;
}

} // namespace

EmbeddingMatrix EmbeddingMatrix::select(const std::vector<std::string>& wanted) const {
    std::map<std::string_view, Eigen::Index> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], static_cast<Eigen::Index>(i));
    EmbeddingMatrix out;
    out.ids = wanted;
    out.data.resize(static_cast<Eigen::Index>(wanted.size()), dim());
    for (std::size_t i = 0; i < wanted.size(); ++i) {
        auto it = index.find(wanted[i]);
        if (it == index.end()) throw Error(ErrorKind::integrity, "no embedding for id '" + wanted[i] + "'");
        out.data.row(static_cast<Eigen::Index>(i)) = data.row(it->second);
    }
    return out;
}

void validate(const EmbeddingMatrix& m) {
    if (static_cast<Eigen::Index>(m.ids.size()) != m.n())
        throw Error(ErrorKind::integrity, "id count " + std::to_string(m.ids.size()) + " != rows " + std::to_string(m.n()));
    std::set<std::string_view> seen;
    for (std::size_t i = 0; i < m.ids.size(); ++i)
        if (!seen.insert(m.ids[i]).second)
            throw Error(ErrorKind::integrity, "duplicate id '" + m.ids[i] + "' at row " + std::to_string(i));
    if (!m.data.allFinite()) {
        for (Eigen::Index i = 0; i < m.n(); ++i)
            if (!m.data.row(i).allFinite()) throw Error(ErrorKind::data, "non-finite value in row " + std::to_string(i));
    }
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
    auto bytes = slurp(path);
    if (starts_with_magic(bytes, kEmbMagic)) return read_binary_embeddings(path, std::move(bytes));
    return read_jsonl_embeddings(path, bytes);
}

void write_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path, EmbeddingFormat format) {
    validate(m);
    if (format == EmbeddingFormat::binary) {
        ByteWriter w;
        w.raw(kEmbMagic, 4);
        w.u32(static_cast<std::uint32_t>(m.n()));
        w.u32(static_cast<std::uint32_t>(m.dim()));
        for (Eigen::Index i = 0; i < m.n(); ++i)
            for (Eigen::Index j = 0; j < m.dim(); ++j) w.f32(static_cast<float>(m.data(i, j)));
        for (const auto& id : m.ids) w.str(id);
        w.flush_to(path);
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    for (Eigen::Index i = 0; i < m.n(); ++i) {
        nlohmann::json vec = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.dim(); ++j) vec.push_back(static_cast<float>(m.data(i, j)));
        out << nlohmann::json{{"id", m.ids[static_cast<std::size_t>(i)]}, {"vector", vec}}.dump() << '\n';
    }
    if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

std::optional<std::size_t> TokenSequenceSet::index_of(std::string_view id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return i;
    return std::nullopt;
}

TokenSequenceSet read_token_sequences(const std::filesystem::path& path) {
    auto bytes = slurp(path);
    TokenSequenceSet set;
    if (bytes.empty()) return set;
    ByteReader r(std::move(bytes), path.string());
    if (!r.magic(kSeqMagic)) throw Error(ErrorKind::format, path.string() + ": bad magic, expected TSEQ");
    const auto version = r.u8();
    if (version != kSeqVersion)
        throw Error(ErrorKind::format, path.string() + ": unsupported TSEQ version " + std::to_string(version));
    const auto n = r.u32();
    set.dim = r.u32();
    std::set<std::string> seen;
    for (std::uint32_t doc = 0; doc < n; ++doc) {
        auto id = r.str();
        if (!seen.insert(id).second) throw Error(ErrorKind::integrity, path.string() + ": duplicate id '" + id + "'");
        const auto true_len = r.u32();
        if (true_len == 0) throw Error(ErrorKind::format, path.string() + ": empty sequence for '" + id + "'");
        r.need(std::size_t{true_len} * set.dim * 4);
        const auto kept = std::min(true_len, set.max_len);
        Eigen::MatrixXd seq(kept, set.dim);
        for (std::uint32_t t = 0; t < true_len; ++t)
            for (std::uint32_t j = 0; j < set.dim; ++j) {
                const float v = r.f32();
                if (t < kept) seq(t, j) = v;
            }
        if (!seq.allFinite()) throw Error(ErrorKind::data, path.string() + ": non-finite value in '" + id + "'");
        if (true_len > set.max_len) ++set.truncated;
        set.ids.push_back(std::move(id));
        set.sequences.push_back(std::move(seq));
        set.original_lengths.push_back(true_len);
    }
    if (!r.done()) throw Error(ErrorKind::format, path.string() + ": trailing bytes");
    return set;
}

void write_token_sequences(const TokenSequenceSet& set, const std::filesystem::path& path) {
    ByteWriter w;
    w.raw(kSeqMagic, 4);
    w.u8(kSeqVersion);
    w.u32(static_cast<std::uint32_t>(set.size()));
    w.u32(set.dim);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto& seq = set.sequences[i];
        if (seq.rows() == 0 || seq.cols() != set.dim)
            throw Error(ErrorKind::shape, "sequence '" + set.ids[i] + "' has shape " + std::to_string(seq.rows()) + "x" +
                                              std::to_string(seq.cols()));
        w.str(set.ids[i]);
        w.u32(static_cast<std::uint32_t>(seq.rows()));
        for (Eigen::Index t = 0; t < seq.rows(); ++t)
            for (Eigen::Index j = 0; j < seq.cols(); ++j) w.f32(static_cast<float>(seq(t, j)));
    }
    w.flush_to(path);
}

std::string_view urgency_name(int label) {
    switch (label) {
    case 0: return "Elective";
    case 1: return "Immediate";
    case 2: return "Urgent";
    default: return "?";
    }
}

std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::kmeans: return "kmeans";
    case Provenance::dec: return "dec";
    case Provenance::delphi: return "delphi";
    }
    return "?";
}

Provenance provenance_from_string(std::string_view s) {
    if (s == "kmeans") return Provenance::kmeans;
    if (s == "dec") return Provenance::dec;
    if (s == "delphi") return Provenance::delphi;
    throw Error(ErrorKind::parse, "unknown provenance '" + std::string(s) + "'");
}

void LabelTable::set(const std::string& id, int label, Provenance provenance) {
    if (label < 0 || label >= kNumClasses)
        throw Error(ErrorKind::data, "label " + std::to_string(label) + " for '" + id + "' outside {0,1,2}");
    if (auto it = index_.find(id); it != index_.end()) {
        entries_[it->second] = {id, label, provenance};
        return;
    }
    index_.emplace(id, entries_.size());
    entries_.push_back({id, label, provenance});
}

std::optional<int> LabelTable::find(std::string_view id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return entries_[it->second].label;
}

int LabelTable::at(std::string_view id) const {
    auto l = find(id);
    if (!l) throw Error(ErrorKind::not_found, "no label for id '" + std::string(id) + "'");
    return *l;
}

std::vector<std::string> LabelTable::ids() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.id);
    return out;
}

std::vector<int> LabelTable::labels_for(const std::vector<std::string>& wanted) const {
    std::vector<int> out;
    out.reserve(wanted.size());
    for (const auto& id : wanted) out.push_back(at(id));
    return out;
}

LabelTable LabelTable::from(const std::vector<std::string>& ids, const std::vector<int>& labels, Provenance provenance) {
    if (ids.size() != labels.size()) throw Error(ErrorKind::shape, "ids and labels differ in length");
    LabelTable t;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (t.contains(ids[i])) throw Error(ErrorKind::integrity, "duplicate id '" + ids[i] + "'");
        t.set(ids[i], labels[i], provenance);
    }
    return t;
}

std::string labels_to_csv(const LabelTable& table) {
    std::string out = "id,label,provenance\n";
    for (const auto& e : table.entries()) {
        out += e.id;
        out += ',';
        out += std::to_string(e.label);
        out += ',';
        out += to_string(e.provenance);
        out += '\n';
    }
    return out;
}

void write_labels(const LabelTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
    out << labels_to_csv(table);
    if (!out) throw Error(ErrorKind::io, "write failed for " + path.string());
}

LabelTable read_labels(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    LabelTable table;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != "id,label,provenance")
                throw Error(ErrorKind::parse, path.string() + " line 1: expected header id,label,provenance");
            continue;
        }
        const auto c1 = line.find(',');
        const auto c2 = c1 == std::string::npos ? c1 : line.find(',', c1 + 1);
        if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
            throw Error(ErrorKind::parse, path.string() + " line " + std::to_string(line_no) + ": expected 3 fields");
        const auto id = line.substr(0, c1);
        const auto label_text = line.substr(c1 + 1, c2 - c1 - 1);
        if (label_text.size() != 1 || label_text[0] < '0' || label_text[0] > '2')
            throw Error(ErrorKind::data, path.string() + " line " + std::to_string(line_no) + ": label must be 0, 1 or 2");
        if (table.contains(id))
            throw Error(ErrorKind::integrity, path.string() + " line " + std::to_string(line_no) + ": duplicate id '" + id + "'");
        table.set(id, label_text[0] - '0', provenance_from_string(line.substr(c2 + 1)));
    }
    return table;
}

} // namespace urgency
