#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "test_util.hpp"
#include "urgency/embedding_store.hpp"
#include "urgency/error.hpp"
#include "urgency/rng.hpp"

#include <functional>

using namespace urgency;
using testutil::TempDir;
using testutil::write_file;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::io;
}

EmbeddingMatrix random_matrix(Eigen::Index n, Eigen::Index dim, std::uint64_t seed) {
    Rng rng(seed);
    EmbeddingMatrix m;
    m.data.resize(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        m.ids.push_back("doc-" + std::to_string(i));
        for (Eigen::Index j = 0; j < dim; ++j) m.data(i, j) = static_cast<float>(rng.normal());
    }
    return m;
}

} // namespace

TEST_CASE("JSONL embeddings read with dim from the first row") {
    TempDir dir;
    write_file(dir / "e.jsonl", "{\"id\":\"a\",\"vector\":[1,2,3]}\n{\"id\":\"b\",\"vector\":[4,5,6.5]}\n");
    const auto m = read_embeddings(dir / "e.jsonl");
    CHECK(m.n() == 2);
    CHECK(m.dim() == 3);
    CHECK(m.ids == std::vector<std::string>{"a", "b"});
    CHECK(m.data(1, 2) == 6.5);
}

TEST_CASE("binary embeddings round-trip bit-exactly") {
    TempDir dir;
    const auto m = random_matrix(5, 768, 3);
    write_embeddings(m, dir / "e.emb", EmbeddingFormat::binary);
    const auto back = read_embeddings(dir / "e.emb");
    CHECK(back.ids == m.ids);
    CHECK((back.data.array() == m.data.array()).all());
    write_embeddings(back, dir / "again.emb", EmbeddingFormat::binary);
    CHECK(testutil::read_file(dir / "e.emb") == testutil::read_file(dir / "again.emb"));
}

TEST_CASE("JSONL round-trip is value-equal at 32-bit precision") {
    TempDir dir;
    const auto m = random_matrix(4, 16, 5);
    write_embeddings(m, dir / "e.jsonl", EmbeddingFormat::jsonl);
    const auto back = read_embeddings(dir / "e.jsonl");
    CHECK((back.data.cast<float>().array() == m.data.cast<float>().array()).all());
}

TEST_CASE("binary layout matches the documented format") {
    TempDir dir;
    EmbeddingMatrix m;
    m.ids = {"x"};
    m.data.resize(1, 2);
    m.data << 1.0, -2.0;
    write_embeddings(m, dir / "e.emb", EmbeddingFormat::binary);
    const auto bytes = testutil::read_file(dir / "e.emb");
    REQUIRE(bytes.size() == 4 + 4 + 4 + 8 + 4 + 1);
    CHECK(bytes.substr(0, 4) == "EMB1");
    CHECK(bytes[4] == 1);
    CHECK(bytes[8] == 2);
    float first = 0;
    std::memcpy(&first, bytes.data() + 12, 4);
    CHECK(first == 1.0f);
    CHECK(bytes.back() == 'x');
}

TEST_CASE("embedding read errors") {
    TempDir dir;
    std::string mixed;
    for (int i = 0; i < 3; ++i) {
        const int dim = i == 2 ? 767 : 768;
        mixed += "{\"id\":\"r" + std::to_string(i) + "\",\"vector\":[";
        for (int j = 0; j < dim; ++j) mixed += (j ? ",0.5" : "0.5");
        mixed += "]}\n";
    }
    write_file(dir / "mixed.jsonl", mixed);
    try {
        read_embeddings(dir / "mixed.jsonl");
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::format);
        CHECK(e.message().find("row 2") != std::string::npos);
    }
    write_file(dir / "nan.jsonl", "{\"id\":\"a\",\"vector\":[1,\"NaN\"]}\n");
    CHECK(kind_of([&] { read_embeddings(dir / "nan.jsonl"); }) != ErrorKind::io);
    write_file(dir / "dup.jsonl", "{\"id\":\"a\",\"vector\":[1]}\n{\"id\":\"a\",\"vector\":[2]}\n");
    CHECK(kind_of([&] { read_embeddings(dir / "dup.jsonl"); }) == ErrorKind::integrity);
    CHECK(kind_of([&] { read_embeddings(dir / "missing.emb"); }) == ErrorKind::io);

    auto m = random_matrix(2, 3, 1);
    write_embeddings(m, dir / "inf.emb", EmbeddingFormat::binary);
    auto bytes = testutil::read_file(dir / "inf.emb");
    const float inf = std::numeric_limits<float>::infinity();
    std::memcpy(bytes.data() + 12 + 4 * 4, &inf, 4);
    write_file(dir / "inf.emb", bytes);
    CHECK(kind_of([&] { read_embeddings(dir / "inf.emb"); }) == ErrorKind::data);
    m.data(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK(kind_of([&] { write_embeddings(m, dir / "nan.emb", EmbeddingFormat::binary); }) == ErrorKind::data);
    m.data(1, 1) = 0.0;
    CHECK(kind_of([&] { write_embeddings(m, dir / "no/such/dir.emb", EmbeddingFormat::binary); }) == ErrorKind::io);
}

TEST_CASE("select joins by id, not position") {
    const auto m = random_matrix(4, 2, 9);
    const auto s = m.select({"doc-3", "doc-0"});
    CHECK(s.ids == std::vector<std::string>{"doc-3", "doc-0"});
    CHECK(s.data.row(0) == m.data.row(3));
    CHECK_THROWS_AS(m.select({"nope"}), Error);
}

TEST_CASE("token sequences truncate to 512 and count it") {
    TempDir dir;
    TokenSequenceSet set;
    set.dim = 4;
    for (Eigen::Index len : {600, 1, 512}) {
        set.ids.push_back("t" + std::to_string(len));
        set.sequences.push_back(Eigen::MatrixXd::Constant(len, 4, 0.25));
        set.original_lengths.push_back(static_cast<std::uint32_t>(len));
    }
    set.sequences[0](599, 0) = 9.0;
    write_token_sequences(set, dir / "s.tseq");
    const auto back = read_token_sequences(dir / "s.tseq");
    REQUIRE(back.size() == 3);
    CHECK(back.sequences[0].rows() == 512);
    CHECK(back.original_lengths[0] == 600);
    CHECK(back.truncated == 1);
    CHECK(back.sequences[1].rows() == 1);
    CHECK(back.sequences[2].rows() == 512);
    CHECK(back.index_of("t1") == std::optional<std::size_t>{1});
}

TEST_CASE("token sequence edge cases") {
    TempDir dir;
    write_file(dir / "empty.tseq", "");
    CHECK(read_token_sequences(dir / "empty.tseq").size() == 0);
    write_file(dir / "bad.tseq", "TSEX\x01");
    CHECK(kind_of([&] { read_token_sequences(dir / "bad.tseq"); }) == ErrorKind::format);
    write_file(dir / "ver.tseq", std::string("TSEQ\x02\0\0\0\0\0\0\0\0", 13));
    CHECK(kind_of([&] { read_token_sequences(dir / "ver.tseq"); }) == ErrorKind::format);
}

TEST_CASE("label tables") {
    TempDir dir;
    LabelTable t;
    t.set("b", 2, Provenance::kmeans);
    t.set("a", 0, Provenance::delphi);
    CHECK(t.ids() == std::vector<std::string>{"b", "a"});
    CHECK(labels_to_csv(t) == "id,label,provenance\nb,2,kmeans\na,0,delphi\n");
    write_labels(t, dir / "l.csv");
    const auto back = read_labels(dir / "l.csv");
    CHECK(back.at("a") == 0);
    CHECK(back.entries()[0].provenance == Provenance::kmeans);
    CHECK_THROWS_AS(t.set("c", 3, Provenance::dec), Error);
    CHECK_FALSE(t.find("zzz").has_value());
    write_file(dir / "bad.csv", "id,label,provenance\nx,7,dec\n");
    CHECK_THROWS_AS(read_labels(dir / "bad.csv"), Error);
    CHECK(urgency_name(0) == "Elective");
    CHECK(urgency_name(1) == "Immediate");
    CHECK(urgency_name(2) == "Urgent");
}
