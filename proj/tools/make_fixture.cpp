// Mock-encodes a corpus into the embedding and token-sequence files the
// pipeline ingests, so it can run without the upstream language model.

#include "mock_encoder.hpp"

#include "urgency/error.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Mock-encode a corpus into embedding and token-sequence files"};
    std::string corpus, emb_out, seq_out, specialty = "Surgery";
    Eigen::Index dim = 768, token_dim = 32;
    std::uint64_t salt = 0;
    bool binary = false;
    app.add_option("--corpus", corpus, "Corpus CSV or JSONL")->required();
    app.add_option("--embeddings", emb_out, "Output document embeddings")->required();
    app.add_option("--sequences", seq_out, "Output token sequences (TSEQ)")->required();
    app.add_option("--specialty", specialty, "Specialty filter");
    app.add_option("--dim", dim, "Document embedding width");
    app.add_option("--token-dim", token_dim, "Token embedding width");
    app.add_option("--salt", salt, "Varies the token table");
    app.add_flag("--binary", binary, "Write EMB1 instead of JSONL");
    CLI11_PARSE(app, argc, argv);

    try {
        urgency::PreprocessConfig cfg;
        cfg.specialty_filter = specialty;
        const auto records = urgency::load_corpus(corpus, cfg);
        const auto encoded = urgency::mock::encode(records, dim, token_dim, salt);
        urgency::write_embeddings(encoded.documents, emb_out,
                                  binary ? urgency::EmbeddingFormat::binary : urgency::EmbeddingFormat::jsonl);
        urgency::write_token_sequences(encoded.sequences, seq_out);
        std::cout << records.size() << " documents\n";
    } catch (const urgency::Error& e) {
        std::cerr << "error[" << urgency::to_string(e.kind()) << "]: " << e.message() << '\n';
        return 1;
    }
    return 0;
}
