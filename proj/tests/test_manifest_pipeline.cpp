#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pipeline_scenario.hpp"
#include "test_util.hpp"
#include "urgency/manifest.hpp"
#include "urgency/pipeline.hpp"

#include <algorithm>

using namespace urgency;
using testutil::error_kind;

namespace {

StageRecord record(const std::string& name, std::vector<FileDigest> in, std::vector<FileDigest> out) {
    StageRecord r;
    r.name = name;
    r.status = "ok";
    r.inputs = std::move(in);
    r.outputs = std::move(out);
    r.started = r.finished = utc_timestamp();
    return r;
}

bool contains(const std::vector<std::string>& v, const std::string& s) { return std::find(v.begin(), v.end(), s) != v.end(); }

} // namespace

TEST_CASE("sha256 known answers") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    testutil::TempDir dir;
    std::string big(200'000, 'x');
    for (std::size_t i = 0; i < big.size(); i += 7) big[i] = static_cast<char>('a' + i % 26);
    testutil::write_file(dir / "big", big);
    CHECK(sha256_file(dir / "big") == sha256_hex(big));
    CHECK(error_kind([&] { sha256_file(dir / "missing"); }) == ErrorKind::io);
}

TEST_CASE("manifest is append-only on disk") {
    testutil::TempDir dir;
    const auto path = dir / "manifest.json";
    RunManifest m;
    m.seed = 5;
    m.stages.push_back(record("a", {}, {{"x", "11"}}));
    m.stages.push_back(record("b", {{"x", "11"}}, {{"y", "22"}}));
    write_manifest(m, path);
    const auto back = read_manifest(path);
    CHECK(to_json(back) == to_json(m));
    CHECK(back.last_ok("b")->outputs[0].sha256 == "22");
    CHECK(back.last_ok("zzz") == nullptr);

    auto dropped = m;
    dropped.stages.pop_back();
    CHECK(error_kind([&] { write_manifest(dropped, path); }) == ErrorKind::immutable);
    auto edited = m;
    edited.stages[0].outputs[0].sha256 = "99";
    CHECK(error_kind([&] { write_manifest(edited, path); }) == ErrorKind::immutable);
    CHECK(to_json(read_manifest(path)) == to_json(m));

    auto grown = m;
    grown.stages.push_back(record("a", {}, {{"x", "33"}}));
    write_manifest(grown, path);
    CHECK(read_manifest(path).last_ok("a")->outputs[0].sha256 == "33");
}

TEST_CASE("digest chain verification") {
    RunManifest m;
    m.stages.push_back(record("a", {}, {{"x", "11"}}));
    m.stages.push_back(record("b", {{"x", "11"}}, {{"y", "22"}}));
    CHECK(verify_chain(m).empty());
    m.stages.push_back(record("c", {{"y", "23"}}, {}));
    const auto problems = verify_chain(m);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("y") != std::string::npos);
}

TEST_CASE("workdir lock is exclusive") {
    testutil::TempDir dir;
    {
        WorkdirLock lock(dir / "w");
        CHECK(std::filesystem::exists(dir / "w" / ".lock"));
        CHECK(error_kind([&] { WorkdirLock again(dir / "w"); }) == ErrorKind::io);
    }
    CHECK(!std::filesystem::exists(dir / "w" / ".lock"));
    WorkdirLock relock(dir / "w");
}

TEST_CASE("config parsing") {
    testutil::TempDir dir;
    const auto base = nlohmann::json::parse(testutil::read_file(scenario::fixture_dir() / "pipeline.json"));
    const auto c = pipeline_config_from_json(base, dir.path());
    CHECK(c.corpus == dir / "corpus_pipeline.csv");
    CHECK(c.k == 3);
    CHECK(c.experts.size() == 2);
    CHECK(c.snapshot().dump().find("token-a") == std::string::npos);

    auto bad_k = base;
    bad_k["kmeans"]["k"] = 4;
    CHECK(error_kind([&] { pipeline_config_from_json(bad_k, dir.path()); }).has_value());
    auto bad_map = base;
    bad_map["cluster_to_label"] = {0, 0, 2};
    CHECK(error_kind([&] { pipeline_config_from_json(bad_map, dir.path()); }).has_value());
    auto no_experts = base;
    no_experts["delphi"]["experts"] = nlohmann::json::array();
    CHECK(error_kind([&] { pipeline_config_from_json(no_experts, dir.path()); }).has_value());
}

TEST_CASE("end-to-end run pauses, resumes and reproduces") {
    testutil::TempDir a, b;
    const auto run = scenario::run_end_to_end(a.path());

    CHECK(run.first.paused);
    CHECK(run.first.executed.size() == 7);
    CHECK(run.first.manifest.stages.back().name == "delphi-finalize");
    CHECK(run.first.manifest.stages.back().status == "paused");

    CHECK(!run.second.paused);
    CHECK(run.second.executed == std::vector<std::string>{"delphi-finalize", "train", "evaluate"});
    CHECK(run.second.reused.size() == 7);
    CHECK(run.third.executed.empty());
    CHECK(run.third.reused.size() == pipeline_stages().size());
    CHECK(verify_chain(run.third.manifest).empty());

    for (const auto* f : {"final_labels.csv", "model.ckpt", "report.json", "validity.json", "dec.ckpt", "sessions/fixture.json"})
        CHECK(run.digests.contains(f));
    const auto report = nlohmann::json::parse(testutil::read_file(a / "work" / "report.json"));
    CHECK(report["test"]["confusion"].size() == 3);
    CHECK(report.contains("cv"));
    const auto finals = read_labels(a / "work" / "final_labels.csv");
    CHECK(finals.size() == 76);

    const auto again = scenario::run_end_to_end(b.path());
    CHECK(again.digests == run.digests);
}

TEST_CASE("stale outputs and config changes rerun only what they touch") {
    testutil::TempDir dir;
    const auto config = scenario::prepare_fixture(dir / "inputs");
    const auto work = dir / "work";
    run_pipeline(config, work);
    scenario::script_experts(work, config.session_id);
    run_pipeline(config, work);
    const auto before = sha256_file(work / "kmeans_labels.csv");

    testutil::write_file(work / "kmeans_labels.csv", "tampered\n");
    const auto repaired = run_pipeline(config, work);
    CHECK(repaired.executed == std::vector<std::string>{"cluster-kmeans"});
    CHECK(sha256_file(work / "kmeans_labels.csv") == before);

    auto changed = config;
    changed.classifier.epochs = 2;
    const auto retrained = run_pipeline(changed, work);
    CHECK(retrained.executed == std::vector<std::string>{"train", "evaluate"});
    CHECK(contains(retrained.reused, "cluster-dec"));

    const auto stages = read_manifest(work / "manifest.json").stages.size();
    CHECK(stages == run_pipeline(changed, work).manifest.stages.size());
}

TEST_CASE("failures are recorded and a held lock blocks a run") {
    testutil::TempDir dir;
    auto config = scenario::prepare_fixture(dir / "inputs");
    const auto work = dir / "work";
    {
        WorkdirLock held(work);
        CHECK(error_kind([&] { run_pipeline(config, work); }) == ErrorKind::io);
    }
    config.sequences = dir / "inputs" / "missing.tseq";
    config.embeddings = dir / "inputs" / "missing.jsonl";
    CHECK(error_kind([&] { run_pipeline(config, work); }).has_value());
    const auto m = read_manifest(work / "manifest.json");
    REQUIRE(!m.stages.empty());
    CHECK(m.stages.back().status == "failed");
    CHECK(!m.stages.back().message.empty());
    CHECK(!std::filesystem::exists(work / ".lock"));
}

TEST_CASE("a changed review request is refused") {
    testutil::TempDir dir;
    auto config = scenario::prepare_fixture(dir / "inputs");
    const auto work = dir / "work";
    run_pipeline(config, work);
    config.experts.push_back({"expert_c", "token-c"});
    CHECK(error_kind([&] { run_pipeline(config, work); }) == ErrorKind::immutable);
}
