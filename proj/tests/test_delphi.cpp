#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "delphi_scenario.hpp"
#include "test_util.hpp"
#include "urgency/delphi.hpp"

#include <algorithm>
#include <set>

using namespace urgency;
using namespace urgency::delphi;
using testutil::error_kind;

namespace {

// n ids with DEC labels cycling 0,1,2 and K-means agreeing except on the first `disagree`.
scenario::DelphiFixture corpus(int n, int disagree) {
    scenario::DelphiFixture f;
    for (int i = 0; i < n; ++i) {
        const std::string id = "t" + std::to_string(i);
        const int d = i % 3;
        f.dec.set(id, d, Provenance::dec);
        f.kmeans.set(id, i < disagree ? (d + 1) % 3 : d, Provenance::kmeans);
        f.text[id] = "note " + std::to_string(i);
    }
    return f;
}

DelphiSession small_session() {
    const auto f = corpus(10, 1);
    const auto sample = build_review_sample(f.kmeans, f.dec, 0.3, 4);
    return create_session("s1", sample, f.text, f.kmeans, f.dec, {{"a", "tok-a"}, {"b", "tok-b"}}, 9);
}

void vote_all(DelphiSession& s, const std::string& expert, int label) {
    for (const auto& item : s.items) record_vote(s, expert, item.id, label);
}

} // namespace

TEST_CASE("review sample at corpus scale") {
    const auto f = corpus(1250, 10);
    const auto s = build_review_sample(f.kmeans, f.dec, 0.2, 77);
    CHECK(s.size() == 250);
    CHECK(s.disagreement_ids.size() == 10);
    CHECK(s.balanced_ids.size() == 240);
    std::array<int, 3> per{};
    for (const auto& id : s.balanced_ids) ++per[static_cast<std::size_t>(f.dec.at(id))];
    CHECK(per == std::array<int, 3>{80, 80, 80});
    std::set<std::string> dis(s.disagreement_ids.begin(), s.disagreement_ids.end());
    for (const auto& id : s.balanced_ids) CHECK(!dis.contains(id));
    CHECK(s.warnings.empty());
}

TEST_CASE("review sample edge cases") {
    const auto none = corpus(30, 0);
    const auto pure = build_review_sample(none.kmeans, none.dec, 0.2, 1);
    CHECK(pure.disagreement_ids.empty());
    CHECK(pure.balanced_ids.size() == 6);

    const auto all = build_review_sample(none.kmeans, none.dec, 1.0, 1);
    CHECK(all.size() == 30);

    const auto many = corpus(30, 12);
    const auto over = build_review_sample(many.kmeans, many.dec, 0.2, 1);
    CHECK(over.size() == 12);
    CHECK(over.balanced_ids.empty());
    CHECK(!over.warnings.empty());

    CHECK(build_review_sample(none.kmeans, none.dec, 0.2, 5).balanced_ids ==
          build_review_sample(none.kmeans, none.dec, 0.2, 5).balanced_ids);
    CHECK(error_kind([&] { build_review_sample(none.kmeans, none.dec, 1.5, 1); }) == ErrorKind::domain);
}

TEST_CASE("worked fusion examples") {
    for (const auto& w : scenario::worked_examples()) {
        CAPTURE(w.name);
        CHECK(scenario::fuse_single(w) == w.expected);
    }
}

TEST_CASE("all 81 vote combinations agree with the brute-force scorer") {
    const auto r = scenario::run_fusion_grid();
    CHECK(r.cases == 81);
    CHECK(r.mismatches == 0);
    CHECK(r.worst_sum_error <= 1e-12);
}

TEST_CASE("fusion ignores expert order") {
    auto s = small_session();
    int k = 0;
    for (const auto& item : s.items) {
        record_vote(s, "a", item.id, k % 3);
        record_vote(s, "b", item.id, (k * 2 + 1) % 3);
        ++k;
    }
    submit(s, "a");
    submit(s, "b");
    auto swapped = s;
    std::reverse(swapped.experts.begin(), swapped.experts.end());
    const auto x = fuse_labels(s), y = fuse_labels(swapped);
    REQUIRE(x.items.size() == y.items.size());
    for (std::size_t i = 0; i < x.items.size(); ++i) {
        CHECK(x.items[i].final_label == y.items[i].final_label);
        CHECK(x.items[i].scores == y.items[i].scores);
    }
}

TEST_CASE("draft votes, submission and immutability") {
    auto s = small_session();
    const auto first = s.items.front().id;
    record_vote(s, "a", first, 1);
    record_vote(s, "a", first, 2);
    CHECK(s.expert("a").votes.at(first) == 2);
    CHECK(error_kind([&] { submit(s, "a"); }) == ErrorKind::not_ready);
    vote_all(s, "a", 0);
    submit(s, "a");
    submit(s, "a");
    CHECK(s.expert("a").status == ExpertStatus::submitted);
    record_vote(s, "a", first, 0);
    CHECK(error_kind([&] { record_vote(s, "a", first, 1); }) == ErrorKind::immutable);
    CHECK(error_kind([&] { record_vote(s, "zed", first, 1); }) == ErrorKind::not_found);
    CHECK(error_kind([&] { record_vote(s, "b", "nope", 1); }) == ErrorKind::not_found);
    CHECK(error_kind([&] { record_vote(s, "b", first, 3); }) == ErrorKind::domain);
    CHECK(error_kind([&] { fuse_labels(s); }) == ErrorKind::not_ready);
}

TEST_CASE("expert view is blind until that expert submits") {
    auto s = small_session();
    vote_all(s, "b", 2);
    const auto before = expert_view(s, "a").dump();
    CHECK(before.find("dec_label") == std::string::npos);
    CHECK(before.find("kmeans_label") == std::string::npos);
    CHECK(before.find("tok-b") == std::string::npos);
    for (const auto& row : expert_view(s, "a")["items"]) {
        CHECK(row["draft_label"].is_null());
        CHECK(row.size() == 3);
    }
    vote_all(s, "a", 1);
    submit(s, "a");
    const auto after = expert_view(s, "a");
    CHECK(after["items"][0].contains("dec_label"));
    for (const auto& row : after["items"]) CHECK(row["draft_label"] == 1);
    // Expert b's drafts of 2 never leak into a's view.
    submit(s, "b");
    for (const auto& row : expert_view(s, "a")["items"]) CHECK(row["draft_label"] == 1);
}

TEST_CASE("queue order does not follow cluster or disagreement order") {
    const auto f = corpus(300, 20);
    const auto sample = build_review_sample(f.kmeans, f.dec, 0.5, 3);
    const auto s = create_session("q", sample, f.text, f.kmeans, f.dec, {{"a", "x"}}, 12);
    std::vector<std::string> natural = sample.disagreement_ids;
    natural.insert(natural.end(), sample.balanced_ids.begin(), sample.balanced_ids.end());
    std::vector<std::string> shown;
    for (const auto& it : s.items) shown.push_back(it.id);
    CHECK(shown != natural);
    CHECK(std::is_permutation(shown.begin(), shown.end(), natural.begin(), natural.end()));
}

TEST_CASE("finalization covers every id") {
    const auto f = corpus(10, 0);
    ReviewSample sample;
    sample.balanced_ids = {"t0", "t1", "t2"};
    auto s = create_session("fin", sample, f.text, f.kmeans, f.dec, {{"a", "x"}}, 1);
    vote_all(s, "a", 2);
    submit(s, "a");
    const auto table = finalize_labels(s);
    CHECK(table.size() == 10);
    for (const auto& e : table.entries()) CHECK(e.provenance == Provenance::delphi);
    CHECK(s.label_sources.at("t0") == "fused");
    CHECK(s.label_sources.at("t9") == "dec");
    CHECK(table.at("t9") == f.dec.at("t9"));
    // Expert 0.6 outweighs DEC 0.3 plus K-means 0.1 on t0.
    CHECK(table.at("t0") == 2);
    CHECK(s.finalized);
    CHECK(error_kind([&] { record_vote(s, "a", "t0", 2); }) == ErrorKind::immutable);

    ReviewSample empty;
    auto e = create_session("empty", empty, f.text, f.kmeans, f.dec, {{"a", "x"}}, 1);
    submit(e, "a");
    const auto dec_only = finalize_labels(e);
    for (const auto& entry : f.dec.entries()) CHECK(dec_only.at(entry.id) == entry.label);
}

TEST_CASE("session validation") {
    const auto f = corpus(6, 0);
    ReviewSample sample;
    sample.balanced_ids = {"t0"};
    CHECK(error_kind([&] { create_session("bad id!", sample, f.text, f.kmeans, f.dec, {{"a", "x"}}, 1); }) == ErrorKind::domain);
    CHECK(error_kind([&] { create_session("s", sample, f.text, f.kmeans, f.dec, {}, 1); }) == ErrorKind::domain);
    CHECK(error_kind([&] { create_session("s", sample, f.text, f.kmeans, f.dec, {{"a", "x"}, {"a", "y"}}, 1); }) ==
          ErrorKind::integrity);
    CHECK(error_kind([&] { create_session("s", sample, f.text, f.kmeans, f.dec, {{"a", "x"}, {"b", "x"}}, 1); }) ==
          ErrorKind::integrity);
}

TEST_CASE("JSON and store round trips") {
    testutil::TempDir dir;
    auto s = small_session();
    vote_all(s, "a", 1);
    submit(s, "a");
    const auto back = session_from_json(nlohmann::json::parse(to_json(s).dump()));
    CHECK(to_json(back) == to_json(s));
    CHECK(session_from_request(session_request(s)).items.size() == s.items.size());

    SessionStore store(dir / "store");
    CHECK(!store.exists("s1"));
    store.save(s);
    CHECK(store.exists("s1"));
    CHECK(to_json(store.load("s1")) == to_json(s));
    CHECK(store.list() == std::vector<std::string>{"s1"});
    CHECK(error_kind([&] { store.load("missing"); }) == ErrorKind::not_found);
    CHECK(error_kind([&] { store.load("../etc"); }) == ErrorKind::not_found);
    for (const auto& entry : std::filesystem::directory_iterator(dir / "store"))
        CHECK(entry.path().extension() == ".json");
}
