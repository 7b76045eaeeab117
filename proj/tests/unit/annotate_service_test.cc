#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "fixtures.h"
#include "httplib.h"
#include "json.hpp"
#include "physground/annotate_service.h"
#include "physground/errors.h"
#include "physground/records_io.h"
#include "physground/rng.h"

namespace physground {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using testing::correct_response;
using testing::synthetic_job;
using testing::wrong_response;

struct FakeClock {
  std::shared_ptr<std::chrono::system_clock::time_point> now =
      std::make_shared<std::chrono::system_clock::time_point>(std::chrono::system_clock::from_time_t(1700000000));
  AnnotationService::Clock fn() const {
    auto p = now;
    return [p] { return *p; };
  }
  void advance(std::chrono::seconds s) const { *now += s; }
};

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> serial{0};
    path = fs::temp_directory_path() /
           ("physground_svc_" + std::to_string(::getpid()) + "_" + std::to_string(serial++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string option_of(const AnnotationJob& job, const Response& r) {
  return option_for(r, job.items().front().kind);
}

SubmitRequest answer(const AnnotationJob& job, std::size_t index, bool pass) {
  const auto r = job.is_check(index) ? (pass ? correct_response(job, index) : wrong_response(job, index))
                                     : correct_response(job, job.check_positions().front());
  return {index, option_of(job, r), {}, {}};
}

TEST(Options, LabelsAndKeys) {
  const auto& reg = ConceptRegistry::shipped();
  const auto opts = item_options(reg.get("material"), ItemKind::categorical);
  EXPECT_EQ(opts.back(), "other");
  const auto keys = key_bindings(opts);
  EXPECT_EQ(keys.front(), (KeyBinding{opts.front(), "1"}));
  EXPECT_EQ(keys.back(), (KeyBinding{"other", "o"}));
  EXPECT_EQ(item_options(reg.get("mass"), ItemKind::preference),
            (std::vector<std::string>{"left", "right", "equal", "unclear"}));
  EXPECT_EQ(key_bindings({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"})[9].key, "0");
}

TEST(Service, ParsesOptions) {
  AnnotationService svc;
  const auto pref = synthetic_job("p", "mass", 1);
  const auto cat = synthetic_job("c", "material", 1);
  svc.add_job(pref);
  svc.add_job(cat);
  const auto sp = svc.create_session("p", "w1");
  const auto sc = svc.create_session("c", "w1");
  const auto pv = svc.current_item(sp.session_id);
  EXPECT_EQ(parse_response(pv, "right", "").verdict, Verdict::second_higher);
  EXPECT_EQ(parse_response(pv, "left", "").verdict, Verdict::first_higher);
  const auto cv = svc.current_item(sc.session_id);
  const auto other = parse_response(cv, "other", " Rubber ");
  EXPECT_EQ(other.label, "rubber");
  EXPECT_TRUE(other.open_ended);
  EXPECT_THROW(parse_response(cv, "other", ""), InvalidInput);
  EXPECT_THROW(parse_response(cv, "left", ""), InvalidInput);
  try {
    parse_response(pv, "sideways", "");
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("unclear"), std::string::npos);
  }
  EXPECT_EQ(cv.question, prompt_for(ConceptRegistry::shipped().get("material"), make_object("x", "toy", {cv.objects[0].box}), true));
  EXPECT_EQ(cv.total, 250u);
}

TEST(Service, IdempotencyAndConflicts) {
  AnnotationService svc;
  const auto job = synthetic_job("j", "material", 1);
  svc.add_job(job);
  svc.add_job(job);
  EXPECT_THROW(svc.add_job(synthetic_job("j", "material", 2)), Conflict);
  EXPECT_THROW(svc.create_session("missing", "w1"), NotFound);
  const auto a = svc.create_session("j", "w1");
  EXPECT_EQ(svc.create_session("j", "w1").session_id, a.session_id);
  EXPECT_THROW(svc.create_session("j", "w2"), Conflict);
  EXPECT_EQ(svc.session_count(), 1u);
  EXPECT_THROW(svc.session("nope"), NotFound);

  const auto assigned = AnnotationJob("k", "material", job.items(), [&] {
    std::vector<std::optional<std::string>> t;
    for (std::size_t i = 0; i < job.size(); ++i) t.push_back(job.truth(i));
    return t;
  }(), "w7");
  svc.add_job(assigned);
  EXPECT_THROW(svc.create_session("k", "w1"), Conflict);
  EXPECT_NO_THROW(svc.create_session("k", "w7"));
}

TEST(Service, SequencingRules) {
  AnnotationService svc;
  const auto job = synthetic_job("j", "mass", 1);
  svc.add_job(job);
  const auto id = svc.create_session("j", "w1").session_id;
  EXPECT_THROW(svc.submit(id, {1, "left", {}, {}}), SequencingError);
  EXPECT_EQ(svc.back(id).notice.has_value(), true);
  svc.submit(id, {0, "left", {}, {}});
  svc.submit(id, {1, "left", {}, {}});
  svc.submit(id, {1, "right", {}, {}});  // overwrite the last answer
  EXPECT_EQ(svc.session(id).responses.at(1).verdict, Verdict::second_higher);
  EXPECT_THROW(svc.submit(id, {0, "left", {}, {}}), SequencingError);
  const auto b = svc.back(id);
  EXPECT_FALSE(b.notice);
  EXPECT_EQ(b.view.index, 1u);
  ASSERT_TRUE(b.view.prefilled);
  EXPECT_EQ(b.view.prefilled->verdict, Verdict::second_higher);
  EXPECT_TRUE(svc.back(id).notice);
  EXPECT_EQ(svc.session(id).cursor, 1u);
  EXPECT_THROW(svc.summary(id), SequencingError);
}

TEST(Service, AttemptIdsDeduplicate) {
  AnnotationService svc;
  svc.add_job(synthetic_job("j", "mass", 1));
  const auto id = svc.create_session("j", "w1").session_id;
  EXPECT_FALSE(svc.submit(id, {0, "left", {}, "a0"}).duplicate);
  const auto again = svc.submit(id, {0, "left", {}, "a0"});
  EXPECT_TRUE(again.duplicate);
  EXPECT_EQ(svc.session(id).cursor, 1u);
  EXPECT_THROW(svc.submit(id, {1, "left", {}, "a0"}), Conflict);
}

// Random walks over submit / overwrite / back / bad requests against a
// reference model of the stored answers.
TEST(Service, RandomWalkKeepsCursorInvariant) {
  AnnotationService svc;
  DeterministicRng rng(2024);
  int serial = 0;
  int completions = 0;
  std::string id;
  AnnotationJob job;
  std::vector<std::string> model;
  std::optional<std::string> set_aside;
  bool backed = false;
  auto fresh = [&] {
    job = synthetic_job("walk" + std::to_string(serial), serial % 2 ? "mass" : "material", serial);
    ++serial;
    svc.add_job(job);
    id = svc.create_session(job.id(), "w").session_id;
    model.clear();
    set_aside.reset();
    backed = false;
  };
  fresh();
  const auto& reg = ConceptRegistry::shipped();
  for (int step = 0; step < 10000; ++step) {
    const auto kind = job.items()[0].kind;
    auto plain = item_options(reg.get(job.concept_name()), kind);
    plain.erase(std::remove(plain.begin(), plain.end(), std::string(kOtherOption)), plain.end());
    const auto pick = plain[rng.below(plain.size())];
    const auto cursor = model.size();
    const auto action = rng.below(20);
    if (action < 11) {
      svc.submit(id, {cursor, pick, {}, {}});
      model.push_back(pick);
      set_aside.reset();
      backed = false;
    } else if (action < 13) {
      if (cursor == 0) {
        EXPECT_THROW(svc.submit(id, {cursor + 1, pick, {}, {}}), SequencingError);
      } else {
        svc.submit(id, {cursor - 1, pick, {}, {}});
        model.back() = pick;
      }
    } else if (action < 17) {
      const auto r = svc.back(id);
      if (cursor == 0 || backed) {
        EXPECT_TRUE(r.notice);
      } else {
        EXPECT_FALSE(r.notice);
        set_aside = model.back();
        model.pop_back();
        backed = true;
      }
    } else if (action < 19) {
      const std::size_t bad = rng.bernoulli(0.5) ? cursor + 1 + rng.below(3) : (cursor >= 2 ? rng.below(cursor - 1) : cursor + 5);
      EXPECT_THROW(svc.submit(id, {bad, pick, {}, {}}), SequencingError);
    } else {
      EXPECT_THROW(svc.submit(id, {cursor, "not-an-option", {}, {}}), InvalidInput);
    }

    const auto snap = svc.session(id);
    ASSERT_EQ(snap.cursor, snap.responses.size());
    ASSERT_EQ(snap.cursor, model.size());
    for (std::size_t i = 0; i < model.size(); ++i) ASSERT_EQ(option_for(snap.responses.at(i), kind), model[i]);
    if (snap.state == SessionState::completed) {
      ASSERT_EQ(model.size(), job.size());
      EXPECT_THROW(svc.current_item(id), SequencingError);
      EXPECT_THROW(svc.back(id), SequencingError);
      EXPECT_EQ(svc.summary(id).score.checks, kChecksPerJob);
      ++completions;
      fresh();
      continue;
    }
    const auto view = svc.current_item(id);
    ASSERT_EQ(view.index, model.size());
    if (set_aside) {
      ASSERT_TRUE(view.prefilled);
      EXPECT_EQ(option_for(*view.prefilled, kind), *set_aside);
    }
  }
  EXPECT_GE(completions, 5);
}

TEST(Service, CompletionScoresChecks) {
  AnnotationService svc;
  const auto job = synthetic_job("j", "material", 4);
  svc.add_job(job);
  const auto id = svc.create_session("j", "w1").session_id;
  int checks = 0;
  SubmitResult last;
  for (std::size_t i = 0; i < job.size(); ++i) {
    const bool pass = !job.is_check(i) || checks++ < 20;
    last = svc.submit(id, answer(job, i, pass));
  }
  ASSERT_TRUE(last.summary);
  EXPECT_FALSE(last.next);
  EXPECT_DOUBLE_EQ(last.summary->score.accuracy, 0.80);
  EXPECT_TRUE(last.summary->score.keep);
  EXPECT_EQ(svc.export_kept().categorical.size(), kJobSize - kChecksPerJob);

  AnnotationService strict;
  strict.add_job(job);
  const auto id2 = strict.create_session("j", "w2").session_id;
  checks = 0;
  for (std::size_t i = 0; i < job.size(); ++i) strict.submit(id2, answer(job, i, !job.is_check(i) || checks++ < 19));
  EXPECT_FALSE(strict.summary(id2).score.keep);
  EXPECT_TRUE(strict.export_kept().categorical.empty());
}

TEST(Service, ChecksLookLikeOrdinaryItems) {
  const auto job = synthetic_job("j", "mass", 8);
  std::vector<std::optional<std::string>> none(job.size());
  const AnnotationJob blind(job.id(), job.concept_name(), job.items(), none);
  AnnotationService a, b;
  a.add_job(job);
  b.add_job(blind);
  const auto ia = a.create_session("j", "w").session_id;
  const auto ib = b.create_session("j", "w").session_id;
  ASSERT_EQ(ia, ib);
  for (std::size_t i = 0; i < job.size(); ++i) {
    const auto va = a.current_item(ia);
    EXPECT_EQ(va, b.current_item(ib));
    const auto text = to_json(va);
    EXPECT_EQ(text.find("truth"), std::string::npos);
    EXPECT_EQ(text.find("check"), std::string::npos);
    EXPECT_EQ(handle_http(a, "GET", "/sessions/" + ia + "/item", "").body, text);
    const SubmitRequest req{i, "left", {}, {}};
    const auto ra = a.submit(ia, req);
    const auto rb = b.submit(ib, req);
    EXPECT_EQ(ra.next, rb.next);
    EXPECT_EQ(to_json(a.session(ia)), to_json(b.session(ib)));
  }
  EXPECT_EQ(to_json(a.summary(ia)).find("truth"), std::string::npos);
}

TEST(Service, IdleSessionsExpire) {
  FakeClock clock;
  AnnotationService svc({{}, std::chrono::hours(1), clock.fn(), nullptr});
  svc.add_job(synthetic_job("j", "mass", 1));
  const auto id = svc.create_session("j", "w1").session_id;
  svc.submit(id, {0, "left", {}, {}});
  clock.advance(std::chrono::minutes(59));
  svc.submit(id, {1, "left", {}, {}});
  clock.advance(std::chrono::minutes(61));
  EXPECT_EQ(svc.session(id).state, SessionState::expired);
  EXPECT_THROW(svc.current_item(id), SequencingError);
  EXPECT_THROW(svc.submit(id, {2, "left", {}, {}}), SequencingError);
  // The job can be picked up again, by anyone.
  const auto next = svc.create_session("j", "w2");
  EXPECT_NE(next.session_id, id);
  EXPECT_EQ(next.cursor, 0u);
}

TEST(Service, RestartResumesFromLog) {
  TempDir dir;
  FakeClock clock;
  const auto job = synthetic_job("j", "material", 6);
  const auto pref = synthetic_job("p", "mass", 6);
  SessionSnapshot before, before_pref;
  ItemView view_before;
  {
    AnnotationService svc({dir.path.string(), std::chrono::hours(24), clock.fn(), nullptr});
    svc.add_job(job);
    svc.add_job(pref);
    const auto id = svc.create_session("j", "w1").session_id;
    DeterministicRng rng(5);
    for (std::size_t i = 0; i < 40; ++i) {
      clock.advance(std::chrono::seconds(1 + rng.below(5)));
      svc.submit(id, {i, i % 7 == 3 ? "other" : answer(job, i, true).option, i % 7 == 3 ? "Cork" : "", "t" + std::to_string(i)});
    }
    svc.back(id);
    view_before = svc.current_item(id);
    before = svc.session(id);
    const auto pid = svc.create_session("p", "w2").session_id;
    for (std::size_t i = 0; i < 10; ++i) svc.submit(pid, {i, "right", {}, {}});
    before_pref = svc.session(pid);
  }
  AnnotationService svc({dir.path.string(), std::chrono::hours(24), clock.fn(), nullptr});
  EXPECT_EQ(svc.job_ids(), (std::vector<std::string>{"j", "p"}));
  EXPECT_EQ(svc.session(before.session_id), before);
  EXPECT_EQ(svc.session(before_pref.session_id), before_pref);
  EXPECT_EQ(svc.current_item(before.session_id), view_before);
  EXPECT_EQ(svc.session(before.session_id).responses.at(3).label, "cork");
  EXPECT_TRUE(svc.submit(before.session_id, {38, "other", "ignored", "t38"}).duplicate);
  EXPECT_EQ(svc.create_session("j", "w1").session_id, before.session_id);
  svc.submit(before.session_id, {39, answer(job, 39, true).option, {}, {}});
  EXPECT_EQ(svc.session(before.session_id).cursor, 40u);
}

TEST(Service, TruncatedLogTailIsTolerated) {
  TempDir dir;
  std::string id;
  {
    AnnotationService svc({dir.path.string()});
    svc.add_job(synthetic_job("j", "mass", 6));
    id = svc.create_session("j", "w1").session_id;
    svc.submit(id, {0, "left", {}, {}});
  }
  {
    std::ofstream out(dir.path / "events.log", std::ios::app);
    out << R"({"event": "submit", "sess)";
  }
  AnnotationService svc({dir.path.string()});
  EXPECT_EQ(svc.session(id).cursor, 1u);
}

json call(AnnotationService& svc, const std::string& method, const std::string& path, const json& body,
          int status = 200) {
  const auto r = handle_http(svc, method, path, body.is_null() ? "" : body.dump());
  EXPECT_EQ(r.status, status) << method << " " << path << ": " << r.body;
  return r.content_type == "application/json" ? json::parse(r.body) : json(r.body);
}

TEST(Http, RoutesAndErrors) {
  AnnotationService svc;
  const auto job = synthetic_job("j", "mass", 3);
  EXPECT_EQ(call(svc, "GET", "/health", nullptr)["status"], "ok");
  EXPECT_EQ(call(svc, "POST", "/admin/jobs", json::parse(job.to_json()))["added"], json::array({"j"}));
  EXPECT_EQ(call(svc, "POST", "/admin/jobs", {{"jobs", {json::parse(job.to_json())}}})["added"], json::array({"j"}));
  EXPECT_EQ(call(svc, "GET", "/admin/jobs", nullptr)["jobs"], json::array({"j"}));
  const auto s = call(svc, "POST", "/sessions", {{"job_id", "j"}, {"annotator", "w1"}});
  const std::string id = s["session_id"];
  EXPECT_EQ(s["cursor"], 0);
  EXPECT_EQ(s["state"], "active");
  const auto item = call(svc, "GET", "/sessions/" + id + "/item", nullptr);
  EXPECT_EQ(item["index"], 0);
  EXPECT_EQ(item["kind"], "preference");
  EXPECT_EQ(item["objects"].size(), 2u);
  const auto sub = call(svc, "POST", "/sessions/" + id + "/submit", {{"index", 0}, {"option", "right"}});
  EXPECT_EQ(sub["duplicate"], false);
  EXPECT_EQ(sub["next"]["index"], 1);
  const auto back = call(svc, "POST", "/sessions/" + id + "/back", nullptr);
  EXPECT_EQ(back["item"]["prefilled"]["option"], "right");
  EXPECT_TRUE(call(svc, "POST", "/sessions/" + id + "/back", nullptr).contains("notice"));

  call(svc, "POST", "/sessions", {{"job_id", "j"}, {"annotator", "w2"}}, 409);
  call(svc, "POST", "/sessions", {{"job_id", "zz"}, {"annotator", "w2"}}, 404);
  call(svc, "POST", "/sessions", {{"job_id", "j"}}, 400);
  call(svc, "GET", "/sessions/nope", nullptr, 404);
  call(svc, "POST", "/sessions/" + id + "/submit", {{"index", 5}, {"option", "left"}}, 422);
  call(svc, "POST", "/sessions/" + id + "/submit", {{"index", 0}, {"option", "up"}}, 400);
  call(svc, "GET", "/sessions/" + id + "/summary", nullptr, 422);
  call(svc, "DELETE", "/health", nullptr, 405);
  EXPECT_EQ(handle_http(svc, "POST", "/sessions", "{not json").status, 400);
  EXPECT_EQ(handle_http(svc, "GET", "/elsewhere", "").status, 404);

  for (std::size_t i = 0; i < job.size(); ++i) {
    const auto r = call(svc, "POST", "/sessions/" + id + "/submit",
                        {{"index", i}, {"option", answer(job, i, true).option}, {"attempt_id", "a" + std::to_string(i)}});
    if (i + 1 == job.size()) {
      EXPECT_EQ(r["summary"]["keep"], true);
      EXPECT_EQ(r["summary"]["checks"], 25);
    }
  }
  EXPECT_DOUBLE_EQ(call(svc, "GET", "/sessions/" + id + "/summary", nullptr)["accuracy"].get<double>(), 1.0);
  EXPECT_EQ(call(svc, "GET", "/sessions/" + id, nullptr)["state"], "completed");
  const auto exported = handle_http(svc, "GET", "/admin/export", "");
  EXPECT_EQ(exported.status, 200);
  EXPECT_EQ(read_annotations(exported.body).preference.size(), kJobSize - kChecksPerJob);
}

TEST(Http, ServedOverSocket) {
  AnnotationService svc;
  svc.add_job(synthetic_job("j", "mass", 3));
  AnnotationServer server(svc, {"127.0.0.1", 0, {}});
  const int port = server.bind();
  ASSERT_GT(port, 0);
  std::thread t([&] { server.run(); });
  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  auto created = client.Post("/sessions", R"({"job_id": "j", "annotator": "w1"})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 200);
  const std::string id = json::parse(created->body)["session_id"];
  auto item = client.Get(("/sessions/" + id + "/item").c_str());
  ASSERT_TRUE(item);
  EXPECT_EQ(json::parse(item->body)["index"], 0);
  auto bad = client.Post(("/sessions/" + id + "/submit").c_str(), R"({"index": 3, "option": "left"})",
                         "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 422);
  server.stop();
  t.join();
}

TEST(Http, ConcurrentSessions) {
  AnnotationService svc;
  std::vector<std::thread> threads;
  for (int w = 0; w < 4; ++w) svc.add_job(synthetic_job("c" + std::to_string(w), "mass", w));
  for (int w = 0; w < 4; ++w) {
    threads.emplace_back([&svc, w] {
      const auto id = svc.create_session("c" + std::to_string(w), "w" + std::to_string(w)).session_id;
      for (std::size_t i = 0; i < kJobSize; ++i) {
        svc.submit(id, {i, "left", {}, {}});
        if (i % 10 == 0) svc.export_kept();
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(svc.export_kept().preference.size(), 4 * (kJobSize - kChecksPerJob));
}

}  // namespace
}  // namespace physground
