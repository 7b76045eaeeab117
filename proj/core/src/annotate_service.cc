#include "physground/annotate_service.h"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <mutex>
#include <regex>
#include <set>
#include <shared_mutex>

#include "json_codec.h"
#include "physground/errors.h"
#include "physground/kvdoc.h"
#include "physground/records_io.h"
#include "physground/rng.h"

namespace physground {

using detail::json;

std::string_view to_string(SessionState state) {
  switch (state) {
    case SessionState::active: return "active";
    case SessionState::completed: return "completed";
    case SessionState::expired: return "expired";
  }
  return "?";
}

std::vector<std::string> item_options(const ConceptSpec& concept_spec, ItemKind kind) {
  if (kind == ItemKind::preference) return {"left", "right", "equal", "unclear"};
  std::vector<std::string> out = concept_spec.labels;
  if (concept_spec.allows_other) out.emplace_back(kOtherOption);
  return out;
}

std::vector<KeyBinding> key_bindings(const std::vector<std::string>& options) {
  static constexpr std::string_view digits = "1234567890";
  std::vector<KeyBinding> out;
  std::size_t next = 0;
  for (const auto& o : options) {
    if (o == kOtherOption) {
      out.push_back({o, "o"});
    } else if (next < digits.size()) {
      out.push_back({o, std::string(1, digits[next++])});
    } else {
      throw InvalidInput("too many options to bind keys");
    }
  }
  return out;
}

namespace {

std::string join_options(const std::vector<std::string>& options) { return join(options, ", "); }

Verdict verdict_for(std::string_view option) {
  if (option == "left") return Verdict::first_higher;
  if (option == "right") return Verdict::second_higher;
  if (option == "equal") return Verdict::equal;
  return Verdict::unclear;
}

}  // namespace

Response parse_response(const ItemView& view, std::string_view option, std::string_view text) {
  const auto opt = to_lower(trim(option));
  if (std::find(view.options.begin(), view.options.end(), opt) == view.options.end())
    throw InvalidInput("invalid option '" + std::string(option) + "'; allowed: " + join_options(view.options));
  Response r;
  if (view.kind == ItemKind::preference) {
    r.verdict = verdict_for(opt);
    r.label = to_string(*r.verdict);
    return r;
  }
  if (opt == kOtherOption) {
    r.label = normalize_label(text);
    if (r.label.empty()) throw InvalidInput("option 'other' needs a label");
    r.open_ended = true;
    return r;
  }
  r.label = opt;
  return r;
}

std::string option_for(const Response& response, ItemKind kind) {
  if (kind == ItemKind::preference && response.verdict) {
    switch (*response.verdict) {
      case Verdict::first_higher: return "left";
      case Verdict::second_higher: return "right";
      case Verdict::equal: return "equal";
      case Verdict::unclear: return "unclear";
    }
  }
  return response.open_ended ? std::string(kOtherOption) : response.label;
}

// --- service ------------------------------------------------------------------

namespace {

using TimePoint = std::chrono::system_clock::time_point;

std::int64_t to_ms(TimePoint t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

struct SessionData {
  std::mutex mutex;
  std::shared_ptr<const AnnotationJob> job;
  SessionSnapshot snap;
  std::optional<Response> prefill;  // answer set aside by back
  bool backed = false;
  std::int64_t last_activity = 0;
  std::map<std::string, std::size_t> attempts;  // attempt id -> index
};

}  // namespace

struct AnnotationService::Impl {
  Options options;
  const ConceptRegistry* registry;
  mutable std::shared_mutex map_mutex;
  std::map<std::string, std::shared_ptr<const AnnotationJob>, std::less<>> jobs;
  std::map<std::string, std::shared_ptr<SessionData>, std::less<>> sessions;
  // (job, annotator) -> session id
  std::map<std::pair<std::string, std::string>, std::string> by_owner;
  std::uint64_t next_serial = 0;
  std::mutex log_mutex;
  std::ofstream log;
  bool replaying = false;

  std::int64_t now() const { return to_ms(options.clock ? options.clock() : std::chrono::system_clock::now()); }

  void append(const json& event) {
    if (replaying || options.data_dir.empty()) return;
    std::lock_guard lock(log_mutex);
    log << event.dump() << '\n';
    log.flush();
    if (!log) throw Error("cannot append to event log in " + options.data_dir);
  }

  std::shared_ptr<SessionData> find_session(std::string_view id) const {
    std::shared_lock lock(map_mutex);
    auto it = sessions.find(id);
    if (it == sessions.end()) throw NotFound("unknown session '" + std::string(id) + "'");
    return it->second;
  }

  const AnnotationJob& job_of(const SessionData& s) const { return *s.job; }

  void refresh(SessionData& s, std::int64_t t) const {
    if (s.snap.state != SessionState::active) return;
    const auto idle = std::chrono::duration_cast<std::chrono::milliseconds>(options.idle_expiry).count();
    if (t - s.last_activity > idle) s.snap.state = SessionState::expired;
  }

  void require_active(const SessionData& s) const {
    if (s.snap.state == SessionState::completed) throw SequencingError("session is completed");
    if (s.snap.state == SessionState::expired) throw SequencingError("session expired");
  }

  ItemView view(const SessionData& s, std::size_t index) const {
    const auto& job = job_of(s);
    const auto& spec = registry->get(job.concept_name());
    const auto& item = job.items().at(index);
    ItemView v;
    v.session_id = s.snap.session_id;
    v.index = index;
    v.total = job.size();
    v.concept_name = spec.name;
    v.kind = item.kind;
    v.objects = item.objects;
    if (item.kind == ItemKind::categorical) {
      ObjectRecord record{item.objects[0].instance_id, item.objects[0].category, {item.objects[0].box}, true};
      v.question = prompt_for(spec, record, true);
    } else {
      v.question = spec.question_prompt;
    }
    v.instructions = spec.instructions;
    v.options = item_options(spec, item.kind);
    v.keys = key_bindings(v.options);
    v.allows_other = item.kind == ItemKind::categorical && spec.allows_other;
    if (index + 1 == s.snap.cursor && s.snap.responses.count(index)) v.prefilled = s.snap.responses.at(index);
    if (index == s.snap.cursor && s.prefill) v.prefilled = s.prefill;
    return v;
  }

  CompletionSummary summarize(const SessionData& s) const {
    const auto& job = job_of(s);
    std::vector<Response> responses;
    for (const auto& [i, r] : s.snap.responses) responses.push_back(r);
    return {s.snap.session_id, job.id(), s.snap.annotator, score_annotator(job, responses)};
  }

  SubmitResult result_after(const SessionData& s) const {
    SubmitResult r;
    if (s.snap.state == SessionState::completed) {
      r.summary = summarize(s);
    } else {
      r.next = view(s, s.snap.cursor);
    }
    return r;
  }

  void add_job(const AnnotationJob& job) {
    if (job.id().empty()) throw InvalidInput("job has no id");
    const auto* spec = registry->find(job.concept_name());
    if (!spec) throw InvalidInput("job '" + job.id() + "' uses unknown concept '" + job.concept_name() + "'");
    for (const auto& item : job.items())
      if ((item.kind == ItemKind::preference) == spec->categorical())
        throw InvalidInput("job '" + job.id() + "' mixes item kinds for concept '" + spec->name + "'");
    const auto text = job.to_json();
    {
      std::unique_lock lock(map_mutex);
      if (auto it = jobs.find(job.id()); it != jobs.end()) {
        if (it->second->to_json() == text) return;
        throw Conflict("job '" + job.id() + "' already exists with different content");
      }
      jobs.emplace(job.id(), std::make_shared<const AnnotationJob>(job));
    }
    append({{"event", "job"}, {"job", json::parse(text)}});
  }

  SessionSnapshot create(const std::string& job_id, const std::string& annotator, std::int64_t t,
                         const std::string* replay_id) {
    if (annotator.empty()) throw InvalidInput("annotator id is empty");
    std::unique_lock lock(map_mutex);
    auto jt = jobs.find(job_id);
    if (jt == jobs.end()) throw NotFound("unknown job '" + job_id + "'");
    const auto& job = jt->second;
    if (!job->annotator().empty() && job->annotator() != annotator)
      throw Conflict("job '" + job_id + "' is assigned to another annotator");
    for (const auto& [owner, sid] : by_owner) {
      if (owner.first != job_id) continue;
      auto& existing = *sessions.at(sid);
      std::lock_guard slock(existing.mutex);
      refresh(existing, t);
      if (owner.second == annotator) {
        if (existing.snap.state != SessionState::expired) return existing.snap;
      } else if (existing.snap.state != SessionState::expired) {
        throw Conflict("job '" + job_id + "' already has a session for another annotator");
      }
    }
    std::string id;
    if (replay_id) {
      id = *replay_id;
    } else {
      do {
        const auto h = mix_seed(fnv1a(job_id + "\n" + annotator), next_serial++);
        char buf[24];
        std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(h));
        id = buf;
      } while (sessions.count(id));
    }
    auto s = std::make_shared<SessionData>();
    s->snap.session_id = id;
    s->snap.job_id = job_id;
    s->snap.annotator = annotator;
    s->job = job;
    s->snap.total = job->size();
    s->last_activity = t;
    if (job->size() == 0) s->snap.state = SessionState::completed;
    append({{"event", "create"}, {"session", id}, {"job", job_id}, {"annotator", annotator}, {"t", t}});
    sessions[id] = s;
    by_owner[{job_id, annotator}] = id;
    return s->snap;
  }

  SubmitResult submit(SessionData& s, const SubmitRequest& req, std::int64_t t) {
    refresh(s, t);
    if (!req.attempt_id.empty()) {
      if (auto it = s.attempts.find(req.attempt_id); it != s.attempts.end()) {
        if (it->second != req.index)
          throw Conflict("attempt '" + req.attempt_id + "' was used for item " + std::to_string(it->second));
        auto r = result_after(s);
        r.duplicate = true;
        return r;
      }
    }
    require_active(s);
    const auto cursor = s.snap.cursor;
    const bool append_new = req.index == cursor;
    const bool overwrite = cursor > 0 && req.index == cursor - 1;
    if (!append_new && !overwrite)
      throw SequencingError("submission for item " + std::to_string(req.index) + " but the session is at item " +
                            std::to_string(cursor));
    const auto response = parse_response(view(s, req.index), req.option, req.text);
    json ev{{"event", "submit"}, {"session", s.snap.session_id}, {"index", req.index}, {"option", req.option},
            {"t", t}};
    if (!req.text.empty()) ev["text"] = req.text;
    if (!req.attempt_id.empty()) ev["attempt"] = req.attempt_id;
    append(ev);

    s.snap.responses[req.index] = response;
    s.snap.answered_at[req.index] = t;
    if (append_new) {
      ++s.snap.cursor;
      s.prefill.reset();
      s.backed = false;
    }
    if (!req.attempt_id.empty()) s.attempts[req.attempt_id] = req.index;
    s.last_activity = t;
    if (s.snap.cursor == s.snap.total) s.snap.state = SessionState::completed;
    return result_after(s);
  }

  BackResult back(SessionData& s, std::int64_t t) {
    refresh(s, t);
    require_active(s);
    if (s.snap.cursor == 0) return {view(s, 0), "already at the first item"};
    if (s.backed) return {view(s, s.snap.cursor), "only one step back is available"};
    append({{"event", "back"}, {"session", s.snap.session_id}, {"t", t}});
    const auto index = s.snap.cursor - 1;
    s.prefill = s.snap.responses.at(index);
    s.snap.responses.erase(index);
    s.snap.answered_at.erase(index);
    s.snap.cursor = index;
    s.backed = true;
    s.last_activity = t;
    return {view(s, index), std::nullopt};
  }

  void replay_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) return;
    replaying = true;
    std::string line;
    int number = 0;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    for (const auto& text : lines) {
      ++number;
      if (trim(text).empty()) continue;
      json ev;
      try {
        ev = json::parse(text);
      } catch (const json::parse_error&) {
        if (number == static_cast<int>(lines.size())) {
          std::clog << "warning: " << path << ":" << number << ": ignoring truncated final event\n";
          break;
        }
        replaying = false;
        throw InvalidInput(path + ":" + std::to_string(number) + ": corrupt event");
      }
      try {
        const auto kind = ev.at("event").get<std::string>();
        if (kind == "job") {
          add_job(AnnotationJob::from_json(ev.at("job").dump(), path));
        } else if (kind == "create") {
          const auto id = ev.at("session").get<std::string>();
          create(ev.at("job").get<std::string>(), ev.at("annotator").get<std::string>(), ev.at("t").get<std::int64_t>(),
                 &id);
        } else if (kind == "submit") {
          SubmitRequest req{ev.at("index").get<std::size_t>(), ev.at("option").get<std::string>(),
                            ev.value("text", ""), ev.value("attempt", "")};
          auto s = find_session(ev.at("session").get<std::string>());
          submit(*s, req, ev.at("t").get<std::int64_t>());
        } else if (kind == "back") {
          auto s = find_session(ev.at("session").get<std::string>());
          back(*s, ev.at("t").get<std::int64_t>());
        } else {
          throw InvalidInput("unknown event '" + kind + "'");
        }
      } catch (const json::exception& e) {
        replaying = false;
        throw InvalidInput(path + ":" + std::to_string(number) + ": " + e.what());
      } catch (const Error& e) {
        replaying = false;
        throw InvalidInput(path + ":" + std::to_string(number) + ": " + e.what());
      }
    }
    replaying = false;
  }
};

AnnotationService::AnnotationService() : AnnotationService(Options{}) {}

AnnotationService::AnnotationService(Options options) : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  impl_->registry = impl_->options.registry ? impl_->options.registry : &ConceptRegistry::shipped();
  if (!impl_->options.data_dir.empty()) {
    const auto path = impl_->options.data_dir + "/events.log";
    impl_->replay_file(path);
    impl_->log.open(path, std::ios::app);
    if (!impl_->log) throw Error("cannot open event log " + path);
  }
}

AnnotationService::~AnnotationService() = default;

void AnnotationService::add_job(const AnnotationJob& job) { impl_->add_job(job); }

std::vector<std::string> AnnotationService::job_ids() const {
  std::shared_lock lock(impl_->map_mutex);
  std::vector<std::string> out;
  for (const auto& [id, j] : impl_->jobs) out.push_back(id);
  return out;
}

const AnnotationJob& AnnotationService::job(std::string_view job_id) const {
  std::shared_lock lock(impl_->map_mutex);
  auto it = impl_->jobs.find(job_id);
  if (it == impl_->jobs.end()) throw NotFound("unknown job '" + std::string(job_id) + "'");
  return *it->second;
}

SessionSnapshot AnnotationService::create_session(const std::string& job_id, const std::string& annotator) {
  return impl_->create(job_id, annotator, impl_->now(), nullptr);
}

SessionSnapshot AnnotationService::session(std::string_view session_id) {
  auto s = impl_->find_session(session_id);
  std::lock_guard lock(s->mutex);
  impl_->refresh(*s, impl_->now());
  return s->snap;
}

ItemView AnnotationService::current_item(std::string_view session_id) {
  auto s = impl_->find_session(session_id);
  std::lock_guard lock(s->mutex);
  impl_->refresh(*s, impl_->now());
  impl_->require_active(*s);
  return impl_->view(*s, s->snap.cursor);
}

SubmitResult AnnotationService::submit(std::string_view session_id, const SubmitRequest& request) {
  auto s = impl_->find_session(session_id);
  std::lock_guard lock(s->mutex);
  return impl_->submit(*s, request, impl_->now());
}

BackResult AnnotationService::back(std::string_view session_id) {
  auto s = impl_->find_session(session_id);
  std::lock_guard lock(s->mutex);
  return impl_->back(*s, impl_->now());
}

CompletionSummary AnnotationService::summary(std::string_view session_id) {
  auto s = impl_->find_session(session_id);
  std::lock_guard lock(s->mutex);
  if (s->snap.state != SessionState::completed) throw SequencingError("session is not completed");
  return impl_->summarize(*s);
}

AnnotationSet AnnotationService::export_kept() {
  std::vector<std::shared_ptr<SessionData>> all;
  {
    std::shared_lock lock(impl_->map_mutex);
    for (const auto& [id, s] : impl_->sessions) all.push_back(s);
  }
  AnnotationSet out;
  for (const auto& s : all) {
    std::lock_guard lock(s->mutex);
    if (s->snap.state != SessionState::completed) continue;
    const auto summary = impl_->summarize(*s);
    if (!summary.score.keep) continue;
    std::vector<Response> responses;
    for (const auto& [i, r] : s->snap.responses) responses.push_back(r);
    out.append(job_annotations(impl_->job_of(*s), responses, s->snap.annotator));
  }
  return out;
}

std::size_t AnnotationService::session_count() const {
  std::shared_lock lock(impl_->map_mutex);
  return impl_->sessions.size();
}

// --- wire format ----------------------------------------------------------------

namespace {

json response_json(const Response& r, ItemKind kind) {
  json j{{"option", option_for(r, kind)}, {"label", r.label}};
  if (r.open_ended) j["open_ended"] = true;
  return j;
}

json view_json(const ItemView& v) {
  json objects = json::array();
  for (const auto& o : v.objects)
    objects.push_back({{"instance_id", o.instance_id}, {"category", o.category}, {"box", detail::to_json(o.box)}});
  json keys = json::array();
  for (const auto& k : v.keys) keys.push_back({{"option", k.option}, {"key", k.key}});
  json j{{"session_id", v.session_id},
         {"index", v.index},
         {"total", v.total},
         {"concept", v.concept_name},
         {"kind", v.kind == ItemKind::categorical ? "categorical" : "preference"},
         {"objects", objects},
         {"question", v.question},
         {"instructions", v.instructions},
         {"options", v.options},
         {"keys", keys},
         {"back_key", v.back_key},
         {"allows_other", v.allows_other}};
  if (v.prefilled) j["prefilled"] = response_json(*v.prefilled, v.kind);
  return j;
}

json session_json(const SessionSnapshot& s) {
  return {{"session_id", s.session_id}, {"job_id", s.job_id},   {"annotator", s.annotator},
          {"cursor", s.cursor},         {"total", s.total},     {"state", to_string(s.state)},
          {"answered", s.responses.size()}};
}

json summary_json(const CompletionSummary& s) {
  return {{"session_id", s.session_id}, {"job_id", s.job_id},         {"annotator", s.annotator},
          {"checks", s.score.checks},   {"correct", s.score.correct}, {"accuracy", s.score.accuracy},
          {"keep", s.score.keep}};
}

HttpReply reply(int status, const json& j) { return {status, "application/json", j.dump()}; }

HttpReply error_reply(int status, std::string_view kind, std::string_view message) {
  return reply(status, {{"error", kind}, {"message", message}});
}

json parse_body(std::string_view body) {
  if (trim(body).empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("request body is not JSON: ") + e.what());
  }
}

std::string body_string(const json& j, const char* key, bool required = true) {
  if (!j.contains(key)) {
    if (required) throw InvalidInput(std::string("missing field '") + key + "'");
    return {};
  }
  if (!j[key].is_string()) throw InvalidInput(std::string("field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

HttpReply route(AnnotationService& service, std::string_view method, std::string_view path, std::string_view body) {
  static const std::regex session_path(R"(^/sessions/([A-Za-z0-9_-]+)(?:/(item|submit|back|summary))?$)");
  const std::string p(path.substr(0, path.find('?')));
  if (p == "/health") {
    if (method != "GET") return error_reply(405, "method", "use GET");
    return reply(200, {{"status", "ok"}});
  }
  if (p == "/sessions") {
    if (method != "POST") return error_reply(405, "method", "use POST");
    const auto j = parse_body(body);
    return reply(200, session_json(service.create_session(body_string(j, "job_id"), body_string(j, "annotator"))));
  }
  if (p == "/admin/jobs") {
    if (method == "GET") return reply(200, {{"jobs", service.job_ids()}});
    if (method != "POST") return error_reply(405, "method", "use GET or POST");
    const auto j = parse_body(body);
    std::vector<std::string> added;
    auto add = [&](const json& doc) {
      auto job = AnnotationJob::from_json(doc.dump(), "request");
      service.add_job(job);
      added.push_back(job.id());
    };
    if (j.contains("jobs")) {
      if (!j["jobs"].is_array()) throw InvalidInput("'jobs' must be an array");
      for (const auto& doc : j["jobs"]) add(doc);
    } else {
      add(j);
    }
    return reply(200, {{"added", added}});
  }
  if (p == "/admin/export") {
    if (method != "GET") return error_reply(405, "method", "use GET");
    return {200, "application/x-ndjson", write_annotations(service.export_kept())};
  }
  std::smatch m;
  if (std::regex_match(p, m, session_path)) {
    const auto id = m[1].str();
    const auto action = m[2].str();
    const bool get = method == "GET";
    if (action.empty() && get) return reply(200, session_json(service.session(id)));
    if (action == "item" && get) return reply(200, view_json(service.current_item(id)));
    if (action == "summary" && get) return reply(200, summary_json(service.summary(id)));
    if (action == "back" && method == "POST") {
      const auto r = service.back(id);
      json j{{"item", view_json(r.view)}};
      if (r.notice) j["notice"] = *r.notice;
      return reply(200, j);
    }
    if (action == "submit" && method == "POST") {
      const auto j = parse_body(body);
      if (!j.contains("index") || !j["index"].is_number_unsigned()) throw InvalidInput("missing or invalid 'index'");
      SubmitRequest req{j["index"].get<std::size_t>(), body_string(j, "option"), body_string(j, "text", false),
                        body_string(j, "attempt_id", false)};
      const auto r = service.submit(id, req);
      json out{{"duplicate", r.duplicate}};
      if (r.next) out["next"] = view_json(*r.next);
      if (r.summary) out["summary"] = summary_json(*r.summary);
      return reply(200, out);
    }
    return error_reply(405, "method", "unsupported method for " + p);
  }
  return error_reply(404, "not_found", "no route for " + p);
}

}  // namespace

std::string to_json(const ItemView& view) { return view_json(view).dump(); }
std::string to_json(const SessionSnapshot& session) { return session_json(session).dump(); }
std::string to_json(const CompletionSummary& summary) { return summary_json(summary).dump(); }

HttpReply handle_http(AnnotationService& service, std::string_view method, std::string_view path,
                      std::string_view body) {
  try {
    return route(service, method, path, body);
  } catch (const InvalidInput& e) {
    return error_reply(400, "invalid_input", e.what());
  } catch (const NotFound& e) {
    return error_reply(404, "not_found", e.what());
  } catch (const Conflict& e) {
    return error_reply(409, "conflict", e.what());
  } catch (const SequencingError& e) {
    return error_reply(422, "sequencing", e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

}  // namespace physground
