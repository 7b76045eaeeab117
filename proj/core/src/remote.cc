#include "physground/remote.h"

#include <regex>
#include <thread>

#include "httplib.h"
#include "json_codec.h"
#include "physground/errors.h"

namespace physground {

using detail::json;

namespace {

struct Target {
  std::string origin;
  std::string path;
};

Target parse_url(const std::string& url) {
  static const std::regex re(R"(^(http://[^/\s]+)(/\S*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) {
    if (url.rfind("https://", 0) == 0) throw InvalidInput("https endpoints are not supported: " + url);
    throw InvalidInput("endpoint must look like http://host[:port][/path], got '" + url + "'");
  }
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

json parse_reply(const std::string& body, const std::string& url) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw TransportError(url + ": reply is not a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw TransportError(url + ": reply is not JSON: " + e.what());
  }
}

void check_refusal(const json& j, const std::string& url) {
  if (j.contains("refusal")) {
    const auto& r = j["refusal"];
    throw ModelRefusal(url + ": model refused: " + (r.is_string() ? r.get<std::string>() : r.dump()));
  }
}

}  // namespace

std::string post_json(const RemoteConfig& config, const std::string& body) {
  const auto target = parse_url(config.url);
  if (config.retries < 0) throw InvalidInput("retries must be >= 0");
  std::string last_error;
  for (int attempt = 0; attempt <= config.retries; ++attempt) {
    httplib::Client client(target.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    auto res = client.Post(target.path, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw TransportError(config.url + ": HTTP " + std::to_string(res->status) + ": " + res->body);
    return res->body;
  }
  throw TransportError(config.url + ": " + last_error + " after " + std::to_string(config.retries + 1) +
                       " attempt(s)");
}

RemoteOracle::RemoteOracle(RemoteConfig config) : config_(std::move(config)), model_(config_.model) {
  parse_url(config_.url);
}

AnswerDistribution RemoteOracle::query(const OracleRequest& request) {
  if (request.prompt.empty()) throw InvalidInput("oracle prompt is empty");
  json body{{"object", request.object}, {"prompt", answer_prompt_template(strip_answer_template(request.prompt))}};
  if (request.box) {
    body["image_ref"] = request.box->image_ref;
    const auto& r = request.box->rect;
    body["bbox"] = {r.x, r.y, r.width, r.height};
  }
  if (!request.candidates.empty()) body["candidates"] = request.candidates;
  const auto j = parse_reply(post_json(config_, body.dump()), config_.url);
  check_refusal(j, config_.url);
  if (!j.contains("answers") || !j["answers"].is_array())
    throw TransportError(config_.url + ": reply has no 'answers' list");
  std::vector<AnswerEntry> entries;
  try {
    for (const auto& a : j["answers"]) entries.push_back({a.at("answer").get<std::string>(), a.at("probability").get<double>()});
  } catch (const json::exception& e) {
    throw TransportError(config_.url + ": malformed answer entry: " + e.what());
  }
  if (entries.empty()) throw ModelRefusal(config_.url + ": model returned no answers");
  AnswerDistribution dist;
  try {
    dist = AnswerDistribution(std::move(entries), j.value("normalized", false));
  } catch (const InvalidInput& e) {
    throw TransportError(config_.url + ": " + e.what());
  }
  std::lock_guard lock(mutex_);
  if (j.contains("model") && j["model"].is_string()) model_ = j["model"].get<std::string>();
  latency_ms_ = j.contains("latency_ms") && j["latency_ms"].is_number() ? j["latency_ms"].get<double>() : -1;
  return dist;
}

std::string RemoteOracle::model_id() const {
  std::lock_guard lock(mutex_);
  return model_.empty() ? "remote" : model_;
}

double RemoteOracle::last_latency_ms() const {
  std::lock_guard lock(mutex_);
  return latency_ms_;
}

RemoteChat::RemoteChat(RemoteConfig config, double temperature)
    : config_(std::move(config)), temperature_(temperature), model_(config_.model) {
  parse_url(config_.url);
}

std::string RemoteChat::reply(const std::vector<ChatMessage>& conversation) {
  json messages = json::array();
  for (const auto& m : conversation) messages.push_back({{"role", m.role}, {"content", m.content}});
  const json body{{"messages", messages}, {"temperature", temperature_}};
  const auto j = parse_reply(post_json(config_, body.dump()), config_.url);
  check_refusal(j, config_.url);
  if (!j.contains("text") || !j["text"].is_string()) throw TransportError(config_.url + ": reply has no 'text'");
  std::lock_guard lock(mutex_);
  if (j.contains("model") && j["model"].is_string()) model_ = j["model"].get<std::string>();
  return j["text"].get<std::string>();
}

std::string RemoteChat::model_id() const {
  std::lock_guard lock(mutex_);
  return model_.empty() ? "remote" : model_;
}

}  // namespace physground
