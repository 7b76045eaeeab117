#pragma once

#include <chrono>
#include <mutex>
#include <string>
#include <vector>

#include "physground/oracle.h"
#include "physground/planner.h"

namespace physground {

struct RemoteConfig {
  // http://host[:port][/path]
  std::string url;
  std::chrono::milliseconds timeout{30000};
  // Extra attempts after a timeout, connection failure or 5xx reply.
  int retries = 2;
  std::string model;  // reported by model_id() until the server names one
};

// Oracle over HTTP, one POST per query. Request body:
//   {"object", "image_ref"?, "bbox"? [x, y, w, h], "prompt", "candidates"?}
// Reply: {"answers": [{"answer", "probability"}], "normalized"?, "model"?,
//         "latency_ms"?} or {"refusal": "..."}.
// The prompt is sent wrapped in the answer template. Network and protocol
// failures raise TransportError; refusals raise ModelRefusal.
class RemoteOracle : public Oracle {
 public:
  explicit RemoteOracle(RemoteConfig config);

  AnswerDistribution query(const OracleRequest& request) override;
  std::string model_id() const override;
  // Latency reported with the last reply, -1 when absent.
  double last_latency_ms() const;

 private:
  RemoteConfig config_;
  mutable std::mutex mutex_;
  std::string model_;
  double latency_ms_ = -1;
};

// Chat backend over HTTP. Request: {"messages": [{"role", "content"}],
// "temperature"}; reply: {"text", "model"?} or {"refusal": "..."}.
class RemoteChat : public ChatBackend {
 public:
  explicit RemoteChat(RemoteConfig config, double temperature = 0.0);

  std::string reply(const std::vector<ChatMessage>& conversation) override;
  std::string model_id() const override;

 private:
  RemoteConfig config_;
  double temperature_;
  mutable std::mutex mutex_;
  std::string model_;
};

// POSTs a JSON body with retries; returns the reply body of a 2xx answer.
// Exposed for the CLI and tests.
std::string post_json(const RemoteConfig& config, const std::string& body);

}  // namespace physground
