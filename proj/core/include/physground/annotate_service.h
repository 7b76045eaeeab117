#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "physground/concepts.h"
#include "physground/datapipe.h"

namespace physground {

enum class SessionState { active, completed, expired };
std::string_view to_string(SessionState state);

struct KeyBinding {
  std::string option;
  std::string key;
  friend bool operator==(const KeyBinding&, const KeyBinding&) = default;
};

inline constexpr std::string_view kOtherOption = "other";
inline constexpr std::string_view kBackKey = "Backspace";

// Options in display order for one item of a concept: the registry labels
// (plus "other" when open-ended labels are allowed) or left/right/equal/unclear.
std::vector<std::string> item_options(const ConceptSpec& concept_spec, ItemKind kind);
// Digits 1-9 then 0 in option order; "other" is bound to "o".
std::vector<KeyBinding> key_bindings(const std::vector<std::string>& options);

// What an annotator sees for one item. Never carries check status.
struct ItemView {
  std::string session_id;
  std::size_t index = 0;
  std::size_t total = 0;
  std::string concept_name;
  ItemKind kind = ItemKind::categorical;
  std::vector<ItemObject> objects;
  std::string question;
  std::string instructions;
  std::vector<std::string> options;
  std::vector<KeyBinding> keys;
  std::string back_key{kBackKey};
  bool allows_other = false;
  // The earlier answer when the item is revisited after back.
  std::optional<Response> prefilled;

  friend bool operator==(const ItemView&, const ItemView&) = default;
};

struct CompletionSummary {
  std::string session_id;
  std::string job_id;
  std::string annotator;
  AnnotatorScore score;
};

struct SessionSnapshot {
  std::string session_id;
  std::string job_id;
  std::string annotator;
  std::size_t cursor = 0;
  std::size_t total = 0;
  std::map<std::size_t, Response> responses;
  SessionState state = SessionState::active;
  // Milliseconds since the epoch of each stored response.
  std::map<std::size_t, std::int64_t> answered_at;

  friend bool operator==(const SessionSnapshot&, const SessionSnapshot&) = default;
};

struct SubmitRequest {
  std::size_t index = 0;
  // An option name; for "other" the label goes in `text`.
  std::string option;
  std::string text;
  // Replays with a known (index, attempt_id) are acknowledged without change.
  std::string attempt_id;
};

struct SubmitResult {
  std::optional<ItemView> next;
  std::optional<CompletionSummary> summary;
  bool duplicate = false;
};

struct BackResult {
  ItemView view;
  std::optional<std::string> notice;  // set when back was a no-op
};

// Maps an option of `view` to a stored response. Throws InvalidInput
// listing the allowed options.
Response parse_response(const ItemView& view, std::string_view option, std::string_view text);
std::string option_for(const Response& response, ItemKind kind);

// Session host. Per-session operations are serialized; different sessions
// proceed in parallel. With a data directory, every change is appended to
// <dir>/events.log before it is applied, and the log is replayed on start.
class AnnotationService {
 public:
  using Clock = std::function<std::chrono::system_clock::time_point()>;

  struct Options {
    std::string data_dir;  // empty: in memory only
    std::chrono::seconds idle_expiry = std::chrono::hours(24);
    Clock clock;  // defaults to the system clock
    const ConceptRegistry* registry = nullptr;
  };

  AnnotationService();
  explicit AnnotationService(Options options);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  // Re-adding an identical job is a no-op; a different job under a known
  // id raises Conflict. Unknown concepts raise InvalidInput.
  void add_job(const AnnotationJob& job);
  std::vector<std::string> job_ids() const;
  const AnnotationJob& job(std::string_view job_id) const;  // throws NotFound

  // Idempotent per (job, annotator). Raises NotFound for unknown jobs and
  // Conflict when the job belongs to another annotator or another
  // annotator holds a live session on it. An expired session is replaced.
  SessionSnapshot create_session(const std::string& job_id, const std::string& annotator);

  SessionSnapshot session(std::string_view session_id);
  // Throws SequencingError once the session is completed or expired.
  ItemView current_item(std::string_view session_id);
  // index == cursor appends; index == cursor - 1 overwrites the last
  // answer. Anything else raises SequencingError.
  SubmitResult submit(std::string_view session_id, const SubmitRequest& request);
  // One step only: a second back before the next submit is a no-op.
  BackResult back(std::string_view session_id);
  // Throws SequencingError until the session is completed.
  CompletionSummary summary(std::string_view session_id);

  // Non-check annotations of completed sessions whose annotator passed.
  AnnotationSet export_kept();

  std::size_t session_count() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Transport-independent HTTP routing over an AnnotationService. Bodies are
// JSON; /admin/export returns annotation records as JSON lines.
struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

HttpReply handle_http(AnnotationService& service, std::string_view method, std::string_view path,
                      std::string_view body);

std::string to_json(const ItemView& view);
std::string to_json(const SessionSnapshot& session);
std::string to_json(const CompletionSummary& summary);

// Serves handle_http (and optional static files) over HTTP.
class AnnotationServer {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    int port = 8080;  // 0 picks a free port
    std::string static_dir;
  };

  AnnotationServer(AnnotationService& service, Options options);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  // Binds and returns the port. Throws TransportError.
  int bind();
  // Blocks until stop() is called.
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace physground
