#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

namespace neuroaudit {

struct AnnotatorRequest {
  std::string explanation;
  std::string candidate;

  nlohmann::json to_json() const { return {{"explanation", explanation}, {"candidate", candidate}}; }
};

// SHA-256 (hex) of the request's canonical JSON; the key in replay fixtures.
std::string request_hash(const AnnotatorRequest& request);

struct AnnotatorReply {
  std::optional<bool> member;  // empty when the response was malformed
  nlohmann::json raw;
};

// Accepts {"member": bool} or one of the label strings "member"/"related"/
// "yes" and "unrelated"/"non-member"/"no".
AnnotatorReply parse_reply(const nlohmann::json& body);

class Annotator {
 public:
  virtual ~Annotator() = default;
  // Throws AnnotatorUnavailable when no answer can be obtained.
  virtual AnnotatorReply judge(const AnnotatorRequest& request) = 0;
};

// Answers from a fixture file mapping request hash -> recorded response.
class ReplayAnnotator : public Annotator {
 public:
  explicit ReplayAnnotator(std::map<std::string, nlohmann::json> responses) : responses_(std::move(responses)) {}
  static ReplayAnnotator load(const std::filesystem::path& fixture);

  AnnotatorReply judge(const AnnotatorRequest& request) override;
  std::size_t calls() const { return calls_; }

 private:
  std::map<std::string, nlohmann::json> responses_;
  std::size_t calls_ = 0;
};

// POSTs {explanation, candidate} to an http:// endpoint and records every
// response so the session can be saved as a replay fixture.
class HttpAnnotator : public Annotator {
 public:
  explicit HttpAnnotator(std::string url, int timeout_seconds = 30);

  AnnotatorReply judge(const AnnotatorRequest& request) override;
  const std::map<std::string, nlohmann::json>& recorded() const { return recorded_; }
  void save_fixture(const std::filesystem::path& path) const;

 private:
  std::string host_;
  std::string path_;
  int timeout_seconds_;
  std::map<std::string, nlohmann::json> recorded_;
};

}  // namespace neuroaudit
