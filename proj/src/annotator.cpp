#include "neuroaudit/annotator.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>

#include "httplib.h"
#include "neuroaudit/error.hpp"

namespace neuroaudit {

std::string request_hash(const AnnotatorRequest& request) {
  const std::string canonical = request.to_json().dump();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(canonical.data(), canonical.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

AnnotatorReply parse_reply(const nlohmann::json& body) {
  AnnotatorReply reply;
  reply.raw = body;
  if (body.is_object()) {
    const auto it = body.find("member");
    if (it != body.end() && it->is_boolean()) reply.member = it->get<bool>();
  } else if (body.is_string()) {
    const auto s = body.get<std::string>();
    if (s == "member" || s == "related" || s == "yes") reply.member = true;
    if (s == "unrelated" || s == "non-member" || s == "no") reply.member = false;
  }
  return reply;
}

ReplayAnnotator ReplayAnnotator::load(const std::filesystem::path& fixture) {
  std::ifstream in(fixture);
  if (!in) throw AnnotatorUnavailable("cannot open annotator fixture " + fixture.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("annotator fixture " + fixture.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw FormatError("annotator fixture must map request hash -> response");
  std::map<std::string, nlohmann::json> responses;
  for (const auto& [k, v] : j.items()) responses.emplace(k, v);
  return ReplayAnnotator(std::move(responses));
}

AnnotatorReply ReplayAnnotator::judge(const AnnotatorRequest& request) {
  ++calls_;
  const auto key = request_hash(request);
  const auto it = responses_.find(key);
  if (it == responses_.end())
    throw AnnotatorUnavailable("no recorded annotator response for candidate '" + request.candidate + "' (" + key +
                               ")");
  return parse_reply(it->second);
}

HttpAnnotator::HttpAnnotator(std::string url, int timeout_seconds) : timeout_seconds_(timeout_seconds) {
  const std::string scheme = "http://";
  if (url.rfind(scheme, 0) != 0) throw ConfigError("annotator URL must start with http://: " + url);
  const auto slash = url.find('/', scheme.size());
  host_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
}

AnnotatorReply HttpAnnotator::judge(const AnnotatorRequest& request) {
  httplib::Client client(host_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);
  const auto res = client.Post(path_, request.to_json().dump(), "application/json");
  if (!res) throw AnnotatorUnavailable("annotator endpoint " + host_ + path_ + " unreachable");
  if (res->status != 200)
    throw AnnotatorUnavailable("annotator endpoint returned HTTP " + std::to_string(res->status));
  nlohmann::json body = nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
  if (body.is_discarded()) body = res->body;
  recorded_[request_hash(request)] = body;
  return parse_reply(body);
}

void HttpAnnotator::save_fixture(const std::filesystem::path& path) const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : recorded_) j[k] = v;
  std::ofstream out(path);
  if (!out) throw Error("cannot write annotator fixture " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace neuroaudit
