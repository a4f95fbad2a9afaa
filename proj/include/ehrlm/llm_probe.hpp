// SPDX-License-Identifier: Apache-2.0
//
// Zero-shot susceptibility questions against a chat-completion endpoint,
// with recorded transcripts that can be replayed offline.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ehrlm/downstream.hpp"
#include "ehrlm/serializer.hpp"

namespace ehrlm {

struct ProbeConfig {
  /// http(s)://host[:port]/path, or a transcript file for replay.
  std::string endpoint = "http://127.0.0.1:8080/v1/chat/completions";
  std::string model = "gpt-4";
  /// Environment variable holding the bearer token; empty disables auth.
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 3;
  double backoff_s = 1.0;  // first retry delay, doubled per retry
  std::string template_id = "decision-v1";
  std::size_t samples = 80;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const ProbeConfig& cfg);

struct ProbeSample {
  std::string sample_id;
  std::string text;
  std::string antibiotic;
  int label = 0;  // 1 susceptible, 0 resistant
};

struct ChatMessage {
  std::string role;
  std::string content;
  bool operator==(const ChatMessage&) const = default;
};

std::vector<std::string> prompt_templates();

/// System + user message. Throws ConfigError on an unknown template or empty
/// document text.
std::vector<ChatMessage> render_prompt(const ProbeSample& sample, const std::string& template_id);

/// POSTs {model, messages} and returns choices[0].message.content. Retries
/// 5xx, timeouts and connection failures with exponential backoff; throws
/// EndpointError once retries are exhausted or on a 4xx, ProtocolError on a
/// malformed body, ConfigError when the key variable is unset.
std::string query_endpoint(const std::vector<ChatMessage>& messages, const ProbeConfig& cfg);

enum class ProbeAnswer { Resistant = 0, Susceptible = 1, Abstain = 2 };
std::string probe_answer_name(ProbeAnswer a);

/// Case-insensitive word scan; the first decisive word wins. "resistant"
/// gives Resistant; "susceptible" gives Susceptible unless a negation word
/// occurs within the three preceding words, in which case Resistant.
ProbeAnswer parse_label(const std::string& text);

/// Source of completions for run_probe.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  virtual std::string complete(std::size_t index, const std::vector<ChatMessage>& messages) = 0;
};

class HttpTransport : public ChatTransport {
 public:
  explicit HttpTransport(ProbeConfig cfg) : cfg_(std::move(cfg)) {}
  std::string complete(std::size_t index, const std::vector<ChatMessage>& messages) override;

 private:
  ProbeConfig cfg_;
};

/// Serves responses from a transcript written by run_probe. Never opens a
/// socket. Throws ProtocolError when the prompt differs from the recording.
class ReplayTransport : public ChatTransport {
 public:
  explicit ReplayTransport(const std::filesystem::path& transcript);
  std::string complete(std::size_t index, const std::vector<ChatMessage>& messages) override;

 private:
  struct Entry {
    std::vector<ChatMessage> messages;
    std::optional<std::string> response;
    std::string error;
  };
  std::map<std::size_t, Entry> entries_;
};

struct ProbeRecord {
  std::size_t index = 0;
  ProbeSample sample;
  std::vector<ChatMessage> messages;
  std::optional<std::string> response;
  std::string error;  // non-empty when the request failed
  ProbeAnswer parsed = ProbeAnswer::Abstain;
  bool correct = false;
};

struct ProbeReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t abstained = 0;
  std::size_t failed = 0;
  double accuracy = 0.0;
  std::vector<ProbeRecord> records;
};

/// Abstentions and failed requests count as incorrect. When `transcript` is
/// given each record is written there as one JSON line. Throws InputError on
/// an empty sample list.
ProbeReport run_probe(const std::vector<ProbeSample>& samples, const ProbeConfig& cfg, ChatTransport& transport,
                      const std::optional<std::filesystem::path>& transcript = std::nullopt);

/// Chooses the transport from cfg.endpoint: http(s) URLs query the network,
/// anything else is replayed as a transcript file.
ProbeReport run_probe(const std::vector<ProbeSample>& samples, const ProbeConfig& cfg,
                      const std::optional<std::filesystem::path>& transcript = std::nullopt);

nlohmann::json to_json(const ProbeReport& report);

/// Draws up to `n` (document, tested antibiotic) pairs, uniformly without
/// replacement under `seed`, ordered by patient then antibiotic.
std::vector<ProbeSample> make_probe_samples(const std::vector<SerializedDocument>& docs, const LabelPanel& labels,
                                            std::size_t n, std::uint64_t seed);

void write_probe_samples(const std::vector<ProbeSample>& samples, const std::filesystem::path& path);
std::vector<ProbeSample> read_probe_samples(const std::filesystem::path& path);

}  // namespace ehrlm
