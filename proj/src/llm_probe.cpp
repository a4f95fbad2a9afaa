// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/llm_probe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "ehrlm/error.hpp"
#include "ehrlm/ingest.hpp"
#include "ehrlm/rng.hpp"
#include "ehrlm/text.hpp"

namespace ehrlm {
namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url parse_url(const std::string& endpoint) {
  std::string scheme;
  for (const char* s : {"http://", "https://"}) {
    if (endpoint.rfind(s, 0) == 0) scheme = s;
  }
  if (scheme.empty()) throw ConfigError("llm_probe", "endpoint must start with http:// or https://");
  const auto slash = endpoint.find('/', scheme.size());
  Url u;
  u.origin = endpoint.substr(0, slash);
  u.path = slash == std::string::npos ? "/" : endpoint.substr(slash);
  if (u.origin.size() == scheme.size()) throw ConfigError("llm_probe", "endpoint has no host");
  return u;
}

bool is_http(const std::string& endpoint) {
  return endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0;
}

nlohmann::json messages_json(const std::vector<ChatMessage>& messages) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& m : messages) a.push_back({{"role", m.role}, {"content", m.content}});
  return a;
}

std::vector<ChatMessage> messages_from_json(const nlohmann::json& a) {
  std::vector<ChatMessage> out;
  for (const auto& m : a) out.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
  return out;
}

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text::to_lower(text)) {
    if ((c >= 'a' && c <= 'z') || c == '\'') {
      cur += c;
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

bool is_negation(const std::string& w) {
  static const std::vector<std::string> kNeg = {"not", "no", "non", "never", "isn't", "isnt", "cannot",
                                                "neither", "nor", "wasn't", "aren't", "without"};
  return std::find(kNeg.begin(), kNeg.end(), w) != kNeg.end() || (w.size() > 3 && w.ends_with("n't"));
}

nlohmann::json record_json(const ProbeRecord& r) {
  return {{"index", r.index},
          {"sample_id", r.sample.sample_id},
          {"antibiotic", r.sample.antibiotic},
          {"label", r.sample.label},
          {"messages", messages_json(r.messages)},
          {"response", r.response ? nlohmann::json(*r.response) : nlohmann::json(nullptr)},
          {"error", r.error},
          {"parsed", probe_answer_name(r.parsed)},
          {"correct", r.correct}};
}

}  // namespace

void ProbeConfig::validate() const {
  if (!(timeout_s > 0.0)) throw ConfigError("llm_probe", "timeout must be positive");
  if (max_retries < 0) throw ConfigError("llm_probe", "max_retries must be non-negative");
  if (!(backoff_s >= 0.0)) throw ConfigError("llm_probe", "backoff must be non-negative");
  if (samples == 0) throw ConfigError("llm_probe", "samples must be at least 1");
  const auto names = prompt_templates();
  if (std::find(names.begin(), names.end(), template_id) == names.end()) {
    throw ConfigError("llm_probe", "unknown prompt template '" + template_id + "'");
  }
}

nlohmann::json to_json(const ProbeConfig& c) {
  return {{"endpoint", c.endpoint}, {"model", c.model},           {"api_key_env", c.api_key_env},
          {"timeout_s", c.timeout_s}, {"max_retries", c.max_retries}, {"backoff_s", c.backoff_s},
          {"template_id", c.template_id}, {"samples", c.samples},     {"seed", c.seed}};
}

std::vector<std::string> prompt_templates() { return {"decision-v1", "brief-v1"}; }

std::vector<ChatMessage> render_prompt(const ProbeSample& sample, const std::string& template_id) {
  if (text::trim(sample.text).empty()) throw ConfigError("llm_probe", "sample " + sample.sample_id + " has no text");
  if (!antibiotic_index(sample.antibiotic)) {
    throw ConfigError("llm_probe", "unknown antibiotic '" + sample.antibiotic + "'");
  }
  const std::string answer_rule =
      "Answer with exactly one word: \"susceptible\" or \"resistant\".";
  if (template_id == "decision-v1") {
    return {{"system",
             "You are an infectious disease physician assisting with antibiotic selection for a patient with a "
             "staphylococcal infection."},
            {"user", "Patient record:\n" + sample.text + "\n\nYou are deciding whether to administer " +
                         sample.antibiotic + ". Based on the record, is the patient's staphylococcal isolate "
                         "susceptible or resistant to " + sample.antibiotic + "? " + answer_rule}};
  }
  if (template_id == "brief-v1") {
    return {{"system", "You answer clinical microbiology questions."},
            {"user", sample.text + "\n\nIs the isolate susceptible or resistant to " + sample.antibiotic + "? " +
                         answer_rule}};
  }
  throw ConfigError("llm_probe", "unknown prompt template '" + template_id + "'");
}

std::string query_endpoint(const std::vector<ChatMessage>& messages, const ProbeConfig& cfg) {
  const Url url = parse_url(cfg.endpoint);
  httplib::Headers headers;
  if (!cfg.api_key_env.empty()) {
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key) throw ConfigError("llm_probe", "environment variable " + cfg.api_key_env + " is not set");
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string body = nlohmann::json{{"model", cfg.model}, {"messages", messages_json(messages)}}.dump();

  httplib::Client client(url.origin);
  const auto timeout = std::chrono::duration<double>(cfg.timeout_s);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0 && cfg.backoff_s > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(cfg.backoff_s * std::pow(2.0, attempt - 1)));
    }
    auto res = client.Post(url.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw EndpointError("llm_probe", "HTTP " + std::to_string(res->status) + " from " + cfg.endpoint);
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError("llm_probe", "response body is not JSON");
    }
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError("llm_probe", "response has no choices[0].message.content string");
    }
  }
  throw EndpointError("llm_probe", std::to_string(cfg.max_retries + 1) + " attempts failed; last: " + last_error);
}

std::string probe_answer_name(ProbeAnswer a) {
  switch (a) {
    case ProbeAnswer::Resistant: return "resistant";
    case ProbeAnswer::Susceptible: return "susceptible";
    case ProbeAnswer::Abstain: return "abstain";
  }
  return "abstain";
}

ProbeAnswer parse_label(const std::string& text) {
  const auto words = words_of(text);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (words[i] == "resistant") return ProbeAnswer::Resistant;
    if (words[i] == "susceptible") {
      for (std::size_t back = 1; back <= 3 && back <= i; ++back) {
        if (is_negation(words[i - back])) return ProbeAnswer::Resistant;
      }
      return ProbeAnswer::Susceptible;
    }
  }
  return ProbeAnswer::Abstain;
}

std::string HttpTransport::complete(std::size_t, const std::vector<ChatMessage>& messages) {
  return query_endpoint(messages, cfg_);
}

ReplayTransport::ReplayTransport(const std::filesystem::path& transcript) {
  std::ifstream in(transcript, std::ios::binary);
  if (!in) throw IoError("llm_probe", "cannot read transcript " + transcript.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Entry e;
      e.messages = messages_from_json(j.at("messages"));
      if (!j.at("response").is_null()) e.response = j.at("response").get<std::string>();
      e.error = j.value("error", std::string());
      entries_[j.at("index").get<std::size_t>()] = std::move(e);
    } catch (const nlohmann::json::exception& ex) {
      throw ProtocolError("llm_probe", transcript.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
}

std::string ReplayTransport::complete(std::size_t index, const std::vector<ChatMessage>& messages) {
  const auto it = entries_.find(index);
  if (it == entries_.end()) throw ProtocolError("llm_probe", "transcript has no record " + std::to_string(index));
  if (it->second.messages != messages) {
    throw ProtocolError("llm_probe", "prompt for record " + std::to_string(index) + " differs from the transcript");
  }
  if (!it->second.response) throw EndpointError("llm_probe", it->second.error);
  return *it->second.response;
}

ProbeReport run_probe(const std::vector<ProbeSample>& samples, const ProbeConfig& cfg, ChatTransport& transport,
                      const std::optional<std::filesystem::path>& transcript) {
  if (samples.empty()) throw InputError("llm_probe", "no probe samples");
  std::ofstream out;
  if (transcript) {
    out.open(*transcript, std::ios::binary);
    if (!out) throw IoError("llm_probe", "cannot write transcript " + transcript->string());
  }
  ProbeReport rep;
  rep.total = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    ProbeRecord r;
    r.index = i;
    r.sample = samples[i];
    r.messages = render_prompt(samples[i], cfg.template_id);
    try {
      r.response = transport.complete(i, r.messages);
      r.parsed = parse_label(*r.response);
    } catch (const EndpointError& e) {
      r.error = e.what();
    } catch (const ProtocolError& e) {
      // A mismatched replay is a usage problem, not a sample failure.
      if (dynamic_cast<ReplayTransport*>(&transport)) throw;
      r.error = e.what();
    }
    r.correct = r.parsed != ProbeAnswer::Abstain && static_cast<int>(r.parsed) == samples[i].label;
    rep.correct += r.correct;
    rep.abstained += r.error.empty() && r.parsed == ProbeAnswer::Abstain;
    rep.failed += !r.error.empty();
    if (out) out << record_json(r).dump() << '\n';
    rep.records.push_back(std::move(r));
  }
  rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.total);
  return rep;
}

ProbeReport run_probe(const std::vector<ProbeSample>& samples, const ProbeConfig& cfg,
                      const std::optional<std::filesystem::path>& transcript) {
  if (is_http(cfg.endpoint)) {
    HttpTransport t(cfg);
    return run_probe(samples, cfg, t, transcript);
  }
  ReplayTransport t(cfg.endpoint);
  return run_probe(samples, cfg, t, transcript);
}

nlohmann::json to_json(const ProbeReport& r) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& rec : r.records) records.push_back(record_json(rec));
  return {{"total", r.total},         {"correct", r.correct}, {"abstained", r.abstained},
          {"failed", r.failed},       {"accuracy", r.accuracy}, {"records", records}};
}

std::vector<ProbeSample> make_probe_samples(const std::vector<SerializedDocument>& docs, const LabelPanel& labels,
                                            std::size_t n, std::uint64_t seed) {
  std::vector<ProbeSample> pool;
  for (const auto& d : docs) {
    if (d.source != DocSource::Ehr) continue;
    const auto row = labels.find(d.patient_id.value_or(d.doc_id));
    if (!row) continue;
    for (std::size_t k = 0; k < kNumAntibiotics; ++k) {
      const auto s = labels.rows[*row][k];
      if (s == Susceptibility::Untested) continue;
      pool.push_back({d.doc_id + ":" + std::string(kAntibiotics[k]), d.text, std::string(kAntibiotics[k]),
                      s == Susceptibility::Susceptible ? 1 : 0});
    }
  }
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(std::min(n, idx.size()));
  std::sort(idx.begin(), idx.end());
  std::vector<ProbeSample> out;
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

void write_probe_samples(const std::vector<ProbeSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("llm_probe", "cannot write " + path.string());
  for (const auto& s : samples) {
    out << nlohmann::json{{"sample_id", s.sample_id}, {"antibiotic", s.antibiotic}, {"label", s.label},
                          {"text", s.text}}.dump()
        << '\n';
  }
}

std::vector<ProbeSample> read_probe_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("llm_probe", "cannot read " + path.string());
  std::vector<ProbeSample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ProbeSample s{j.at("sample_id").get<std::string>(), j.at("text").get<std::string>(),
                    j.at("antibiotic").get<std::string>(), j.at("label").get<int>()};
      if (s.label != 0 && s.label != 1) throw SchemaError("llm_probe", "label must be 0 or 1");
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("llm_probe", path.string() + ": " + e.what());
    }
  }
  return out;
}

}  // namespace ehrlm
