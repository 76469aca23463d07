#pragma once

// Probing harness: renders the swapped prompts for each sample, asks an
// OpenAI-compatible chat-completions endpoint for first-token
// log-probabilities, and turns them into cached probe records.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "calibra/core_types.hpp"
#include "calibra/probe_store.hpp"

namespace calibra::harness {

enum class TemplateName { Default, VariantOne, VariantTwo, VariantThree };

inline std::string_view to_string(TemplateName name) {
  switch (name) {
    case TemplateName::Default: return "default";
    case TemplateName::VariantOne: return "variant-one";
    case TemplateName::VariantTwo: return "variant-two";
    case TemplateName::VariantThree: return "variant-three";
  }
  return "default";
}

inline TemplateName parse_template_name(std::string_view text) {
  if (text == "default") return TemplateName::Default;
  if (text == "variant-one") return TemplateName::VariantOne;
  if (text == "variant-two") return TemplateName::VariantTwo;
  if (text == "variant-three") return TemplateName::VariantThree;
  throw Error(ErrorCode::ParseError, "unknown template '" + std::string(text) + "'");
}

inline constexpr std::string_view kDebiasInstruction =
    "Avoid any position bias and ensure that the order in which the responses were presented does not "
    "influence your decision. Do not allow the length of the responses to influence your evaluation. Do not "
    "favor certain tokens of the option. Be as objective as possible";

/// System text with {t1}/{t2} placeholders for the option tokens.
struct PromptTemplate {
  TemplateName name = TemplateName::Default;
  std::string system_text;
  bool supports_few_shot = true;
  std::optional<std::string> debias_instruction;

  static PromptTemplate builtin(TemplateName name, bool debias = false) {
    PromptTemplate t;
    t.name = name;
    switch (name) {
      case TemplateName::Default:
        t.system_text =
            "Given a question and two answers. Determine which one better answers the question. You only need "
            "to output {t1} or {t2} directly to indicate which answer is better.";
        break;
      case TemplateName::VariantOne:
        t.system_text =
            "Please evaluate the quality of the responses to the question displayed below.  Don't provide your "
            "explanation, only output your final verdict by strictly following this format: {t1} if assistant "
            "{t1} is better, {t2} if assistant {t2} is better.";
        break;
      case TemplateName::VariantTwo:
        t.system_text =
            "You are an advanced evaluator, and your task is to assess which response addresses the inquiry "
            "more effectively. Output {t1} if response {t1} is better, or {t2} if response {t2} is better.";
        break;
      case TemplateName::VariantThree:
        t.system_text =
            "Below is a query along with two different responses generated by AI assistants. Your task is to "
            "determine which response provides a more accurate and helpful answer to the question posed. Don't "
            "provide your explanation. Simply output {t1} if response {t1} is more effective, or {t2} if "
            "response {t2} is more effective.";
        break;
    }
    if (debias) t.debias_instruction = std::string(kDebiasInstruction);
    return t;
  }
};

struct FewShotExample {
  PairwiseSample sample;
  Content verdict = Content::O1;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

struct ProbeConfig {
  std::string endpoint_url;
  std::string model_name;
  std::string api_key;
  TokenPair token_pair;
  std::vector<CombinationId> combinations{kEstimationCombinations.begin(), kEstimationCombinations.end()};
  std::vector<FewShotExample> few_shot_examples;
  std::size_t concurrency_limit = 4;
  RetryPolicy retry;
  int top_logprobs = 20;
  static constexpr double temperature = 0.0;

  void validate() const {
    if (concurrency_limit < 1) throw Error(ErrorCode::InvalidArgument, "concurrency limit must be at least 1");
    if (few_shot_examples.size() > 3) throw Error(ErrorCode::InvalidArgument, "at most 3 few-shot examples");
    if (retry.max_attempts < 1) throw Error(ErrorCode::InvalidArgument, "retry attempts must be at least 1");
  }
};

struct Message {
  std::string role;
  std::string content;
  friend bool operator==(const Message&, const Message&) = default;
};

namespace detail {

inline std::string substitute(std::string text, const TokenPair& tokens) {
  auto replace_all = [&](std::string_view key, const std::string& value) {
    for (std::size_t pos = text.find(key); pos != std::string::npos; pos = text.find(key, pos + value.size())) {
      text.replace(pos, key.size(), value);
    }
  };
  replace_all("{t1}", tokens.t1);
  replace_all("{t2}", tokens.t2);
  return text;
}

inline const std::string& content_of(const PairwiseSample& s, Content c) {
  return c == Content::O1 ? s.content_1 : s.content_2;
}

inline Content other(Content c) { return c == Content::O1 ? Content::O2 : Content::O1; }

inline std::string render_user(const PairwiseSample& sample, CombinationId combination, const TokenPair& tokens) {
  if (sample.instruction.empty()) {
    throw Error(ErrorCode::TemplateFieldMissing, "sample '" + sample.id + "' has no instruction");
  }
  if (sample.content_1.empty() || sample.content_2.empty()) {
    throw Error(ErrorCode::TemplateFieldMissing, "sample '" + sample.id + "' has an empty answer");
  }
  const Content first = first_position_content(combination);
  const TokenIndex first_token = first_position_token(combination);
  const TokenIndex second_token = first_token == TokenIndex::T1 ? TokenIndex::T2 : TokenIndex::T1;
  std::string out;
  out += "[Question]\n" + sample.instruction + "\n\n";
  out += "[Answer " + tokens[first_token] + "]\n" + content_of(sample, first) + "\n\n";
  out += "[Answer " + tokens[second_token] + "]\n" + content_of(sample, other(first));
  return out;
}

}  // namespace detail

/// Chat messages for one (sample, combination). Few-shot examples are shown
/// under X0 before the target sample.
inline std::vector<Message> render_prompt(const PairwiseSample& sample, CombinationId combination,
                                          const PromptTemplate& tmpl, const ProbeConfig& config) {
  if (tmpl.system_text.empty()) throw Error(ErrorCode::TemplateFieldMissing, "template has no system text");
  if (tmpl.system_text.find("{t1}") == std::string::npos || tmpl.system_text.find("{t2}") == std::string::npos) {
    throw Error(ErrorCode::TemplateFieldMissing, "template must reference both {t1} and {t2}");
  }
  std::string system = detail::substitute(tmpl.system_text, config.token_pair);
  if (tmpl.debias_instruction) system = *tmpl.debias_instruction + "\n\n" + system;

  std::vector<Message> messages;
  messages.push_back({"system", system});
  if (!config.few_shot_examples.empty() && !tmpl.supports_few_shot) {
    throw Error(ErrorCode::TemplateFieldMissing, "template does not accept few-shot examples");
  }
  for (const auto& ex : config.few_shot_examples) {
    messages.push_back({"user", detail::render_user(ex.sample, CombinationId::X0, config.token_pair)});
    const TokenIndex answer = ex.verdict == Content::O1 ? TokenIndex::T1 : TokenIndex::T2;
    messages.push_back({"assistant", config.token_pair[answer]});
  }
  messages.push_back({"user", detail::render_user(sample, combination, config.token_pair)});
  return messages;
}

inline std::string stable_hash(std::string_view text) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string cache_key(const std::string& sample_id, CombinationId combination, const PromptTemplate& tmpl,
                             const ProbeConfig& config) {
  std::string canon;
  auto field = [&](std::string_view v) {
    canon += std::to_string(v.size());
    canon += ':';
    canon += v;
    canon += '|';
  };
  field(sample_id);
  field(to_string(combination));
  field(to_string(tmpl.name));
  field(tmpl.debias_instruction ? "di" : "plain");
  field(config.token_pair.t1);
  field(config.token_pair.t2);
  field(config.model_name);
  for (const auto& ex : config.few_shot_examples) {
    field(ex.sample.id);
    field(ex.verdict == Content::O1 ? "o1" : "o2");
  }
  return stable_hash(canon);
}

// ---------------------------------------------------------------------------
// Log-probability extraction.

inline std::string strip(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

struct ExtractedPair {
  double logprob_t1 = 0.0;
  double logprob_t2 = 0.0;
  ProbabilityPair normalized;
  bool floored = false;
};

inline constexpr double kFloorGap = 10.0;

/// Merges surface forms equal to each option token after whitespace stripping
/// (log-sum-exp). A missing token gets min(returned) - 10 and the pair is
/// flagged as floored.
inline ExtractedPair extract_pair(const std::map<std::string, double>& logprobs, const TokenPair& tokens) {
  constexpr double none = -std::numeric_limits<double>::infinity();
  double t1 = none;
  double t2 = none;
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& [surface, lp] : logprobs) {
    lowest = std::min(lowest, lp);
    const auto key = strip(surface);
    if (key == tokens.t1) t1 = log_add(t1, lp);
    if (key == tokens.t2) t2 = log_add(t2, lp);
  }
  if (t1 == none && t2 == none) {
    throw Error(ErrorCode::TokenNotInLogprobs,
                "neither '" + tokens.t1 + "' nor '" + tokens.t2 + "' appears among the returned log-probabilities");
  }
  ExtractedPair out;
  if (t1 == none || t2 == none) {
    out.floored = true;
    const double floor = lowest - kFloorGap;
    if (t1 == none) t1 = floor;
    if (t2 == none) t2 = floor;
  }
  out.logprob_t1 = t1;
  out.logprob_t2 = t2;
  out.normalized = normalize_logprobs(t1, t2);
  return out;
}

/// First-position top log-probabilities from a chat-completions response body.
inline std::map<std::string, double> parse_first_token_logprobs(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& content = j.at("choices").at(0).at("logprobs").at("content");
    if (!content.is_array() || content.empty()) {
      throw Error(ErrorCode::MalformedResponse, "response carries no token log-probabilities");
    }
    const auto& first = content.at(0);
    std::map<std::string, double> out;
    auto add = [&](const std::string& token, double lp) {
      auto [it, inserted] = out.emplace(token, lp);
      if (!inserted) it->second = std::max(it->second, lp);
    };
    if (first.contains("top_logprobs")) {
      for (const auto& entry : first.at("top_logprobs")) add(entry.at("token").get<std::string>(), entry.at("logprob").get<double>());
    }
    if (first.contains("token") && first.contains("logprob")) {
      add(first.at("token").get<std::string>(), first.at("logprob").get<double>());
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, std::string("unexpected response shape: ") + e.what());
  }
}

inline nlohmann::json build_request(const std::vector<Message>& messages, const ProbeConfig& config) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return nlohmann::json{{"model", config.model_name},
                        {"messages", msgs},
                        {"temperature", ProbeConfig::temperature},
                        {"max_tokens", 1},
                        {"logprobs", true},
                        {"top_logprobs", config.top_logprobs}};
}

// ---------------------------------------------------------------------------
// Transport.

/// Thrown by transports for failures worth retrying (connection errors, 429, 5xx).
struct RetryableFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class ChatTransport {
 public:
  virtual ~ChatTransport() = default;
  /// POSTs a chat-completions request body and returns the response body.
  virtual std::string post(const std::string& body) = 0;
};

/// Calls `transport.post` with exponential backoff on retryable failures.
inline std::string post_with_retry(ChatTransport& transport, const std::string& body, const RetryPolicy& policy) {
  auto backoff = policy.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    try {
      return transport.post(body);
    } catch (const RetryableFailure& e) {
      last_error = e.what();
    }
    if (attempt < policy.max_attempts && backoff.count() > 0) {
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
    }
  }
  throw Error(ErrorCode::TransportError,
              "giving up after " + std::to_string(policy.max_attempts) + " attempts: " + last_error);
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct ProbeStats {
  std::size_t requested = 0;
  std::size_t cache_hits = 0;
  std::size_t network_calls = 0;
};

/// Probes every (sample, combination) not already in `store`, with at most
/// `concurrency_limit` requests in flight. New records are inserted into the
/// store; the return value is the full record set for the requested pairs,
/// ordered by (sample_id, combination).
inline std::vector<ProbeRecord> probe(const std::vector<PairwiseSample>& samples, const ProbeConfig& config,
                                      const PromptTemplate& tmpl, ChatTransport& transport, ProbeStore& store,
                                      ProbeStats* stats = nullptr) {
  config.validate();
  struct Job {
    const PairwiseSample* sample;
    CombinationId combination;
    std::string key;
  };
  std::vector<Job> jobs;
  std::vector<ProbeRecord> results;
  ProbeStats local;
  for (const auto& s : samples) {
    for (auto c : config.combinations) {
      auto key = cache_key(s.id, c, tmpl, config);
      ++local.requested;
      if (auto cached = store.find(key)) {
        ++local.cache_hits;
        results.push_back(std::move(*cached));
      } else {
        jobs.push_back({&s, c, std::move(key)});
      }
    }
  }

  std::vector<std::optional<ProbeRecord>> fresh(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> calls{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (;;) {
      {
        std::lock_guard lock(error_mutex);
        if (first_error) return;
      }
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const auto& job = jobs[i];
      try {
        const auto messages = render_prompt(*job.sample, job.combination, tmpl, config);
        const auto body = build_request(messages, config).dump();
        ++calls;
        const auto response = post_with_retry(transport, body, config.retry);
        ProbeRecord r;
        r.sample_id = job.sample->id;
        r.combination = job.combination;
        r.template_name = std::string(to_string(tmpl.name));
        r.token_pair = config.token_pair;
        r.raw_logprobs = parse_first_token_logprobs(response);
        const auto pair = extract_pair(r.raw_logprobs, config.token_pair);
        r.logprob_t1 = pair.logprob_t1;
        r.logprob_t2 = pair.logprob_t2;
        r.normalized = pair.normalized;
        r.floored = pair.floored;
        r.model_name = config.model_name;
        r.timestamp = utc_timestamp();
        r.cache_key = job.key;
        store.insert(r);
        fresh[i] = std::move(r);
      } catch (const Error& e) {
        std::lock_guard lock(error_mutex);
        if (!first_error) {
          first_error = std::make_exception_ptr(
              Error(e.code(), "sample '" + job.sample->id + "' " + std::string(to_string(job.combination)) + ": " + e.what()));
        }
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  {
    const std::size_t n_threads = std::min(config.concurrency_limit, std::max<std::size_t>(jobs.size(), 1));
    std::vector<std::jthread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  local.network_calls = calls.load();
  if (stats != nullptr) *stats = local;
  if (first_error) std::rethrow_exception(first_error);

  for (auto& r : fresh) results.push_back(std::move(*r));
  std::stable_sort(results.begin(), results.end(), probe_order);
  return results;
}

}  // namespace calibra::harness
