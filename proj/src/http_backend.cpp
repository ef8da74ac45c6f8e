#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "tracepipe/backends.hpp"

namespace tracepipe {

using nlohmann::json;

HttpBackendConfig HttpBackendConfig::from_json(const json& j) {
  HttpBackendConfig c;
  c.base_url = j.at("base_url").get<std::string>();
  c.path = j.value("path", c.path);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.auth_header = j.value("auth_header", c.auth_header);
  c.auth_prefix = j.value("auth_prefix", c.auth_prefix);
  if (auto h = j.find("headers"); h != j.end()) {
    c.headers = h->get<std::map<std::string, std::string>>();
  }
  c.request_template = j.value("request_template", c.request_template);
  if (auto r = j.find("response"); r != j.end()) {
    c.text_pointer = r->value("text", c.text_pointer);
    c.prompt_tokens_pointer = r->value("prompt_tokens", c.prompt_tokens_pointer);
    c.completion_tokens_pointer = r->value("completion_tokens", c.completion_tokens_pointer);
  }
  c.max_retries = j.value("max_retries", c.max_retries);
  c.backoff_initial_s = j.value("backoff_initial_s", c.backoff_initial_s);
  c.backoff_max_s = j.value("backoff_max_s", c.backoff_max_s);
  if (c.max_retries < 0) throw Error("http backend: max_retries must be >= 0");
  return c;
}

HttpAgent::HttpAgent(HttpBackendConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
  if (!sleeper_) {
    sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }
}

namespace {

void substitute_prompt(json& node, const std::string& prompt) {
  if (node.is_string()) {
    if (node.get_ref<const std::string&>() == "{prompt}") node = prompt;
  } else if (node.is_structured()) {
    for (auto& child : node) substitute_prompt(child, prompt);
  }
}

std::optional<std::int64_t> read_count(const json& body, const std::string& pointer) {
  if (pointer.empty()) return std::nullopt;
  const json::json_pointer ptr(pointer);
  if (!body.contains(ptr)) return std::nullopt;
  const json& v = body.at(ptr);
  if (!v.is_number_integer()) return std::nullopt;
  return v.get<std::int64_t>();
}

bool transient(int status) { return status == 429 || (status >= 500 && status <= 599); }

}  // namespace

json HttpAgent::build_body(const AgentRequest& request) const {
  json body = config_.request_template;
  substitute_prompt(body, request.prompt);
  if (body.is_object()) {
    for (const auto& [k, v] : request.sampling.items()) body[k] = v;
  }
  return body;
}

AgentResponse HttpAgent::invoke(const AgentRequest& request) {
  check_request(request);
  const auto start = std::chrono::steady_clock::now();

  httplib::Headers headers(config_.headers.begin(), config_.headers.end());
  if (!config_.api_key_env.empty()) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw BackendError(BackendErrorKind::Auth,
                         "environment variable " + config_.api_key_env + " is not set");
    }
    headers.emplace(config_.auth_header, config_.auth_prefix + key);
  }
  const std::string body = build_body(request).dump();

  httplib::Client client(config_.base_url);
  const auto seconds = static_cast<time_t>(request.timeout_s);
  const auto micros = static_cast<time_t>((request.timeout_s - static_cast<double>(seconds)) * 1e6);
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);

  std::string last_failure;
  for (int attempt = 0;; ++attempt) {
    auto res = client.Post(config_.path, headers, body, "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout) {
        throw BackendError(BackendErrorKind::Timeout,
                           config_.base_url + config_.path + ": " + httplib::to_string(err));
      }
      last_failure = httplib::to_string(err);
    } else if (res->status == 401 || res->status == 403) {
      throw BackendError(BackendErrorKind::Auth, "provider rejected credentials (HTTP " +
                                                     std::to_string(res->status) + ")");
    } else if (transient(res->status)) {
      last_failure = "HTTP " + std::to_string(res->status);
    } else if (res->status < 200 || res->status > 299) {
      throw BackendError(BackendErrorKind::Protocol,
                         "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    } else {
      json reply;
      try {
        reply = json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw BackendError(BackendErrorKind::Protocol, std::string("reply is not JSON: ") + e.what());
      }
      const json::json_pointer text_ptr(config_.text_pointer);
      if (!reply.contains(text_ptr) || !reply.at(text_ptr).is_string()) {
        throw BackendError(BackendErrorKind::Protocol, "reply has no text at " + config_.text_pointer);
      }
      AgentResponse out;
      out.raw_text = reply.at(text_ptr).get<std::string>();
      const auto prompt_tokens = read_count(reply, config_.prompt_tokens_pointer);
      const auto completion_tokens = read_count(reply, config_.completion_tokens_pointer);
      if (prompt_tokens && completion_tokens) out.usage = make_usage(*prompt_tokens, *completion_tokens);
      out.latency_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return out;
    }

    if (attempt >= config_.max_retries) {
      throw BackendError(BackendErrorKind::RetryExhausted,
                         "gave up after " + std::to_string(attempt + 1) + " attempts, last: " + last_failure);
    }
    sleeper_(std::min(config_.backoff_initial_s * std::ldexp(1.0, attempt), config_.backoff_max_s));
  }
}

}  // namespace tracepipe
