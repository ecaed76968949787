#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "ifprobe/backend.hpp"

namespace ifprobe::backend {

/// Request/response exchange of JSON bodies with a peer. Failures raise
/// Error(kTransport), Error(kTimeout) or Error(kProtocol).
class Transport {
 public:
  virtual ~Transport() = default;
  /// `endpoint` is "generate" or "judge".
  virtual nlohmann::json call(std::string_view endpoint, const nlohmann::json& body) = 0;
};

/// HTTP POST <base_url>/<endpoint> with a JSON body.
class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string base_url, std::chrono::milliseconds timeout);
  nlohmann::json call(std::string_view endpoint, const nlohmann::json& body) override;

 private:
  std::string origin_;
  std::string path_prefix_;
  std::chrono::milliseconds timeout_;
};

/// Newline-delimited JSON over a child process's stdin/stdout. The command is
/// run through /bin/sh -c. Calls are serialized; after a timeout or a broken
/// pipe the child is killed and restarted on the next call.
class StdioTransport final : public Transport {
 public:
  StdioTransport(std::string command, std::chrono::milliseconds timeout);
  ~StdioTransport() override;
  StdioTransport(const StdioTransport&) = delete;
  StdioTransport& operator=(const StdioTransport&) = delete;

  nlohmann::json call(std::string_view endpoint, const nlohmann::json& body) override;

 private:
  void start();
  void stop();

  std::string command_;
  std::chrono::milliseconds timeout_;
  std::mutex mu_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

/// Retries transport and timeout failures up to `retries` extra times;
/// protocol errors are not retried.
class RemoteBackend final : public Backend {
 public:
  RemoteBackend(std::shared_ptr<Transport> transport, int retries = 0,
                std::optional<int> last_layer = std::nullopt)
      : transport_(std::move(transport)), retries_(retries), last_layer_(last_layer) {}

  GenerationResponse generate(const GenerationRequest& request) override;
  std::optional<int> last_layer() const override { return last_layer_; }

 private:
  std::shared_ptr<Transport> transport_;
  int retries_;
  std::optional<int> last_layer_;
};

/// Sends judge_request_body(); accepts {"reply": "<raw text>"} or
/// {"score": <int>} back.
class RemoteJudge final : public Judge {
 public:
  RemoteJudge(std::shared_ptr<Transport> transport, int retries = 0)
      : transport_(std::move(transport)), retries_(retries) {}

  QualityScore judge(const JudgeRequest& request) override;

 private:
  std::shared_ptr<Transport> transport_;
  int retries_;
};

}  // namespace ifprobe::backend
