#include "ifprobe/transport.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "httplib.h"
#include "ifprobe/error.hpp"

namespace ifprobe::backend {

using nlohmann::json;

namespace {

json parse_reply(std::string_view text, std::string_view what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kProtocol, std::string(what) + ": malformed JSON reply: " + e.what() +
                                          " (raw payload: \"" + std::string(text) + "\")");
  }
}

template <typename F>
auto with_retries(int retries, F&& f) {
  for (int attempt = 0;; ++attempt) {
    try {
      return f();
    } catch (const Error& e) {
      const bool retryable = e.kind() == ErrorKind::kTransport || e.kind() == ErrorKind::kTimeout;
      if (!retryable || attempt >= retries) throw;
    }
  }
}

}  // namespace

HttpTransport::HttpTransport(std::string base_url, std::chrono::milliseconds timeout) : timeout_(timeout) {
  const auto scheme_end = base_url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = base_url.find('/', host_start);
  origin_ = base_url.substr(0, path_start);
  if (path_start != std::string::npos) path_prefix_ = base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  if (origin_.empty()) throw Error(ErrorKind::kPrecondition, "http transport: empty URL");
}

json HttpTransport::call(std::string_view endpoint, const json& body) {
  httplib::Client client(origin_);
  const auto secs = timeout_.count() / 1000;
  const auto usecs = (timeout_.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  const auto path = path_prefix_ + "/" + std::string(endpoint);
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const auto kind = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout
                          ? ErrorKind::kTimeout
                          : ErrorKind::kTransport;
    throw Error(kind, "POST " + origin_ + path + " failed: " + httplib::to_string(err));
  }
  if (res->status != 200) {
    throw Error(ErrorKind::kTransport, "POST " + origin_ + path + " returned HTTP " +
                                           std::to_string(res->status) + ": " + res->body);
  }
  return parse_reply(res->body, "POST " + path);
}

StdioTransport::StdioTransport(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {
  if (command_.empty()) throw Error(ErrorKind::kPrecondition, "stdio transport: empty command");
}

StdioTransport::~StdioTransport() { stop(); }

void StdioTransport::start() {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0) throw Error(ErrorKind::kTransport, "stdio transport: pipe failed");
  if (pipe2(out_pipe, O_CLOEXEC) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw Error(ErrorKind::kTransport, "stdio transport: pipe failed");
  }
  const pid_t pid = fork();
  if (pid < 0) throw Error(ErrorKind::kTransport, "stdio transport: fork failed");
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  buffer_.clear();
}

void StdioTransport::stop() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    kill(pid_, SIGTERM);
    waitpid(pid_, nullptr, 0);
  }
  pid_ = -1;
  buffer_.clear();
}

json StdioTransport::call(std::string_view endpoint, const json& body) {
  std::lock_guard lock(mu_);
  if (pid_ < 0) start();

  const std::string line = body.dump() + "\n";
  // SIGPIPE would kill the process when the child has exited.
  struct sigaction ignore {};
  struct sigaction previous {};
  ignore.sa_handler = SIG_IGN;
  sigaction(SIGPIPE, &ignore, &previous);
  std::size_t written = 0;
  while (written < line.size()) {
    const auto n = write(to_child_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      sigaction(SIGPIPE, &previous, nullptr);
      stop();
      throw Error(ErrorKind::kTransport, "stdio " + std::string(endpoint) + ": write failed: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  sigaction(SIGPIPE, &previous, nullptr);

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  for (;;) {
    const auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      const auto reply = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return parse_reply(reply, "stdio " + std::string(endpoint));
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) {
      stop();
      throw Error(ErrorKind::kTimeout, "stdio " + std::string(endpoint) + ": no reply within " +
                                           std::to_string(timeout_.count()) + " ms");
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0 && errno == EINTR) continue;
    if (ready <= 0) continue;
    char buf[4096];
    const auto n = read(from_child_, buf, sizeof(buf));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw Error(ErrorKind::kTransport, "stdio " + std::string(endpoint) + ": peer closed the stream");
    }
    buffer_.append(buf, static_cast<std::size_t>(n));
  }
}

GenerationResponse RemoteBackend::generate(const GenerationRequest& request) {
  validate(request);
  const auto body = to_json(request);
  return with_retries(retries_, [&] {
    auto response = response_from_json(transport_->call("generate", body));
    if (response.prompt_id != request.prompt_id) {
      throw Error(ErrorKind::kProtocol, "backend answered prompt '" + response.prompt_id + "' for request '" +
                                            request.prompt_id + "'");
    }
    return response;
  });
}

QualityScore RemoteJudge::judge(const JudgeRequest& request) {
  const auto body = judge_request_body(request);
  return with_retries(retries_, [&] {
    const auto reply = transport_->call("judge", body);
    if (reply.is_object() && reply.contains("reply") && reply["reply"].is_string()) {
      return QualityScore{request.prompt_id, parse_judge_reply(reply["reply"].get<std::string>())};
    }
    if (reply.is_object() && reply.contains("score") && reply["score"].is_number_integer()) {
      const int score = reply["score"].get<int>();
      if (score < 0 || score > 9) {
        throw Error(ErrorKind::kProtocol, "judge score out of range: raw payload " + reply.dump());
      }
      return QualityScore{request.prompt_id, score};
    }
    throw Error(ErrorKind::kProtocol, "judge reply lacks 'reply' or integer 'score': raw payload " + reply.dump());
  });
}

}  // namespace ifprobe::backend
