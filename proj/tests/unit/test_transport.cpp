#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "ifprobe/error.hpp"
#include "ifprobe/transport.hpp"

#include <httplib.h>

using namespace ifprobe;
using namespace ifprobe::backend;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kInvariant;
}

std::string peer(const std::string& mode) { return std::string("sh ") + IFPROBE_PEER_SCRIPT + " " + mode; }

class TestServer {
 public:
  TestServer() {
    server_.Post("/api/generate", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      if (fail_first > 0) {
        --fail_first;
        res.status = 503;
        return;
      }
      const auto body = json::parse(req.body);
      last_request = body;
      json out = {{"prompt_id", body["prompt_id"]}, {"response_text", "served"}, {"representation", {1.0, 2.0}}};
      res.set_content(out.dump(), "application/json");
    });
    server_.Post("/api/judge", [this](const httplib::Request& req, httplib::Response& res) {
      last_request = json::parse(req.body);
      res.set_content(reply, "application/json");
    });
    server_.Post("/api/slow", [](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(1500ms);
      res.set_content("{}", "application/json");
    });
    port = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~TestServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/api"; }

  int port = 0;
  std::atomic<int> calls{0};
  std::atomic<int> fail_first{0};
  std::string reply = R"({"reply":"8"})";
  json last_request;

 private:
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace

TEST_CASE("http backend and judge") {
  TestServer server;
  auto transport = std::make_shared<HttpTransport>(server.url(), 2000ms);
  RemoteBackend backend(transport, 0, 32);
  const Steering st{Eigen::Vector2d(0.6, 0.8), 0.3, 32, repstore::TokenPosition::kFirst};
  const auto resp = backend.generate({"p1", "hello", st});
  CHECK(resp.response_text == "served");
  CHECK(resp.representation->size() == 2);
  CHECK(server.last_request["steering"]["alpha"] == 0.3);
  CHECK(server.last_request["steering"]["direction"].size() == 2);
  CHECK(backend.last_layer() == 32);

  RemoteJudge judge(transport);
  CHECK(judge.judge({"p1", "Write.", "Answer."}).score == 8);
  CHECK(server.last_request["prompt"] == render_judge_prompt("Write.", "Answer."));
  server.reply = R"({"score":3})";
  CHECK(judge.judge({"p1", "Write.", "Answer."}).score == 3);
  server.reply = R"({"reply":"great!"})";
  CHECK(kind_of([&] { judge.judge({"p1", "Write.", "Answer."}); }) == ErrorKind::kProtocol);
  server.reply = "not json";
  CHECK(kind_of([&] { judge.judge({"p1", "Write.", "Answer."}); }) == ErrorKind::kProtocol);
}

TEST_CASE("http retries transport failures only") {
  TestServer server;
  auto transport = std::make_shared<HttpTransport>(server.url(), 2000ms);
  server.fail_first = 2;
  RemoteBackend retrying(transport, 2);
  CHECK(retrying.generate({"p", "x", std::nullopt}).response_text == "served");
  CHECK(server.calls == 3);

  server.fail_first = 5;
  server.calls = 0;
  RemoteBackend once(transport, 1);
  CHECK(kind_of([&] { once.generate({"p", "x", std::nullopt}); }) == ErrorKind::kTransport);
  CHECK(server.calls == 2);
}

TEST_CASE("http timeout and unreachable peer") {
  TestServer server;
  HttpTransport slow(server.url(), 200ms);
  CHECK(kind_of([&] { slow.call("slow", json::object()); }) == ErrorKind::kTimeout);
  HttpTransport dead("http://127.0.0.1:1", 200ms);
  CHECK(kind_of([&] { dead.call("generate", json::object()); }) == ErrorKind::kTransport);
}

TEST_CASE("stdio backend and judge") {
  RemoteBackend backend(std::make_shared<StdioTransport>(peer("generate"), 5000ms));
  CHECK(backend.generate({"a", "hi", std::nullopt}).response_text == "echo:hi");
  const Steering st{Eigen::Vector2d(1, 0), -0.5, 3, repstore::TokenPosition::kFirst};
  CHECK(backend.generate({"b", "yo", st}).response_text == "echo:yo alpha=-0.5");
  CHECK_FALSE(backend.last_layer());

  RemoteJudge judge(std::make_shared<StdioTransport>(peer("judge"), 5000ms));
  CHECK(judge.judge({"a", "t", "r"}).score == 7);
}

TEST_CASE("stdio failures") {
  StdioTransport garbage(peer("garbage"), 5000ms);
  CHECK(kind_of([&] { garbage.call("generate", json{{"prompt_id", "a"}}); }) == ErrorKind::kProtocol);

  StdioTransport slow(peer("slow"), 300ms);
  const auto t0 = std::chrono::steady_clock::now();
  CHECK(kind_of([&] { slow.call("generate", json{{"prompt_id", "a"}}); }) == ErrorKind::kTimeout);
  CHECK(std::chrono::steady_clock::now() - t0 < 3s);

  RemoteBackend wrong(std::make_shared<StdioTransport>(peer("wrong-id"), 5000ms));
  CHECK(kind_of([&] { wrong.generate({"a", "x", std::nullopt}); }) == ErrorKind::kProtocol);

  // The peer exits after one reply; the next call restarts it.
  auto flaky = std::make_shared<StdioTransport>(peer("exit-after-one"), 5000ms);
  RemoteBackend no_retry(flaky, 0);
  CHECK(no_retry.generate({"a", "x", std::nullopt}).response_text == "once");
  CHECK(kind_of([&] { no_retry.generate({"b", "x", std::nullopt}); }) == ErrorKind::kTransport);
  CHECK(no_retry.generate({"c", "x", std::nullopt}).response_text == "once");

  StdioTransport missing("/nonexistent/peer-binary", 1000ms);
  CHECK(kind_of([&] { missing.call("generate", json::object()); }) == ErrorKind::kTransport);
}
