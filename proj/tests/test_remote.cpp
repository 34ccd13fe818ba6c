#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "pljp/llmgate.hpp"

using namespace pljp;
using namespace std::chrono_literals;

namespace {

// Local HTTP server on an ephemeral port, stopped on destruction.
class LocalServer {
 public:
  explicit LocalServer(httplib::Server::Handler handler) {
    server_.Post("/v1/chat", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string chat_reply(const std::string& content, const std::string& finish = "stop") {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}},
                                       {"finish_reason", finish}}}}}
      .dump();
}

LlmRequest request() {
  LlmRequest r;
  r.prompt = "hello";
  r.tag = "judge.article/x";
  return r;
}

RemoteConfig config_for(const LocalServer& server) {
  RemoteConfig c;
  c.endpoint = server.endpoint();
  c.model = "test-model";
  c.timeout = 300ms;
  return c;
}

}  // namespace

TEST_SUITE("remote") {
  TEST_CASE("backoff schedule") {
    RemoteConfig c;
    CHECK(backoff_delay(c, 0) == 1000ms);
    CHECK(backoff_delay(c, 1) == 4000ms);
  }

  TEST_CASE("successful chat completion sends the credential and body") {
    std::string auth, model, content;
    LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
      auth = req.get_header_value("Authorization");
      const auto body = nlohmann::json::parse(req.body);
      model = body["model"];
      content = body["messages"][0]["content"];
      res.set_content(chat_reply("LABEL: theft"), "application/json");
    });
    RemoteBackend backend(config_for(server), "secret");
    CHECK(backend.generate(request()) == "LABEL: theft");
    CHECK(auth == "Bearer secret");
    CHECK(model == "test-model");
    CHECK(content == "hello");
    CHECK(backend.attempts() == 1);
  }

  TEST_CASE("server errors are retried with backoff") {
    std::atomic<int> hits{0};
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
      if (++hits < 3) {
        res.status = 503;
        return;
      }
      res.set_content(chat_reply("ok"), "application/json");
    });
    std::vector<std::chrono::milliseconds> sleeps;
    RemoteBackend backend(config_for(server), "k", [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    CHECK(backend.generate(request()) == "ok");
    CHECK(backend.attempts() == 3);
    CHECK(sleeps == std::vector<std::chrono::milliseconds>{1000ms, 4000ms});
  }

  TEST_CASE("persistent timeouts surface after three attempts") {
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(800ms);
      res.set_content(chat_reply("late"), "application/json");
    });
    RemoteBackend backend(config_for(server), "k", [](std::chrono::milliseconds) {});
    try {
      backend.generate(request());
      FAIL("expected remote_timeout");
    } catch (const LlmError& e) {
      CHECK(e.kind() == LlmErrc::remote_timeout);
    }
    CHECK(backend.attempts() == 3);
  }

  TEST_CASE("refusals are not retried") {
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
      res.set_content(chat_reply("", "content_filter"), "application/json");
    });
    RemoteBackend backend(config_for(server), "k", [](std::chrono::milliseconds) {});
    try {
      backend.generate(request());
      FAIL("expected remote_refusal");
    } catch (const LlmError& e) {
      CHECK(e.kind() == LlmErrc::remote_refusal);
    }
    CHECK(backend.attempts() == 1);
  }

  TEST_CASE("client errors map to refusal") {
    LocalServer server([&](const httplib::Request&, httplib::Response& res) {
      res.status = 400;
      res.set_content("bad request", "text/plain");
    });
    RemoteBackend backend(config_for(server), "k", [](std::chrono::milliseconds) {});
    CHECK_THROWS_AS(backend.generate(request()), LlmError);
    CHECK(backend.attempts() == 1);
  }

  TEST_CASE("configuration problems") {
    RemoteConfig c;
    c.endpoint = "not a url";
    CHECK_THROWS_AS(RemoteBackend(c, "k"), LlmError);
    c.endpoint = "http://127.0.0.1:1/x";
    c.api_key_env = "PLJP_TEST_SURELY_UNSET_VARIABLE";
    CHECK_THROWS_AS([&] { RemoteBackend b(c); }(), LlmError);
    const auto parsed = RemoteConfig::from_json(
        nlohmann::json::parse(R"({"endpoint": "http://h/p", "timeout_ms": 50, "max_attempts": 2})"));
    CHECK(parsed.timeout == 50ms);
    CHECK(parsed.max_attempts == 2);
  }
}
