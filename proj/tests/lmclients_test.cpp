#include <atomic>
#include <cmath>
#include <filesystem>
#include <mutex>
#include <thread>

#include <gtest/gtest.h>

#include "httplib.h"
#include "sumfeat/lmclients.hpp"
#include "sumfeat/parallel.hpp"
#include "sumfeat/stubs.hpp"

using namespace sumfeat;
using nlohmann::json;

namespace {

/// httplib server on an ephemeral localhost port, stopped on destruction.
class LocalServer {
 public:
  LocalServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  httplib::Server& operator*() { return server_; }
  httplib::Server* operator->() { return &server_; }
  HttpEndpoint endpoint(std::string model = "test-model") const {
    HttpEndpoint e;
    e.base_url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/";
    e.model = std::move(model);
    e.api_key = "sk-test-secret";
    e.timeout = std::chrono::seconds(5);
    e.retry.sleep = [](std::chrono::milliseconds) {};
    return e;
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() /
           ("sumfeat_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

class ConstantLogProb : public LogProbProvider {
 public:
  explicit ConstantLogProb(double lp) : lp_(lp) {}
  std::vector<TokenLogProb> score_continuation(std::string_view, std::string_view cont) override {
    ++calls;
    std::vector<TokenLogProb> out;
    for (char c : cont) out.push_back({std::string(1, c), lp_});
    return out;
  }
  std::string model_id() const override { return "const"; }
  std::atomic<int> calls{0};

 private:
  double lp_;
};

/// Reports a context overflow while the context exceeds `limit` bytes.
class SmallWindow : public LogProbProvider {
 public:
  explicit SmallWindow(std::size_t limit) : limit_(limit) {}
  std::vector<TokenLogProb> score_continuation(std::string_view ctx, std::string_view) override {
    seen.emplace_back(ctx);
    if (ctx.size() > limit_) throw ProviderError(ProviderErrorKind::kContextOverflow, "too long", 400);
    return {{"a", -1.0}, {"b", -3.0}};
  }
  std::string model_id() const override { return "small"; }
  std::vector<std::string> seen;

 private:
  std::size_t limit_;
};

}  // namespace

TEST(ConditionalPerplexity, ConstantLogProbGivesExpOfMinusLogProb) {
  for (double lp : {-0.1, -1.0, -2.5, -7.25}) {
    ConstantLogProb p(lp);
    const auto cp = conditional_perplexity("Some source.", "A summary of it.", p);
    EXPECT_NEAR(cp.value, std::exp(-lp), 1e-12);
    EXPECT_EQ(cp.token_count, std::string("A summary of it.").size());
    EXPECT_FALSE(cp.truncated);
  }
}

TEST(ConditionalPerplexity, ContextIsSourcePlusNewline) {
  SmallWindow p(1000);
  const auto cp = conditional_perplexity("The source.", "Sum.", p);
  ASSERT_EQ(p.seen.size(), 1u);
  EXPECT_EQ(p.seen[0], "The source.\n");
  EXPECT_NEAR(cp.value, std::exp(2.0), 1e-12);
}

TEST(ConditionalPerplexity, OverflowKeepsTailOfSource) {
  std::string source;
  for (int i = 0; i < 200; ++i) source += "word" + std::to_string(i) + " ";
  SmallWindow p(300);
  const auto cp = conditional_perplexity(source, "Sum.", p);
  EXPECT_TRUE(cp.truncated);
  EXPECT_LE(cp.source_bytes_used + 1, 300u);
  EXPECT_GT(p.seen.size(), 1u);
  // Each retry keeps a suffix of the previous context.
  const std::string last = p.seen.back().substr(0, p.seen.back().size() - 1);
  EXPECT_EQ(source.substr(source.size() - last.size()), last);
}

TEST(ConditionalPerplexity, RejectsBadInput) {
  ConstantLogProb ok(-1.0);
  EXPECT_THROW(conditional_perplexity("  ", "x", ok), TextError);
  EXPECT_THROW(conditional_perplexity("x", "\n", ok), TextError);
  ConstantLogProb positive(0.5);
  EXPECT_THROW(conditional_perplexity("x", "y", positive), ProviderError);
  ConstantLogProb nan(std::nan(""));
  EXPECT_THROW(conditional_perplexity("x", "y", nan), ProviderError);
}

TEST(Cosine, BasicValuesAndErrors) {
  const std::vector<double> a = {1, 0, 0}, b = {0, 2, 0}, c = {3, 0, 0}, d = {-1, 0, 0};
  EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, c), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(a, d), -1.0);
  const std::vector<double> two = {1, 1}, zero = {0, 0, 0};
  EXPECT_THROW(cosine_similarity(a, two), Error);
  EXPECT_THROW(cosine_similarity(a, zero), Error);
}

TEST(Stubs, DeterministicAndSane) {
  StubLogProbProvider lp;
  const auto t1 = lp.score_continuation("The council met.\n", "The council voted today.");
  const auto t2 = lp.score_continuation("The council met.\n", "The council voted today.");
  ASSERT_EQ(t1.size(), 4u);
  EXPECT_EQ(t1[0].logprob, -0.25);  // "the" appears in the context
  EXPECT_EQ(t1[1].logprob, -0.25);
  EXPECT_LT(t1[2].logprob, -1.0 + 1e-12);
  for (std::size_t i = 0; i < t1.size(); ++i) EXPECT_EQ(t1[i].logprob, t2[i].logprob);

  StubEmbeddingProvider emb;
  EXPECT_EQ(emb.embed("abc def"), emb.embed("abc def"));
  EXPECT_NEAR(pair_similarity("same words", "same words", emb), 1.0, 1e-12);

  StubChatProvider chat;
  const double s = std::stod(chat.complete("prompt").substr(7));
  EXPECT_GE(s, 1.0);
  EXPECT_LE(s, 5.0);
}

TEST(Retry, BackoffIsExponentialAndBounded) {
  RetryPolicy policy;
  std::vector<long long> delays;
  policy.sleep = [&](std::chrono::milliseconds d) { delays.push_back(d.count()); };
  int calls = 0;
  EXPECT_THROW(with_retries(policy,
                            [&]() -> int {
                              ++calls;
                              throw ProviderError(ProviderErrorKind::kServer, "down", 503);
                            }),
               ProviderError);
  EXPECT_EQ(calls, 4);
  EXPECT_EQ(delays, (std::vector<long long>{250, 500, 1000}));

  calls = 0;
  EXPECT_THROW(with_retries(policy,
                            [&]() -> int {
                              ++calls;
                              throw ProviderError(ProviderErrorKind::kAuth, "no", 401);
                            }),
               ProviderError);
  EXPECT_EQ(calls, 1);
}

TEST(DiskCacheTest, HitMissAndPersistence) {
  const auto dir = temp_dir("cache");
  ConstantLogProb inner(-1.0);
  {
    DiskCache cache(dir);
    CachedLogProbProvider cached(inner, cache);
    const auto a = cached.score_continuation("ctx", "abc");
    const auto b = cached.score_continuation("ctx", "abc");
    EXPECT_EQ(inner.calls, 1);
    EXPECT_EQ(cache.hits(), 1);
    EXPECT_EQ(cache.misses(), 1);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].logprob, b[i].logprob);
    cached.score_continuation("ct", "xabc");  // same concatenation, different split
    EXPECT_EQ(inner.calls, 2);
  }
  DiskCache reopened(dir);
  CachedLogProbProvider again(inner, reopened);
  again.score_continuation("ctx", "abc");
  EXPECT_EQ(inner.calls, 2);
  EXPECT_EQ(reopened.hits(), 1);

  const auto key = DiskCache::make_key("const", "score_continuation", {"ctx", "abc"});
  const auto entry = json::parse(read_file(dir / (key + ".json")));
  EXPECT_EQ(entry.at("key"), key);
  EXPECT_TRUE(entry.contains("created_at"));
  std::filesystem::remove_all(dir);
}

TEST(DiskCacheTest, KeyDependsOnModel) {
  EXPECT_NE(DiskCache::make_key("m1", "embed", {"x"}), DiskCache::make_key("m2", "embed", {"x"}));
  EXPECT_NE(DiskCache::make_key("m", "embed", {"x"}), DiskCache::make_key("m", "complete", {"x"}));
}

TEST(DiskCacheTest, ConcurrentAccess) {
  const auto dir = temp_dir("cache_mt");
  DiskCache cache(dir);
  std::atomic<int> computed{0};
  parallel_for(400, 16, [&](std::size_t i) {
    const auto key = DiskCache::make_key("m", "op", {std::to_string(i % 20)});
    const auto v = cached_call(&cache, key, [&] {
      ++computed;
      return "value-" + std::to_string(i % 20);
    });
    EXPECT_EQ(v, "value-" + std::to_string(i % 20));
  });
  EXPECT_GE(computed.load(), 20);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    EXPECT_EQ(e.path().extension(), ".json");
    ++files;
  }
  EXPECT_EQ(files, 20u);
  std::filesystem::remove_all(dir);
}

TEST(HttpProviders, CompletionsWireFormatAndTokenSelection) {
  LocalServer server;
  json captured;
  std::string auth;
  server->Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    captured = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    // prompt = "Src é.\n" (7 code points) + "Hi there" (8 code points)
    json r = {{"choices",
               {{{"text", "!"},
                 {"logprobs",
                  {{"tokens", {"Src", " é", ".\n", "Hi", " there", "!"}},
                   {"token_logprobs", {nullptr, -2.0, -0.5, -1.5, -0.25, -3.0}},
                   {"text_offset", {0, 3, 5, 7, 9, 15}}}}}}}};
    res.set_content(r.dump(), "application/json");
  });
  HttpLogProbProvider p(server.endpoint("phi-test"));
  const auto tokens = p.score_continuation("Src é.\n", "Hi there");
  ASSERT_EQ(tokens.size(), 2u);
  EXPECT_EQ(tokens[0].token, "Hi");
  EXPECT_EQ(tokens[0].logprob, -1.5);
  EXPECT_EQ(tokens[1].logprob, -0.25);
  EXPECT_EQ(captured.at("model"), "phi-test");
  EXPECT_EQ(captured.at("prompt"), "Src é.\nHi there");
  EXPECT_EQ(captured.at("echo"), true);
  EXPECT_EQ(captured.at("logprobs"), 0);
  EXPECT_EQ(captured.at("max_tokens"), 1);
  EXPECT_EQ(captured.at("temperature"), 0);
  EXPECT_EQ(auth, "Bearer sk-test-secret");
  EXPECT_EQ(p.model_id(), "phi-test");
}

TEST(HttpProviders, EmbeddingsAndChatWireFormat) {
  LocalServer server;
  json chat_body;
  server->Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    const double len = static_cast<double>(body.at("input").get<std::string>().size());
    res.set_content(json{{"data", {{{"embedding", {1.0, len}}}}}}.dump(), "application/json");
  });
  server->Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    chat_body = json::parse(req.body);
    res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "Score: 4"}}}}}}}.dump(),
                    "application/json");
  });
  HttpEmbeddingProvider emb(server.endpoint("emb"));
  EXPECT_EQ(emb.embed("abcd"), (std::vector<double>{1.0, 4.0}));
  EXPECT_NEAR(pair_similarity("a", "a", emb), 1.0, 1e-15);

  HttpChatProvider chat(server.endpoint("judge"), 7);
  EXPECT_EQ(chat.complete("Rate this."), "Score: 4");
  EXPECT_EQ(chat_body.at("messages").at(0).at("content"), "Rate this.");
  EXPECT_EQ(chat_body.at("messages").at(0).at("role"), "user");
  EXPECT_EQ(chat_body.at("temperature"), 0);
  EXPECT_EQ(chat_body.at("seed"), 7);
}

TEST(HttpProviders, RetriesTransientStatus) {
  LocalServer server;
  std::atomic<int> calls{0};
  server->Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    if (++calls < 3) {
      res.status = calls == 1 ? 429 : 502;
      return;
    }
    res.set_content(R"({"data":[{"embedding":[0.5,0.5]}]})", "application/json");
  });
  HttpEmbeddingProvider emb(server.endpoint());
  EXPECT_EQ(emb.embed("x"), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(calls.load(), 3);
}

TEST(HttpProviders, ClassifiesFailures) {
  LocalServer server;
  std::atomic<int> calls{0};
  server->Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.status = 401;
    res.set_content(R"({"error":"bad key"})", "application/json");
  });
  server->Post("/v1/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.status = 400;
    res.set_content(R"({"error":{"code":"context_length_exceeded"}})", "application/json");
  });
  server->Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content("not json", "text/plain");
  });

  HttpChatProvider chat(server.endpoint());
  try {
    chat.complete("x");
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::kAuth);
    EXPECT_EQ(e.status(), 401);
  }
  EXPECT_EQ(calls.load(), 1);

  HttpLogProbProvider lp(server.endpoint());
  try {
    lp.score_continuation("ctx\n", "sum");
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::kContextOverflow);
  }

  HttpEmbeddingProvider emb(server.endpoint());
  try {
    emb.embed("x");
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::kValidation);
  }
}

TEST(HttpProviders, UnreachableIsTransport) {
  HttpEndpoint e;
  e.base_url = "http://127.0.0.1:9/v1";
  e.model = "m";
  e.timeout = std::chrono::seconds(2);
  e.retry.max_retries = 1;
  e.retry.sleep = [](std::chrono::milliseconds) {};
  HttpChatProvider chat(e);
  try {
    chat.complete("x");
    FAIL();
  } catch (const ProviderError& err) {
    EXPECT_EQ(err.kind(), ProviderErrorKind::kTransport);
  }
}

TEST(HttpProviders, RedactsSecrets) {
  EXPECT_EQ(lm_detail::redact("key sk-abc and sk-abc", "sk-abc"), "key *** and ***");
  EXPECT_THROW(lm_detail::split_url("localhost:8000"), ConfigError);
  const auto u = lm_detail::split_url("https://api.example.com/v1/");
  EXPECT_EQ(u.origin, "https://api.example.com");
  EXPECT_EQ(u.prefix, "/v1");
}
