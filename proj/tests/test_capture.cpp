#include <doctest.h>

#include <cstdio>
#include <unistd.h>
#include <fstream>
#include <random>

#include "mcpscan/capture.hpp"
#include "mcpscan/strings.hpp"

using namespace mcpscan;
using capture::HttpExchange;
using capture::Layer;

namespace {

HttpExchange make_exchange(const std::string& method, const std::string& url) {
    HttpExchange ex;
    ex.sequence_no = 1;
    ex.timestamp = 1000;
    ex.method = method;
    ex.url = url;
    ex.status = 200;
    ex.session_tag = "t";
    return ex;
}

std::string temp_path(const char* name) {
    return std::string("/tmp/mcpscan_test_") + name + "_" + std::to_string(::getpid());
}

}  // namespace

TEST_CASE("authorize request query extraction") {
    auto ex = make_exchange(
        "GET",
        "http://as.example/authorize?client_id=abc&state=xyz&code_challenge=Q"
        "&code_challenge_method=S256&redirect_uri=http%3A%2F%2F127.0.0.1%3A7777%2Fcb");
    auto p = capture::extract_oauth_params(ex);
    REQUIRE(p.has_value());
    CHECK(*p->client_id == "abc");
    CHECK(*p->state == "xyz");
    CHECK(*p->code_challenge == "Q");
    CHECK(*p->code_challenge_method == "S256");
    CHECK(*p->redirect_uri == "http://127.0.0.1:7777/cb");
    CHECK_FALSE(p->token_endpoint_hit);
}

TEST_CASE("location header contributes the authorization response") {
    auto ex = make_exchange("POST", "http://as.example/authorize/decision");
    ex.status = 302;
    ex.response_headers.emplace_back("Location", "http://127.0.0.1:7777/cb?code=C1&state=xyz");
    auto p = capture::extract_oauth_params(ex);
    REQUIRE(p.has_value());
    CHECK(*p->code == "C1");
    CHECK(*p->state == "xyz");
    CHECK_FALSE(p->redirect_uri.has_value());
}

TEST_CASE("location without code or error contributes nothing") {
    auto ex = make_exchange("POST", "http://as.example/authorize/decision");
    ex.status = 302;
    ex.response_headers.emplace_back(
        "Location", "http://up.example/authorize?client_id=x&state=nested-blob");
    auto p = capture::extract_oauth_params(ex);
    CHECK_FALSE(p.has_value());
}

TEST_CASE("token form body extraction") {
    auto ex = make_exchange("POST", "http://as.example/token");
    ex.request_headers.emplace_back("Content-Type", "application/x-www-form-urlencoded");
    ex.request_body = "grant_type=authorization_code&code=C1";
    auto p = capture::extract_oauth_params(ex);
    REQUIRE(p.has_value());
    CHECK(p->token_endpoint_hit);
    CHECK(*p->code == "C1");
    CHECK(*p->grant_type == "authorization_code");
}

TEST_CASE("extraction never fabricates fields") {
    auto ex = make_exchange("GET", "http://plain.example/index.html");
    CHECK_FALSE(capture::extract_oauth_params(ex).has_value());

    auto ex2 = make_exchange("POST", "http://api.example/upload");
    ex2.request_headers.emplace_back("Content-Type", "application/json");
    ex2.request_body = R"({"name":"no oauth here","size":12})";
    CHECK_FALSE(capture::extract_oauth_params(ex2).has_value());
}

TEST_CASE("malformed percent-encoding is kept raw and flagged") {
    auto ex = make_exchange("GET", "http://as.example/authorize?state=%zz%bad&client_id=c");
    auto p = capture::extract_oauth_params(ex);
    REQUIRE(p.has_value());
    CHECK(p->state.has_value());
    CHECK_FALSE(p->raw_flagged.empty());
}

TEST_CASE("layer classification") {
    CHECK(capture::classify_layer("http://127.0.0.1:33418/callback") == Layer::l1_local_client);
    CHECK(capture::classify_layer("vscode://auth/cb") == Layer::l1_local_client);
    CHECK(capture::classify_layer("http://localhost:9000/cb") == Layer::l1_local_client);
    CHECK(capture::classify_layer("https://mcp.example.com/oauth/callback") ==
          Layer::l2_upstream_delegated);
    CHECK(capture::classify_layer("%% garbage %%") == Layer::unknown);
}

TEST_CASE("layer classification is pure") {
    std::mt19937 rng(3);
    for (int i = 0; i < 100; ++i) {
        std::string s;
        for (int j = 0; j < 24; ++j) s += static_cast<char>('!' + rng() % 90);
        CHECK(capture::classify_layer(s) == capture::classify_layer(s));
    }
}

TEST_CASE("same-deployment refinement marks callbacks to the target as L2") {
    capture::OAuthParamSet p;
    p.redirect_uri = "http://127.0.0.1:4444/oauth/upstream/callback";
    auto base = capture::classify_layer(*p.redirect_uri);
    CHECK(base == Layer::l1_local_client);
    auto origin = Url::parse("http://127.0.0.1:4444/mcp");
    CHECK(capture::refine_layer(base, p, origin) == Layer::l2_upstream_delegated);

    // A different loopback port is a genuine local client.
    capture::OAuthParamSet local;
    local.redirect_uri = "http://127.0.0.1:5555/cb";
    CHECK(capture::refine_layer(capture::classify_layer(*local.redirect_uri), local, origin) ==
          Layer::l1_local_client);

    // Same registrable domain on remote hosts.
    capture::OAuthParamSet remote;
    remote.redirect_uri = "https://auth.example.com/cb";
    auto remote_origin = Url::parse("https://mcp.example.com/mcp");
    CHECK(capture::refine_layer(capture::classify_layer(*remote.redirect_uri), remote,
                                remote_origin) == Layer::l2_upstream_delegated);
}

TEST_CASE("native flow log round trips") {
    std::vector<HttpExchange> exchanges;
    std::mt19937 rng(17);
    for (int i = 0; i < 12; ++i) {
        HttpExchange ex;
        ex.sequence_no = i + 1;
        ex.timestamp = 1700000000000LL + i;
        ex.method = i % 2 ? "POST" : "GET";
        ex.url = "http://h.example/p" + std::to_string(i);
        ex.request_headers = {{"Accept", "application/json"}};
        for (int j = 0; j < 8; ++j) ex.request_body += static_cast<char>(rng() & 0xff);
        ex.status = 200 + i;
        ex.response_headers = {{"Content-Type", "text/plain"}};
        ex.response_body = "resp-" + std::to_string(i);
        ex.session_tag = "s" + std::to_string(i % 3);
        exchanges.push_back(ex);
    }
    auto path = temp_path("roundtrip");
    capture::write_flow_log(path, exchanges);
    auto back = capture::ingest_flow_log(path);
    REQUIRE(back.size() == exchanges.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].sequence_no == exchanges[i].sequence_no);
        CHECK(back[i].url == exchanges[i].url);
        CHECK(back[i].request_body == exchanges[i].request_body);
        CHECK(back[i].response_body == exchanges[i].response_body);
        CHECK(back[i].session_tag == exchanges[i].session_tag);
    }
    std::remove(path.c_str());
}

TEST_CASE("HAR ingestion") {
    const char* har = R"({"log":{"version":"1.2","entries":[
      {"startedDateTime":"2026-01-02T10:00:00.000Z","pageref":"page_1",
       "request":{"method":"GET","url":"http://as.example/authorize?client_id=c&state=s",
                  "headers":[{"name":"Accept","value":"text/html"}]},
       "response":{"status":200,"headers":[{"name":"Content-Type","value":"text/html"}],
                   "content":{"text":"<html>consent</html>"}}},
      {"startedDateTime":"2026-01-02T10:00:05.000Z","pageref":"page_1",
       "request":{"method":"POST","url":"http://as.example/token",
                  "headers":[{"name":"Content-Type","value":"application/x-www-form-urlencoded"}],
                  "postData":{"text":"grant_type=authorization_code&code=C9"}},
       "response":{"status":200,"headers":[],"content":{"text":"{}"}}}
    ]}})";
    auto path = temp_path("har");
    {
        std::ofstream out(path);
        out << har;
    }
    capture::IngestStats stats;
    auto exchanges = capture::ingest_flow_log(path, &stats);
    REQUIRE(exchanges.size() == 2);
    CHECK(stats.total == 2);
    CHECK(stats.skipped == 0);
    CHECK(exchanges[0].session_tag == "page_1");
    CHECK(exchanges[0].timestamp < exchanges[1].timestamp);
    CHECK(exchanges[1].request_body == "grant_type=authorization_code&code=C9");
    std::remove(path.c_str());
}

TEST_CASE("empty flow log yields an empty capture") {
    auto path = temp_path("empty");
    {
        std::ofstream out(path);
    }
    CHECK(capture::ingest_flow_log(path).empty());
    std::remove(path.c_str());
}

TEST_CASE("corrupt records are skipped with a warning count") {
    std::vector<HttpExchange> exchanges;
    for (int i = 0; i < 19; ++i) {
        HttpExchange ex = make_exchange("GET", "http://h/x" + std::to_string(i));
        ex.sequence_no = i + 1;
        exchanges.push_back(ex);
    }
    auto path = temp_path("corrupt");
    capture::write_flow_log(path, exchanges);
    {
        std::ofstream out(path, std::ios::app);
        out << "{this is not json}\n";
    }
    capture::IngestStats stats;
    auto back = capture::ingest_flow_log(path, &stats);
    CHECK(back.size() == 19);
    CHECK(stats.total == 20);
    CHECK(stats.skipped == 1);
    std::remove(path.c_str());
}

TEST_CASE("more than 10 percent corrupt records is a hard error") {
    auto path = temp_path("verycorrupt");
    {
        std::ofstream out(path);
        HttpExchange ex = make_exchange("GET", "http://h/ok");
        out << capture::exchange_to_json_line(ex) << "\n";
        for (int i = 0; i < 5; ++i) out << "garbage line\n";
    }
    CHECK_THROWS_AS(capture::ingest_flow_log(path), capture::IngestError);
    std::remove(path.c_str());
}
