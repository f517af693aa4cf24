#include <doctest.h>

#include "mcpscan/oauth.hpp"
#include "support/lab_util.hpp"

using namespace mcpscan;

namespace {
net::Timeouts fast{2, 5};
}

TEST_CASE("discovery resolves the lab metadata chain") {
    auto the_lab = testsupport::spawn();
    net::Client client(fast);
    auto disc = oauth::discover(client, the_lab->mcp_url());
    REQUIRE(disc.ok);
    REQUIRE(disc.resource_metadata.has_value());
    CHECK(disc.resource_metadata->authorization_servers.size() == 1);
    CHECK(disc.auth_server.issuer == the_lab->auth_origin());
    CHECK(disc.auth_server.authorization_endpoint == the_lab->auth_origin() + "/authorize");
    CHECK(disc.auth_server.token_endpoint == the_lab->auth_origin() + "/token");
    REQUIRE(disc.auth_server.registration_endpoint.has_value());
    REQUIRE(disc.auth_server.code_challenge_methods_supported.has_value());
    CHECK(disc.auth_server.code_challenge_methods_supported->front() == "S256");
}

TEST_CASE("discovery falls back to the OIDC path") {
    auto cfg = testsupport::lab_config();
    cfg.oidc_discovery_only = true;
    auto the_lab = lab::Lab::spawn(cfg);
    net::Client client(fast);
    auto disc = oauth::discover(client, the_lab->mcp_url());
    REQUIRE(disc.ok);
    CHECK(disc.auth_server.fetched_from.find("openid-configuration") != std::string::npos);
}

TEST_CASE("discovery error lists the attempted urls") {
    auto cfg = testsupport::lab_config();
    cfg.auth_mode = lab::AuthMode::static_token;
    auto the_lab = lab::Lab::spawn(cfg);
    net::Client client(fast);
    auto disc = oauth::discover(client, the_lab->mcp_url());
    CHECK_FALSE(disc.ok);
    CHECK(disc.attempted_urls.size() >= 2);
    CHECK_FALSE(disc.error.empty());
}

TEST_CASE("registration against the open and hardened DCR endpoint") {
    net::Client client(fast);

    auto open_lab = testsupport::spawn({1});
    auto open_meta = oauth::discover(client, open_lab->mcp_url());
    REQUIRE(open_meta.ok);
    auto issued = oauth::register_client(client, open_meta.auth_server,
                                         {"https://evil.example/cb"}, "probe");
    REQUIRE(issued.ok());
    CHECK_FALSE(issued.registration.client_id.empty());

    auto strict_lab = testsupport::spawn();
    auto strict_meta = oauth::discover(client, strict_lab->mcp_url());
    REQUIRE(strict_meta.ok);
    auto rejected = oauth::register_client(client, strict_meta.auth_server,
                                           {"https://evil.example/cb"}, "probe");
    CHECK(rejected.status == oauth::RegistrationOutcome::Status::rejected);
    CHECK(rejected.http_status == 400);
    CHECK(rejected.body.find("invalid_redirect_uri") != std::string::npos);

    auto loopback = oauth::register_client(client, strict_meta.auth_server,
                                           {"http://127.0.0.1:7777/cb"}, "probe");
    CHECK(loopback.ok());
}

TEST_CASE("registration with no redirect uris fails before any request") {
    auto the_lab = testsupport::spawn();
    net::Client client(fast);
    auto disc = oauth::discover(client, the_lab->mcp_url());
    REQUIRE(disc.ok);
    the_lab->clear_request_log();
    auto out = oauth::register_client(client, disc.auth_server, {}, "probe");
    CHECK(out.status == oauth::RegistrationOutcome::Status::input_error);
    CHECK(the_lab->request_log().empty());
}

TEST_CASE("authorization url serialization") {
    oauth::AuthorizationRequest req;
    req.endpoint = "https://as.example/authorize";
    req.client_id = "cid";
    req.redirect_uri = "http://127.0.0.1:7/cb";
    req.state = "st";
    req.code_challenge = "ch";
    req.code_challenge_method = "S256";
    req.scope = "mcp";
    req.extra_params = {{"audience", "api"}, {"prompt", "consent"}};

    auto url = oauth::build_authorization_url(req);
    CHECK(url.find("code_challenge_method=S256") != std::string::npos);
    CHECK(url.find("audience=api&prompt=consent") != std::string::npos);
    CHECK(url == oauth::build_authorization_url(req));  // byte-identical across runs

    SUBCASE("absent fields are omitted entirely") {
        req.code_challenge = std::nullopt;
        req.code_challenge_method = std::nullopt;
        auto stripped = oauth::build_authorization_url(req);
        CHECK(stripped.find("code_challenge") == std::string::npos);
    }
}

TEST_CASE("authorization url parse recovers the request") {
    oauth::AuthorizationRequest req;
    req.endpoint = "https://as.example/authorize";
    req.client_id = "cid";
    req.redirect_uri = "http://127.0.0.1:7/cb?x=1";
    req.state = "s t&odd=";
    req.scope = "mcp";
    req.extra_params = {{"k", "v"}};

    auto parsed = oauth::parse_authorization_url(oauth::build_authorization_url(req));
    REQUIRE(parsed.has_value());
    CHECK(parsed->endpoint == req.endpoint);
    CHECK(parsed->client_id == req.client_id);
    CHECK(parsed->redirect_uri == req.redirect_uri);
    CHECK(parsed->state == req.state);
    CHECK(parsed->scope == req.scope);
    CHECK_FALSE(parsed->code_challenge.has_value());
    CHECK(parsed->extra_params == req.extra_params);
}

TEST_CASE("token exchange success and failure paths") {
    auto the_lab = testsupport::spawn();
    net::Client client(fast);
    auto disc = oauth::discover(client, the_lab->mcp_url());
    REQUIRE(disc.ok);
    const auto& meta = disc.auth_server;

    // Complete a legitimate flow by hand: register, authorize, approve.
    auto reg = oauth::register_client(client, meta, {"http://127.0.0.1:7777/cb"}, "t");
    REQUIRE(reg.ok());
    auto pkce = oauth::generate_pkce(oauth::PkceMethod::s256);
    oauth::AuthorizationRequest areq;
    areq.endpoint = meta.authorization_endpoint;
    areq.client_id = reg.registration.client_id;
    areq.redirect_uri = "http://127.0.0.1:7777/cb";
    areq.state = "sssssssssssssssss";
    areq.code_challenge = pkce.challenge;
    areq.code_challenge_method = "S256";

    net::Request get;
    get.url = oauth::build_authorization_url(areq);
    auto consent = client.send(get);
    REQUIRE(consent.status == 200);
    auto pos = consent.body.find("name=\"request_id\" value=\"");
    REQUIRE(pos != std::string::npos);
    pos += 25;
    std::string request_id = consent.body.substr(pos, consent.body.find('"', pos) - pos);

    net::Request post;
    post.method = "POST";
    post.url = the_lab->auth_origin() + "/authorize/decision";
    post.content_type = "application/x-www-form-urlencoded";
    post.body = build_query({{"request_id", request_id}, {"action", "approve"}});
    auto redirect = client.send(post);
    REQUIRE(redirect.status == 302);
    auto loc = redirect.header("Location");
    REQUIRE(loc.has_value());
    auto loc_url = Url::parse(*loc);
    auto code = query_get(parse_query(loc_url->query), "code");
    REQUIRE(code.has_value());

    SUBCASE("valid code with matching verifier yields a token") {
        auto token = oauth::exchange_code(client, meta, *code, pkce.verifier, reg.registration,
                                          "http://127.0.0.1:7777/cb");
        REQUIRE(token.ok());
        CHECK_FALSE(token.token.access_token.empty());
        CHECK(token.token.token_type == "Bearer");

        SUBCASE("reusing the code is refused when single-use is enforced") {
            auto replay = oauth::exchange_code(client, meta, *code, pkce.verifier,
                                               reg.registration, "http://127.0.0.1:7777/cb");
            CHECK(replay.status == oauth::TokenOutcome::Status::oauth_error);
            CHECK(replay.oauth_error == "invalid_grant");
        }
    }

    SUBCASE("wrong verifier is refused") {
        auto bad = oauth::exchange_code(client, meta, *code,
                                        std::string("wrong-verifier-wrong-verifier-wrong-verif"),
                                        reg.registration, "http://127.0.0.1:7777/cb");
        CHECK(bad.status == oauth::TokenOutcome::Status::oauth_error);
        CHECK(bad.oauth_error == "invalid_grant");
    }
}

TEST_CASE("discovery only issues GET requests against metadata routes") {
    auto the_lab = testsupport::spawn();
    net::Client client(fast);
    the_lab->clear_request_log();
    oauth::discover(client, the_lab->mcp_url());
    for (const auto& e : the_lab->request_log()) {
        if (e.target.find("/.well-known/") != std::string::npos) CHECK(e.method == "GET");
        CHECK(e.target.find("/register") == std::string::npos);
        CHECK(e.target.find("/token") == std::string::npos);
    }
}
