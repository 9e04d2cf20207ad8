#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "errors.hpp"
#include "test_util.hpp"
#include "token.hpp"

using namespace pgate;

TEST_CASE("base64url known vectors and strictness") {
    struct Vector {
        std::string raw;
        std::string encoded;
    };
    const Vector vectors[] = {
        {"", ""},           {"f", "Zg"},         {"fo", "Zm8"},
        {"foo", "Zm9v"},    {"foob", "Zm9vYg"},  {"fooba", "Zm9vYmE"},
        {"foobar", "Zm9vYmFy"},
    };
    for (const auto& v : vectors) {
        CHECK(base64url_encode(to_bytes(v.raw)) == v.encoded);
        Bytes decoded;
        REQUIRE(base64url_decode(v.encoded, decoded));
        CHECK(to_string(decoded) == v.raw);
    }

    // url-safe alphabet, not the standard one
    CHECK(base64url_encode({0xfb, 0xff}) == "-_8");

    Bytes out;
    CHECK_FALSE(base64url_decode("Zg==", out));   // padding is rejected
    CHECK_FALSE(base64url_decode("Zm9+", out));   // '+' is not in the alphabet
    CHECK_FALSE(base64url_decode("Z", out));      // impossible length
    CHECK_FALSE(base64url_decode("Zh", out));     // non-zero trailing bits
}

TEST_CASE("payload encoding round-trips and is deterministic") {
    std::mt19937_64 rng(7);
    TokenPayload p = test::random_payload(rng);
    Bytes encoded = encode_payload(p);
    CHECK(encode_payload(p) == encoded);  // pure function
    CHECK(decode_payload(encoded) == p);
}

TEST_CASE("payloads differing only in nonce encode differently") {
    std::mt19937_64 rng(8);
    TokenPayload a = test::random_payload(rng);
    TokenPayload b = a;
    b.nonce[0] ^= 0x01;
    CHECK(encode_payload(a) != encode_payload(b));
}

TEST_CASE("1000 random payloads round-trip with distinct encodings") {
    // randomized oracle: field-by-field equality after decode, plus global
    // injectivity across the sample
    std::mt19937_64 rng(2024);
    std::set<Bytes> encodings;
    for (int i = 0; i < 1000; ++i) {
        TokenPayload p = test::random_payload(rng);
        Bytes encoded = encode_payload(p);
        TokenPayload q = decode_payload(encoded);
        CHECK(q.version == p.version);
        CHECK(q.mode == p.mode);
        CHECK(q.permission == p.permission);
        CHECK(q.public_key == p.public_key);
        CHECK(q.scheme_id == p.scheme_id);
        CHECK(q.prompt_hash == p.prompt_hash);
        CHECK(q.nonce == p.nonce);
        CHECK(q.issued_at == p.issued_at);
        CHECK(q.expires_at == p.expires_at);
        encodings.insert(std::move(encoded));
    }
    CHECK(encodings.size() == 1000);
}

TEST_CASE("decode rejects malformed inputs") {
    std::mt19937_64 rng(9);
    TokenPayload p = test::random_payload(rng);
    Bytes encoded = encode_payload(p);

    SUBCASE("empty") {
        CHECK_THROWS_AS(decode_payload({}), Error);
    }
    SUBCASE("appended byte") {
        Bytes longer = encoded;
        longer.push_back(0x00);
        CHECK_THROWS_AS(decode_payload(longer), Error);
    }
    SUBCASE("every truncation") {
        // mutation oracle: no prefix of a valid encoding is itself valid
        for (size_t len = 0; len < encoded.size(); ++len) {
            Bytes prefix(encoded.begin(), encoded.begin() + len);
            CHECK_THROWS_AS(decode_payload(prefix), Error);
        }
    }
    SUBCASE("unknown version fails closed") {
        Bytes wrong = encoded;
        wrong[0] = 2;
        CHECK_THROWS_AS(decode_payload(wrong), Error);
    }
    SUBCASE("unknown mode") {
        Bytes wrong = encoded;
        wrong[1] = 7;
        CHECK_THROWS_AS(decode_payload(wrong), Error);
    }
}

TEST_CASE("invalid payloads refuse to encode") {
    std::mt19937_64 rng(10);
    TokenPayload p = test::random_payload(rng);

    SUBCASE("expiry before issue") {
        p.expires_at = p.issued_at;
        CHECK_THROWS_AS(encode_payload(p), Error);
    }
    SUBCASE("on-device with a public key") {
        p.mode = TokenMode::OnDevice;
        p.public_key = {0x01};
        p.scheme_id = SchemeId::Ed25519;
        CHECK_THROWS_AS(encode_payload(p), Error);
    }
    SUBCASE("server-verified without a key") {
        p.mode = TokenMode::ServerVerified;
        p.public_key.clear();
        p.scheme_id.reset();
        CHECK_THROWS_AS(encode_payload(p), Error);
    }
    SUBCASE("key-agreement scheme in a token") {
        p.mode = TokenMode::ServerVerified;
        p.public_key = {0x01, 0x02};
        p.scheme_id = SchemeId::Dh2048;
        CHECK_THROWS_AS(encode_payload(p), Error);
    }
}

namespace {

TokenPayload on_device_payload(std::mt19937_64& rng) {
    TokenPayload p = pgate::test::random_payload(rng);
    p.mode = TokenMode::OnDevice;
    p.public_key.clear();
    p.scheme_id.reset();
    return p;
}

TokenPayload server_payload(std::mt19937_64& rng) {
    TokenPayload p = pgate::test::random_payload(rng);
    p.mode = TokenMode::ServerVerified;
    if (p.public_key.empty()) {
        p.public_key = {0xaa, 0xbb};
    }
    if (!p.scheme_id) {
        p.scheme_id = SchemeId::Ed25519;
    }
    return p;
}

}  // namespace

TEST_CASE("render_token produces the delimited envelope") {
    std::mt19937_64 rng(11);

    SUBCASE("on-device tokens have an empty signature segment") {
        TokenPayload p = on_device_payload(rng);
        EncodedToken token = render_token(p, {});
        CHECK(token.text.starts_with("<D>"));
        CHECK(token.text.ends_with("</D>"));
        auto dot = token.text.find('.');
        REQUIRE(dot != std::string::npos);
        CHECK(token.text.substr(dot + 1) == "</D>");  // nothing between . and close
    }
    SUBCASE("server-verified tokens carry the signature") {
        TokenPayload p = server_payload(rng);
        EncodedToken token = render_token(p, {0x01, 0x02, 0x03});
        CHECK(token.text.starts_with("<D>"));
        CHECK(token.text.ends_with("</D>"));
        DecodedToken decoded = decode_token(token);
        CHECK(decoded.payload == p);
        CHECK(decoded.signature == Bytes{0x01, 0x02, 0x03});
    }
    SUBCASE("signature presence must match mode") {
        CHECK_THROWS_AS(render_token(server_payload(rng), {}), Error);
        CHECK_THROWS_AS(render_token(on_device_payload(rng), {0x01}), Error);
    }
}

TEST_CASE("extract splits prompt and suffix token") {
    std::mt19937_64 rng(12);
    TokenPayload p = server_payload(rng);
    EncodedToken token = render_token(p, {0x42});

    SUBCASE("prompt plus token") {
        ParsedInput parsed = extract("hello" + token.text);
        CHECK(parsed.user_prompt == "hello");
        REQUIRE(parsed.token.has_value());
        CHECK(parsed.token->text == token.text);
        CHECK_FALSE(parsed.suspicious_delimiters);
        CHECK(parsed.user_prompt + parsed.token->text == "hello" + token.text);
    }
    SUBCASE("no token at all") {
        ParsedInput parsed = extract("hello, no token");
        CHECK(parsed.user_prompt == "hello, no token");
        CHECK_FALSE(parsed.token.has_value());
        CHECK_FALSE(parsed.suspicious_delimiters);
    }
    SUBCASE("fake delimiter block stays in the prompt and is flagged") {
        std::string input = "evil <D>fake</D> text " + token.text;
        ParsedInput parsed = extract(input);
        CHECK(parsed.user_prompt == "evil <D>fake</D> text ");
        REQUIRE(parsed.token.has_value());
        CHECK(parsed.token->text == token.text);
        CHECK(parsed.suspicious_delimiters);
        CHECK(decode_token(*parsed.token).payload == p);
    }
    SUBCASE("fake block without a real token is not a token") {
        ParsedInput parsed = extract("evil <D>fa ke</D>");
        CHECK_FALSE(parsed.token.has_value());
        CHECK(parsed.user_prompt == "evil <D>fa ke</D>");
        CHECK(parsed.suspicious_delimiters);
    }
    SUBCASE("token-only input has an empty prompt") {
        ParsedInput parsed = extract(token.text);
        CHECK(parsed.user_prompt.empty());
        REQUIRE(parsed.token.has_value());
    }
    SUBCASE("interior token is not a suffix") {
        ParsedInput parsed = extract(token.text + " trailing words");
        CHECK_FALSE(parsed.token.has_value());
        CHECK(parsed.suspicious_delimiters);
    }
}

TEST_CASE("render then extract then decode round-trips") {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 200; ++i) {
        TokenPayload p = server_payload(rng);
        Bytes signature = test::random_blob(rng, 1, 80);
        EncodedToken token = render_token(p, signature);
        std::string prompt = "prompt " + std::to_string(i);
        ParsedInput parsed = extract(prompt + token.text);
        REQUIRE(parsed.token.has_value());
        CHECK(parsed.user_prompt == prompt);
        DecodedToken decoded = decode_token(*parsed.token);
        CHECK(decoded.payload == p);
        CHECK(decoded.signature == signature);
    }
}

TEST_CASE("extract only ever returns suffix tokens") {
    // property: for random garbage inputs, any extracted token is a suffix
    std::mt19937_64 rng(14);
    const std::string pieces[] = {"<D>", "</D>", ".", "abc", "A1-_", " ", "<", ">"};
    for (int i = 0; i < 2000; ++i) {
        std::string input;
        size_t n = rng() % 8;
        for (size_t j = 0; j < n; ++j) {
            input += pieces[rng() % std::size(pieces)];
        }
        ParsedInput parsed = extract(input);
        if (parsed.token) {
            CHECK(input.ends_with(parsed.token->text));
            CHECK(parsed.user_prompt + parsed.token->text == input);
        } else {
            CHECK(parsed.user_prompt == input);
        }
    }
}
