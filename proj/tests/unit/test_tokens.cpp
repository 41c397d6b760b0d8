#include <catch2/catch_amalgamated.hpp>

#include <hivemind/tokens.hpp>

#include <string>

using namespace hivemind;

namespace {

// Fixture bodies match the two dialects' wire shapes.
const char* kMessagesBody = R"({
  "id": "msg_01",
  "type": "message",
  "role": "assistant",
  "content": [{"type": "text", "text": "hello there"}],
  "usage": {"input_tokens": 17, "output_tokens": 42}
})";

const char* kChatBody = R"({
  "id": "chatcmpl-9x",
  "object": "chat.completion",
  "choices": [{"index": 0, "message": {"role": "assistant", "content": "hi"}}],
  "usage": {"prompt_tokens": 31, "completion_tokens": 9, "total_tokens": 40}
})";

// A messages-API stream: input tokens ride message_start, cumulative output
// rides message_delta.
const char* kMessagesStream =
    "event: message_start\n"
    "data: {\"type\":\"message_start\",\"message\":{\"id\":\"msg_01\","
    "\"usage\":{\"input_tokens\":25,\"output_tokens\":1}}}\n"
    "\n"
    "event: content_block_delta\n"
    "data: {\"type\":\"content_block_delta\",\"delta\":{\"type\":\"text_delta\","
    "\"text\":\"hello\"}}\n"
    "\n"
    "event: message_delta\n"
    "data: {\"type\":\"message_delta\",\"delta\":{\"stop_reason\":\"end_turn\"},"
    "\"usage\":{\"output_tokens\":103}}\n"
    "\n"
    "event: message_stop\n"
    "data: {\"type\":\"message_stop\"}\n"
    "\n";

// A chat stream that reports usage in a terminal chunk before [DONE].
const char* kChatStream =
    "data: {\"id\":\"c1\",\"choices\":[{\"delta\":{\"content\":\"hel\"}}]}\n"
    "\n"
    "data: {\"id\":\"c1\",\"choices\":[{\"delta\":{\"content\":\"lo\"}}]}\n"
    "\n"
    "data: {\"id\":\"c1\",\"choices\":[],"
    "\"usage\":{\"prompt_tokens\":12,\"completion_tokens\":34}}\n"
    "\n"
    "data: [DONE]\n"
    "\n";

} // namespace

TEST_CASE("non-streaming bodies yield exact usage", "[tokens]") {
    auto messages = extractUsageFromBody(kMessagesBody);
    REQUIRE(messages.has_value());
    REQUIRE(messages->inputTokens == 17);
    REQUIRE(messages->outputTokens == 42);
    REQUIRE(messages->total() == 59);
    REQUIRE(messages->fromProvider);

    auto chat = extractUsageFromBody(kChatBody);
    REQUIRE(chat.has_value());
    REQUIRE(chat->inputTokens == 31);
    REQUIRE(chat->outputTokens == 9);
    REQUIRE(chat->fromProvider);
}

TEST_CASE("bodies without usable usage return nothing", "[tokens]") {
    REQUIRE_FALSE(extractUsageFromBody("not json at all").has_value());
    REQUIRE_FALSE(extractUsageFromBody("{}").has_value());
    REQUIRE_FALSE(extractUsageFromBody(R"({"usage": "strange"})").has_value());
    REQUIRE_FALSE(extractUsageFromBody(R"({"usage": {"other": 1}})").has_value());
    REQUIRE_FALSE(extractUsageFromBody("[1,2,3]").has_value());
}

TEST_CASE("messages-API streams accumulate start plus final delta", "[tokens]") {
    SseUsageScanner scanner;
    scanner.feed(kMessagesStream);
    auto u = scanner.finish();
    REQUIRE(u.inputTokens == 25);
    REQUIRE(u.outputTokens == 103); // cumulative figure from the last delta
    REQUIRE(u.fromProvider);
}

TEST_CASE("chat streams pick usage from the terminal chunk", "[tokens]") {
    SseUsageScanner scanner;
    scanner.feed(kChatStream);
    auto u = scanner.finish();
    REQUIRE(u.inputTokens == 12);
    REQUIRE(u.outputTokens == 34);
    REQUIRE(u.fromProvider);
}

TEST_CASE("chunk boundaries cannot confuse the scanner", "[tokens]") {
    // Feed the exact same stream one byte at a time.
    SECTION("byte by byte") {
        SseUsageScanner scanner;
        std::string stream = kMessagesStream;
        for (char c : stream)
            scanner.feed(&c, 1);
        auto u = scanner.finish();
        REQUIRE(u.inputTokens == 25);
        REQUIRE(u.outputTokens == 103);
    }
    SECTION("awkward split inside a data line") {
        SseUsageScanner scanner;
        std::string stream = kChatStream;
        size_t cut = stream.find("prompt_tokens") + 7; // mid-keyword
        scanner.feed(stream.substr(0, cut));
        scanner.feed(stream.substr(cut));
        auto u = scanner.finish();
        REQUIRE(u.inputTokens == 12);
        REQUIRE(u.outputTokens == 34);
    }
    SECTION("crlf event delimiters") {
        SseUsageScanner scanner;
        std::string stream = kMessagesStream;
        std::string crlf;
        for (char c : stream) {
            if (c == '\n')
                crlf += "\r\n";
            else
                crlf += c;
        }
        scanner.feed(crlf);
        auto u = scanner.finish();
        REQUIRE(u.inputTokens == 25);
        REQUIRE(u.outputTokens == 103);
    }
}

TEST_CASE("a truncated stream still reports what it saw", "[tokens]") {
    SseUsageScanner scanner;
    std::string stream = kMessagesStream;
    // Drop everything after the content delta: no final usage event arrives.
    scanner.feed(stream.substr(0, stream.find("event: message_delta")));
    auto u = scanner.finish();
    REQUIRE(u.inputTokens == 25);
    REQUIRE(u.outputTokens == 1); // only the message_start figure
    REQUIRE(u.fromProvider);
}

TEST_CASE("streams without usage yield a non-provider zero", "[tokens]") {
    SseUsageScanner scanner;
    scanner.feed("data: {\"choices\":[{\"delta\":{\"content\":\"x\"}}]}\n\n");
    scanner.feed("data: [DONE]\n\n");
    auto u = scanner.finish();
    REQUIRE(u.total() == 0);
    REQUIRE_FALSE(u.fromProvider);
}

TEST_CASE("heuristic fallback is ceil(chars/4) on both sides", "[tokens]") {
    auto u = heuristicUsage(1000, 401);
    REQUIRE(u.inputTokens == 250);
    REQUIRE(u.outputTokens == 101);
    REQUIRE_FALSE(u.fromProvider);
    REQUIRE(heuristicUsage(0, 0).total() == 0);
    REQUIRE(heuristicUsage(1, 1).total() == 2);
}
