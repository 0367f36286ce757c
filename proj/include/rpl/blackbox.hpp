#pragma once

// The only surface of the target system an attacker may depend on: inject
// documents into the database, and chat with the QA system while they are in
// place. No scores, ranks or generator internals cross this boundary.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>

#include "corpus.hpp"

namespace rpl {

inline constexpr std::string_view kAbstainText = "UNKNOWN";

struct Answer {
    std::string text;
    bool is_abstain = false;

    static Answer abstain() { return {std::string(kAbstainText), true}; }
    static Answer of(std::string text) {
        const bool sentinel = text == kAbstainText;
        return {std::move(text), sentinel};
    }

    friend bool operator==(const Answer&, const Answer&) = default;
};

class ChatChannel {
public:
    virtual ~ChatChannel() = default;
    virtual Answer ask(std::string_view question) = 0;
};

class BlackBoxEnvironment {
public:
    virtual ~BlackBoxEnvironment() = default;

    /// Runs `body` while `poison` is present in the target database. The
    /// database returns to its previous state afterwards, also on error.
    virtual void with_injection(std::span<const Document> poison, const std::function<void(ChatChannel&)>& body) = 0;
};

} // namespace rpl
