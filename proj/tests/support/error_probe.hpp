#pragma once

#include <optional>

#include "oodlens/error.hpp"

namespace oracle {

// The ErrorCode thrown by fn, or nullopt when it returns normally.
template <typename Fn>
std::optional<oodlens::ErrorCode> code_of(Fn&& fn) {
    try {
        fn();
    } catch (const oodlens::Error& e) {
        return e.code();
    }
    return std::nullopt;
}

}  // namespace oracle
