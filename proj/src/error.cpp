#include "cgrs/error.hpp"

namespace cgrs {

std::string to_string(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::config: return "config";
        case ErrorCategory::data: return "data";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::io: return "io";
    }
    return "unknown";
}

Error::Error(ErrorCategory category, const std::string& message)
    : std::runtime_error(message), category_(category) {}

}  // namespace cgrs
