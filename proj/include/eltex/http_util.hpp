#pragma once

#include <string>
#include <string_view>

namespace eltex {

/// "https://host:8443/v1" -> {"https://host:8443", "/v1"}.
struct SplitUrl {
    std::string origin;
    std::string path;
};

/// Throws ValidationError when the URL has no scheme or host.
SplitUrl split_url(std::string_view url);

}  // namespace eltex
