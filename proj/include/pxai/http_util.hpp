#pragma once

#include <string>

namespace pxai {

// "http://host:port/prefix" -> {"http://host:port", "/prefix"}.
struct HttpEndpoint {
  std::string origin;
  std::string prefix;

  static HttpEndpoint parse(const std::string& url);
  std::string path(const std::string& suffix) const { return prefix + suffix; }
};

}  // namespace pxai
