#pragma once

#include <memory>
#include <string>

#include "httplib.h"

// <resolv.h> defines _res, which clashes with identifiers in Eigen.
#ifdef _res
#undef _res
#endif

#include "goalfactor/common.hpp"

namespace goalfactor {

/// Splits "http(s)://host[:port]/path" into a client base and a path.
struct HttpEndpoint {
  std::string base;  // scheme://host[:port]
  std::string path;  // starts with '/'

  static HttpEndpoint parse(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) fail(ErrorCode::kConfig, "endpoint '" + url + "' lacks a scheme");
    const auto path_start = url.find('/', scheme_end + 3);
    HttpEndpoint e;
    e.base = url.substr(0, path_start);
    e.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    return e;
  }

  std::unique_ptr<httplib::Client> client(int timeout_seconds) const {
    auto c = std::make_unique<httplib::Client>(base);
    c->set_connection_timeout(timeout_seconds, 0);
    c->set_read_timeout(timeout_seconds, 0);
    c->set_write_timeout(timeout_seconds, 0);
    return c;
  }
};

}  // namespace goalfactor
