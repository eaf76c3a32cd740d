#pragma once

// Live transport for ChatClient. Include only where HTTP is needed; define
// CPPHTTPLIB_OPENSSL_SUPPORT (and link OpenSSL::SSL) for https endpoints.

#include <httplib.h>

#include <string>

#include "mathforge/teacher.hpp"

namespace mathforge::teacher {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  SplitUrl out;
  out.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) out.prefix = url.substr(path_start);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

inline Transport make_http_transport(std::chrono::seconds timeout) {
  return [timeout](const HttpRequest& req) -> HttpResponse {
    const SplitUrl url = split_url(req.base_url);
    httplib::Client cli(url.origin);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : req.headers) {
      if (k == "Content-Type") {
        content_type = v;
      } else {
        headers.emplace(k, v);
      }
    }
    auto res = cli.Post(url.prefix + req.path, headers, req.body, content_type);
    if (!res) return HttpResponse{0, {}, httplib::to_string(res.error())};
    return HttpResponse{res->status, res->body, {}};
  };
}

inline ChatClient make_client(const EndpointProfile& profile) {
  if (profile.kind == ProfileKind::mock) return ChatClient(profile);
  return ChatClient(profile, make_http_transport(profile.timeout));
}

}  // namespace mathforge::teacher
