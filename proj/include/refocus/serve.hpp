#pragma once

#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <string>

#include "refocus/cli.hpp"
#include "refocus/service.hpp"

namespace refocus::service {

namespace detail {

inline httplib::Server*& active_server() {
  static httplib::Server* srv = nullptr;
  return srv;
}

inline void stop_on_signal(int) {
  if (auto* srv = active_server()) srv->stop();
}

}  // namespace detail

/// Blocking `serve` entry point; returns a CLI exit code. SIGINT/SIGTERM stop
/// the listener.
inline int serve_blocking(int port, const std::string& session_dir, const std::string& static_dir, long ttl,
                          std::ostream& err) {
  if (port == 0) {
    err << "error: port 0 is not a usable listening port\n";
    return cli::exit_port;
  }
  std::error_code ec;
  std::filesystem::create_directories(session_dir, ec);
  if (ec) {
    err << "error: cannot create " << session_dir << "\n";
    return cli::exit_io;
  }
  Options opts;
  opts.session_dir = session_dir;
  opts.ttl = std::chrono::seconds(ttl);
  if (!static_dir.empty()) opts.static_dir = static_dir;
  Service svc(opts);
  httplib::Server srv;
  // httplib's default adds SO_REUSEPORT, which would share a busy port
  // instead of failing the bind.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  svc.mount(srv);
  if (!srv.bind_to_port("0.0.0.0", port)) {
    err << "error: port " << port << " is unavailable\n";
    return cli::exit_port;
  }
  detail::active_server() = &srv;
  std::signal(SIGINT, detail::stop_on_signal);
  std::signal(SIGTERM, detail::stop_on_signal);
  err << "listening on :" << port << "\n";
  srv.listen_after_bind();
  detail::active_server() = nullptr;
  return cli::exit_ok;
}

}  // namespace refocus::service
