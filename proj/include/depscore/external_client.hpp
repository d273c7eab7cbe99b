// Copyright 2026 The depscore Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Client side of the conditional-mean wire protocol: one JSON object per
// line, one request in flight per connection.
//
//   -> {"id": 7, "op": "cond_mean", "target_dim": 1, "context": [[...], ...], "queries": [[...], ...]}
//   <- {"id": 7, "means": [...]}        or        {"id": 7, "error": "..."}
//
// The peer is either a child process (endpoint = shell command, stdio
// transport) or a TCP server (endpoint = "tcp://host:port").

#pragma once

#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "depscore/errors.hpp"
#include "depscore/numkit/matrix.hpp"

namespace depscore {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i)
    rows.push_back(std::vector<double>(m.row(i).begin(), m.row(i).end()));
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw StructuralError("matrix_from_json: expected an array of rows");
  const std::size_t r = j.size();
  const std::size_t c = r == 0 ? 0 : j[0].size();
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (j[i].size() != c) throw StructuralError("matrix_from_json: ragged rows");
    for (std::size_t k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

class ExternalClient {
 public:
  ExternalClient(const std::string& endpoint, double timeout_s) : timeout_s_(timeout_s) {
    ::signal(SIGPIPE, SIG_IGN);
    if (endpoint.rfind("tcp://", 0) == 0) {
      connect_tcp(endpoint.substr(6));
    } else {
      spawn(endpoint);
    }
  }

  ExternalClient(const ExternalClient&) = delete;
  ExternalClient& operator=(const ExternalClient&) = delete;

  ~ExternalClient() {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0 && read_fd_ != write_fd_) ::close(read_fd_);
    if (child_ > 0) {
      for (int i = 0; i < 50; ++i) {
        if (::waitpid(child_, nullptr, WNOHANG) == child_) return;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
      ::kill(child_, SIGKILL);
      ::waitpid(child_, nullptr, 0);
    }
  }

  std::vector<double> cond_mean(std::size_t target_dim, const Matrix& context, const Matrix& queries) {
    const long long id = next_id_++;
    nlohmann::json req = {{"id", id},
                          {"op", "cond_mean"},
                          {"target_dim", target_dim},
                          {"context", matrix_to_json(context)},
                          {"queries", matrix_to_json(queries)}};
    send_line(req.dump());
    const std::string line = read_line();
    nlohmann::json resp;
    try {
      resp = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw PredictorUnavailable(std::string("external predictor: malformed response: ") + e.what());
    }
    if (!resp.contains("id") || resp["id"].get<long long>() != id)
      throw PredictorUnavailable("external predictor: response id mismatch");
    if (resp.contains("error"))
      throw PredictorUnavailable("external predictor error: " + resp["error"].get<std::string>());
    const auto& means = resp.at("means");
    if (means.size() != queries.rows())
      throw PredictorUnavailable("external predictor: expected " + std::to_string(queries.rows()) +
                                 " means, got " + std::to_string(means.size()));
    std::vector<double> out;
    out.reserve(means.size());
    for (const auto& v : means) out.push_back(v.get<double>());
    return out;
  }

 private:
  void spawn(const std::string& cmd) {
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw PredictorUnavailable("external predictor: pipe() failed");
    const pid_t pid = ::fork();
    if (pid < 0) throw PredictorUnavailable("external predictor: fork() failed");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      const std::string line = "exec " + cmd;
      ::execl("/bin/sh", "sh", "-c", line.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    child_ = pid;
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  void connect_tcp(const std::string& hostport) {
    const auto colon = hostport.rfind(':');
    if (colon == std::string::npos) throw ConfigError("external endpoint: expected tcp://host:port");
    const std::string host = hostport.substr(0, colon);
    const std::string port = hostport.substr(colon + 1);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0)
      throw PredictorUnavailable("external predictor: cannot resolve " + hostport);
    int fd = -1;
    for (addrinfo* a = res; a; a = a->ai_next) {
      fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw PredictorUnavailable("external predictor: cannot connect to " + hostport);
    read_fd_ = write_fd_ = fd;
  }

  void send_line(std::string line) {
    line.push_back('\n');
    std::size_t off = 0;
    while (off < line.size()) {
      const ssize_t w = ::write(write_fd_, line.data() + off, line.size() - off);
      if (w < 0 && errno == EINTR) continue;
      if (w <= 0) throw PredictorUnavailable("external predictor: write failed (peer gone?)");
      off += static_cast<std::size_t>(w);
    }
  }

  std::string read_line() {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s_);
    while (true) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw PredictorUnavailable("external predictor: timed out");
      pollfd pfd{read_fd_, POLLIN, 0};
      const int pr = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (pr < 0 && errno == EINTR) continue;
      if (pr <= 0) continue;
      char buf[65536];
      const ssize_t r = ::read(read_fd_, buf, sizeof buf);
      if (r < 0 && errno == EINTR) continue;
      if (r <= 0) throw PredictorUnavailable("external predictor: connection closed");
      buffer_.append(buf, static_cast<std::size_t>(r));
    }
  }

  double timeout_s_;
  long long next_id_ = 1;
  pid_t child_ = -1;
  int read_fd_ = -1;
  int write_fd_ = -1;
  std::string buffer_;
};

}  // namespace depscore
