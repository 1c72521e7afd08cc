// SPDX-License-Identifier: Apache-2.0
//
// Teacher-logit service. One reader thread per connection decodes frames and
// queues logit requests on a shared worker pool; workers run the forward
// passes and write responses as they finish, so responses on a connection
// can arrive out of order. Correlation is by request_id only.
#pragma once

#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "deltakd/neural_lm.hpp"
#include "deltakd/socket.hpp"
#include "deltakd/wire.hpp"

namespace deltakd {

/// Forward pass of one served role: tokens -> logits [n x vocab].
using LogitFunction = std::function<std::vector<float>(std::span<const TokenId>)>;

struct ServedModels {
  std::size_t vocab = 0;
  std::size_t context_limit = 0;
  std::uint64_t vocab_fingerprint = 0;
  LogitFunction teacher_raw;  ///< empty when not served
  LogitFunction teacher_ft;

  std::uint8_t role_mask() const { return (teacher_raw ? 1 : 0) | (teacher_ft ? 2 : 0); }
};

template <class T>
LogitFunction logit_function(std::shared_ptr<const NeuralLM<T>> model) {
  return [model](std::span<const TokenId> tokens) {
    const auto c = model->forward(tokens);
    return std::vector<float>(c.logits.begin(), c.logits.end());
  };
}

struct ServerOptions {
  std::size_t max_batch = 64;
  std::size_t workers = 2;
};

class LogitServer {
 public:
  LogitServer(ServedModels models, ServerOptions opt = {}) : models_(std::move(models)), opt_(opt) {
    if (models_.role_mask() == 0) throw ConfigError("logit server needs at least one role");
    if (opt_.max_batch == 0 || opt_.max_batch > 65535) throw ConfigError("max_batch must lie in [1, 65535]");
    if (opt_.workers == 0) opt_.workers = 1;
  }
  LogitServer(const LogitServer&) = delete;
  LogitServer& operator=(const LogitServer&) = delete;
  ~LogitServer() { stop(); }

  /// Binds and starts serving in background threads; returns the bound
  /// endpoint (with the real port when port 0 was requested).
  net::Endpoint start(const net::Endpoint& where) {
    if (running_) throw ConfigError("logit server already running");
    listener_ = net::listen_on(where);
    bound_ = net::local_endpoint(listener_, where);
    int fds[2];
    if (::pipe(fds) != 0) throw TransportError(net::errno_text("pipe"));
    wake_read_ = net::Socket(fds[0]);
    wake_write_ = net::Socket(fds[1]);
    stopping_ = false;
    running_ = true;
    for (std::size_t i = 0; i < opt_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
    acceptor_ = std::thread([this] { accept_loop(); });
    return bound_;
  }

  /// Idempotent. Closes the listener and every connection, then joins.
  void stop() {
    if (!running_) return;
    stopping_ = true;
    const std::uint8_t b = 1;
    [[maybe_unused]] auto rc = ::write(wake_write_.fd(), &b, 1);
    if (acceptor_.joinable()) acceptor_.join();
    {
      std::lock_guard lk(conn_mu_);
      for (auto& c : conns_) c->sock.shutdown();
    }
    for (auto& c : conns_) {
      if (c->reader.joinable()) c->reader.join();
    }
    {
      std::lock_guard lk(queue_mu_);
      queue_.clear();
    }
    queue_cv_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
    conns_.clear();
    listener_.close();
    if (bound_.kind == net::Endpoint::Kind::Local) ::unlink(bound_.path.c_str());
    running_ = false;
  }

  bool running() const noexcept { return running_; }
  const net::Endpoint& endpoint() const noexcept { return bound_; }
  std::uint64_t requests_served() const noexcept { return served_; }
  std::uint64_t errors_sent() const noexcept { return errors_; }

 private:
  struct Connection {
    net::Socket sock;
    std::mutex write_mu;
    std::thread reader;
    std::atomic<bool> done{false};

    void send(const wire::Message& m) {
      const auto bytes = wire::encode_frame(m);
      std::lock_guard lk(write_mu);
      net::send_all(sock, bytes);
    }
  };

  struct Job {
    std::shared_ptr<Connection> conn;
    wire::LogitRequest req;
  };

  void accept_loop() {
    while (!stopping_) {
      pollfd p[2] = {{listener_.fd(), POLLIN, 0}, {wake_read_.fd(), POLLIN, 0}};
      const int rc = ::poll(p, 2, -1);
      if (rc < 0) {
        if (errno == EINTR) continue;
        return;
      }
      if (stopping_ || (p[1].revents & POLLIN)) return;
      if (!(p[0].revents & POLLIN)) continue;
      try {
        auto conn = std::make_shared<Connection>();
        conn->sock = net::accept_from(listener_);
        std::lock_guard lk(conn_mu_);
        reap_locked();
        conn->reader = std::thread([this, conn] { read_loop(conn); });
        conns_.push_back(std::move(conn));
      } catch (const TransportError&) {
        // Transient accept failure; keep serving.
      }
    }
  }

  void reap_locked() {
    for (auto it = conns_.begin(); it != conns_.end();) {
      if ((*it)->done) {
        if ((*it)->reader.joinable()) (*it)->reader.join();
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void read_loop(std::shared_ptr<Connection> conn) {
    wire::FrameDecoder dec;
    std::vector<std::uint8_t> buf(1 << 16);
    try {
      for (;;) {
        const std::size_t n = net::recv_some(conn->sock, buf);
        if (n == 0) break;
        dec.feed(std::span<const std::uint8_t>(buf.data(), n));
        while (auto msg = dec.next()) dispatch(conn, std::move(*msg));
      }
    } catch (const ProtocolError& e) {
      try {
        conn->send(wire::ErrorMessage{0, e.what()});
        ++errors_;
      } catch (const Error&) {
      }
    } catch (const Error&) {
      // Connection dropped.
    }
    conn->sock.shutdown();
    conn->done = true;
  }

  void dispatch(const std::shared_ptr<Connection>& conn, wire::Message msg) {
    if (auto* info = std::get_if<wire::ModelInfoRequest>(&msg)) {
      conn->send(wire::ModelInfoResponse{info->request_id, static_cast<std::uint32_t>(models_.vocab),
                                         static_cast<std::uint32_t>(models_.context_limit), models_.role_mask(),
                                         static_cast<std::uint16_t>(opt_.max_batch), models_.vocab_fingerprint});
      return;
    }
    auto* req = std::get_if<wire::LogitRequest>(&msg);
    if (!req) {
      conn->send(wire::ErrorMessage{wire::request_id_of(msg), "unexpected message type from client"});
      ++errors_;
      return;
    }
    {
      std::lock_guard lk(queue_mu_);
      queue_.push_back({conn, std::move(*req)});
    }
    queue_cv_.notify_one();
  }

  void worker_loop() {
    for (;;) {
      Job job;
      {
        std::unique_lock lk(queue_mu_);
        queue_cv_.wait(lk, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      wire::Message reply = answer(job.req);
      if (std::holds_alternative<wire::ErrorMessage>(reply)) ++errors_;
      try {
        job.conn->send(reply);
        ++served_;
      } catch (const Error&) {
        // Peer went away; nothing to report to.
      }
    }
  }

  wire::Message answer(const wire::LogitRequest& req) const {
    const auto fail = [&](const std::string& why) { return wire::ErrorMessage{req.request_id, why}; };
    const LogitFunction* fn = nullptr;
    if (req.role == static_cast<std::uint8_t>(wire::WireRole::TeacherRaw)) fn = &models_.teacher_raw;
    if (req.role == static_cast<std::uint8_t>(wire::WireRole::TeacherFt)) fn = &models_.teacher_ft;
    if (!fn) return fail("unknown role " + std::to_string(req.role));
    if (!*fn) return fail(std::string("role ") + wire::wire_role_name(req.role) + " is not served");
    if (req.batch > opt_.max_batch) {
      return fail("batch " + std::to_string(req.batch) + " exceeds max_batch " + std::to_string(opt_.max_batch));
    }
    if (req.seq_len > models_.context_limit) {
      return fail("seq_len " + std::to_string(req.seq_len) + " exceeds context limit " +
                  std::to_string(models_.context_limit));
    }
    for (auto id : req.ids) {
      if (id >= models_.vocab) return fail("token id " + std::to_string(id) + " outside served vocabulary");
    }
    try {
      std::vector<float> all;
      all.reserve(req.ids.size() * models_.vocab);
      for (std::size_t b = 0; b < req.batch; ++b) {
        const std::span<const TokenId> row(req.ids.data() + b * req.seq_len, req.seq_len);
        const auto z = (*fn)(row);
        all.insert(all.end(), z.begin(), z.end());
      }
      return wire::make_response(req.request_id, req.batch, req.seq_len, static_cast<std::uint32_t>(models_.vocab),
                                 all);
    } catch (const std::exception& e) {
      return fail(std::string("forward failed: ") + e.what());
    }
  }

  ServedModels models_;
  ServerOptions opt_;
  net::Socket listener_, wake_read_, wake_write_;
  net::Endpoint bound_;
  std::thread acceptor_;
  std::vector<std::thread> workers_;
  std::mutex conn_mu_;
  std::list<std::shared_ptr<Connection>> conns_;
  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<Job> queue_;
  std::atomic<bool> stopping_{false};
  bool running_ = false;
  std::atomic<std::uint64_t> served_{0}, errors_{0};
};

}  // namespace deltakd
