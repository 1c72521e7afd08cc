// SPDX-License-Identifier: Apache-2.0
//
// Client side of the logit protocol. A background reader matches responses to
// an outstanding-request table keyed by request_id, so any number of
// requests can be in flight on one connection.
#pragma once

#include <atomic>
#include <chrono>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "deltakd/socket.hpp"
#include "deltakd/wire.hpp"

namespace deltakd {

namespace detail {

struct ClientConnectionBase {
  virtual ~ClientConnectionBase() = default;
  virtual void forget(std::uint64_t id) = 0;
};

}  // namespace detail

struct ClientOptions {
  std::chrono::milliseconds timeout{30000};
  std::chrono::milliseconds connect_timeout{5000};
  std::size_t retry_budget = 3;  ///< reconnect-and-retry attempts after the first
};

class LogitClient {
 public:
  explicit LogitClient(net::Endpoint where, ClientOptions opt = {}) : where_(std::move(where)), opt_(opt) {}
  LogitClient(const LogitClient&) = delete;
  LogitClient& operator=(const LogitClient&) = delete;
  ~LogitClient() { close(); }

  /// Handle to one in-flight request.
  class Pending {
   public:
    Pending() = default;

    /// Waits for the reply. Timeouts and connection loss raise
    /// TransportError; an error frame raises RemoteError.
    wire::Message get() {
      if (!fut_.valid()) throw TransportError("request already consumed");
      if (fut_.wait_for(timeout_) != std::future_status::ready) {
        if (auto c = conn_.lock()) c->forget(id_);
        throw TransportError("timed out after " + std::to_string(timeout_.count()) + " ms waiting for request " +
                             std::to_string(id_));
      }
      auto msg = fut_.get();
      if (auto* err = std::get_if<wire::ErrorMessage>(&msg)) {
        throw RemoteError("server rejected request " + std::to_string(id_) + ": " + err->message);
      }
      return msg;
    }

    std::uint64_t id() const noexcept { return id_; }

   private:
    friend class LogitClient;
    std::uint64_t id_ = 0;
    std::future<wire::Message> fut_;
    std::chrono::milliseconds timeout_{0};
    std::weak_ptr<detail::ClientConnectionBase> conn_;
  };

  /// Opens the connection now instead of on first use.
  void connect() { ensure_connected(); }

  void close() {
    std::shared_ptr<Connection> c;
    {
      std::lock_guard lk(mu_);
      c = std::move(conn_);
    }
    if (c) c->shutdown();
  }

  bool connected() const {
    std::lock_guard lk(mu_);
    return conn_ && !conn_->broken();
  }

  /// Sends `msg` with a fresh request id (overwriting its own).
  Pending submit(wire::Message msg) {
    auto c = ensure_connected();
    const std::uint64_t id = next_id_++;
    std::visit([id](auto& m) { m.request_id = id; }, msg);
    Pending p;
    p.id_ = id;
    p.timeout_ = opt_.timeout;
    p.fut_ = c->send(id, msg);
    p.conn_ = c;
    return p;
  }

  /// Issues all requests at once, waits for all replies; on transport
  /// failure reconnects and retries the whole group, up to the budget.
  std::vector<wire::LogitResponse> request_many(std::vector<wire::LogitRequest> reqs) {
    for (std::size_t attempt = 0;; ++attempt) {
      try {
        std::vector<Pending> pending;
        pending.reserve(reqs.size());
        for (const auto& r : reqs) pending.push_back(submit(r));
        std::vector<wire::LogitResponse> out;
        out.reserve(reqs.size());
        for (auto& p : pending) {
          auto msg = p.get();
          auto* resp = std::get_if<wire::LogitResponse>(&msg);
          if (!resp) throw ProtocolError("expected logit_response for request " + std::to_string(p.id()));
          out.push_back(std::move(*resp));
        }
        return out;
      } catch (const TransportError&) {
        close();
        if (attempt >= opt_.retry_budget) throw;
        std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
      }
    }
  }

  wire::LogitResponse request_logits(wire::WireRole role, std::uint16_t batch, std::uint16_t seq_len,
                                     std::vector<std::uint32_t> ids) {
    wire::LogitRequest r{0, static_cast<std::uint8_t>(role), batch, seq_len, std::move(ids)};
    return std::move(request_many({std::move(r)}).front());
  }

  wire::ModelInfoResponse model_info() {
    for (std::size_t attempt = 0;; ++attempt) {
      try {
        auto msg = submit(wire::ModelInfoRequest{}).get();
        auto* info = std::get_if<wire::ModelInfoResponse>(&msg);
        if (!info) throw ProtocolError("expected model_info_response");
        return *info;
      } catch (const TransportError&) {
        close();
        if (attempt >= opt_.retry_budget) throw;
        std::this_thread::sleep_for(std::chrono::milliseconds(50 * (attempt + 1)));
      }
    }
  }

  const net::Endpoint& endpoint() const noexcept { return where_; }

 private:
  struct Connection : detail::ClientConnectionBase {
    net::Socket sock;
    std::mutex mu;  // guards table and broken flag
    std::mutex write_mu;
    std::map<std::uint64_t, std::promise<wire::Message>> table;
    bool is_broken = false;
    std::thread reader;

    explicit Connection(net::Socket s) : sock(std::move(s)) {
      reader = std::thread([this] { read_loop(); });
    }
    ~Connection() override {
      sock.shutdown();
      if (reader.joinable()) reader.join();
    }

    bool broken() {
      std::lock_guard lk(mu);
      return is_broken;
    }

    void shutdown() { sock.shutdown(); }

    void forget(std::uint64_t id) override {
      std::lock_guard lk(mu);
      table.erase(id);
    }

    std::future<wire::Message> send(std::uint64_t id, const wire::Message& msg) {
      const auto bytes = wire::encode_frame(msg);
      std::future<wire::Message> fut;
      {
        std::lock_guard lk(mu);
        if (is_broken) throw TransportError("connection to logit server lost");
        fut = table[id].get_future();
      }
      try {
        std::lock_guard lk(write_mu);
        net::send_all(sock, bytes);
      } catch (...) {
        forget(id);
        throw;
      }
      return fut;
    }

    void read_loop() {
      wire::FrameDecoder dec;
      std::vector<std::uint8_t> buf(1 << 16);
      std::string reason = "connection closed by logit server";
      try {
        for (;;) {
          const std::size_t n = net::recv_some(sock, buf);
          if (n == 0) break;
          dec.feed(std::span<const std::uint8_t>(buf.data(), n));
          while (auto msg = dec.next()) {
            const auto id = wire::request_id_of(*msg);
            std::lock_guard lk(mu);
            auto it = table.find(id);
            if (it == table.end()) continue;  // late reply to a timed-out request
            it->second.set_value(std::move(*msg));
            table.erase(it);
          }
        }
      } catch (const std::exception& e) {
        reason = e.what();
      }
      std::lock_guard lk(mu);
      is_broken = true;
      for (auto& [id, p] : table) {
        p.set_exception(std::make_exception_ptr(TransportError(reason + " (request " + std::to_string(id) + ")")));
      }
      table.clear();
    }
  };

  std::shared_ptr<Connection> ensure_connected() {
    std::lock_guard lk(mu_);
    if (conn_ && !conn_->broken()) return conn_;
    conn_.reset();
    conn_ = std::make_shared<Connection>(net::connect_to(where_, opt_.connect_timeout));
    return conn_;
  }

  net::Endpoint where_;
  ClientOptions opt_;
  mutable std::mutex mu_;
  std::shared_ptr<Connection> conn_;
  std::atomic<std::uint64_t> next_id_{1};
};

}  // namespace deltakd
