#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "microcarla/codec.hpp"
#include "microcarla/env.hpp"
#include "microcarla/learnkit.hpp"

namespace microcarla {

struct SessionOptions {
  std::filesystem::path record_dir = ".";
};

/// Transport-independent lockstep state machine. One world per session.
class Session {
 public:
  enum class Phase { AwaitingHandshake, Configured, Stepping, Closed };

  explicit Session(const TownMap& town, SessionOptions opts = {});
  ~Session();

  /// Replies to one incoming message, in order. A protocol violation
  /// yields an error message and moves the session to Closed.
  std::vector<Message> handle(const Message& in);
  /// For transports that failed to decode a frame: error reply, then closed.
  Message reject(const DecodeError& e);

  Phase phase() const { return phase_; }
  bool closed() const { return phase_ == Phase::Closed; }
  const std::string& version() const { return version_; }
  const WorldState& world() const { return world_; }
  bool recording() const { return recorder_ != nullptr; }

 private:
  Message fail(const std::string& kind, const std::string& message);
  Message start_recording(const std::string& name);
  Message stop_recording();

  const TownMap& town_;
  SessionOptions opts_;
  Phase phase_ = Phase::AwaitingHandshake;
  std::string version_;
  WorldState world_;
  MetaCommand meta_;
  SensorFrame last_frame_;
  std::unique_ptr<DemoWriter> recorder_;
  bool header_written_ = false;
};
std::string to_string(Session::Phase p);

/// Raised by clients: timeouts, dropped connections, server error frames.
class ClientError : public std::runtime_error {
 public:
  enum class Kind { Timeout, Connection, Server, Protocol };
  ClientError(Kind k, const std::string& msg, std::string server_kind = {})
      : std::runtime_error(msg), kind_(k), server_kind_(std::move(server_kind)) {}
  Kind kind() const { return kind_; }
  /// The error frame's kind for Kind::Server.
  const std::string& server_kind() const { return server_kind_; }

 private:
  Kind kind_;
  std::string server_kind_;
};

/// A session driven in-process, with every message encoded to bytes and
/// decoded again so the wire path is exercised without sockets.
class LocalEnv : public Env {
 public:
  explicit LocalEnv(const TownMap& town, SessionOptions opts = {});
  const TownMap& town() const override { return town_; }
  SensorFrame reset(const MetaCommand& meta) override;
  SensorFrame step(const Control& control, std::optional<HighLevelCommand> command = std::nullopt) override;
  /// Sends any message, returns the single reply.
  Message request(const Message& m);
  std::uint64_t bytes_exchanged() const { return bytes_; }

 private:
  const TownMap& town_;
  Session session_;
  std::uint64_t bytes_ = 0;
};

/// Takes the frame out of a reply or throws ClientError.
SensorFrame expect_frame(const Message& reply);

}  // namespace microcarla
