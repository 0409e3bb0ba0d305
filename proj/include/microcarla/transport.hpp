#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "microcarla/agent.hpp"
#include "microcarla/session.hpp"

namespace microcarla {

inline constexpr int kDefaultPort = 2000;
inline constexpr std::chrono::milliseconds kDefaultTimeout{10000};

/// Owns a socket file descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(o.release()) {}
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release() {
    const int f = fd_;
    fd_ = -1;
    return f;
  }
  void close();
  /// Wakes a thread blocked on this socket.
  void shutdown();

  /// Throws ClientError(Connection) on failure.
  void send_all(std::string_view bytes);
  /// Reads exactly n bytes. nullopt on orderly close before the first
  /// byte; throws ClientError on timeout, reset or a close mid-read.
  std::optional<std::string> recv_exact(std::size_t n, std::optional<std::chrono::milliseconds> timeout);

 private:
  int fd_ = -1;
};

Socket connect_tcp(const std::string& host, int port, std::chrono::milliseconds timeout);

/// One message per call over some framing.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send(std::string_view payload) = 0;
  /// nullopt when the peer closed cleanly. Throws DecodeError for bad
  /// framing and ClientError for timeouts and resets.
  virtual std::optional<std::string> recv(std::optional<std::chrono::milliseconds> timeout) = 0;
  virtual void close() = 0;
  virtual void shutdown() = 0;
};

/// 4-byte big-endian length prefix. Owns its socket, or borrows one
/// when built from a pointer.
class TcpChannel : public Channel {
 public:
  explicit TcpChannel(Socket s) : owned_(std::move(s)), sock_(&owned_) {}
  explicit TcpChannel(Socket* borrowed) : sock_(borrowed) {}
  void send(std::string_view payload) override;
  std::optional<std::string> recv(std::optional<std::chrono::milliseconds> timeout) override;
  void close() override { sock_->close(); }
  void shutdown() override { sock_->shutdown(); }

 private:
  Socket owned_;
  Socket* sock_;
};

/// RFC 6455 framing after the HTTP upgrade. Clients mask, servers do not.
class WsChannel : public Channel {
 public:
  WsChannel(Socket s, bool client_side) : owned_(std::move(s)), sock_(&owned_), client_(client_side) {}
  WsChannel(Socket* borrowed, bool client_side) : sock_(borrowed), client_(client_side) {}
  void send(std::string_view payload) override;
  std::optional<std::string> recv(std::optional<std::chrono::milliseconds> timeout) override;
  void close() override;
  void shutdown() override { sock_->shutdown(); }

 private:
  void send_frame(std::uint8_t opcode, std::string_view payload);
  Socket owned_;
  Socket* sock_;
  bool client_;
  bool closing_ = false;
};

/// Sec-WebSocket-Accept for a client key.
std::string websocket_accept(const std::string& key);
/// Client side of the upgrade on `path`. Throws ClientError.
std::unique_ptr<WsChannel> websocket_connect(const std::string& host, int port, const std::string& path,
                                             std::chrono::milliseconds timeout);

/// Live connection threads of a listener, so stopping can wake them by
/// shutting their sockets down and wait until all have returned.
class Connections {
 public:
  /// Before the connection thread is spawned.
  void add(int fd);
  /// Last thing the connection thread does before its socket closes.
  void remove(int fd);
  void shutdown_all_and_wait();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::set<int> fds_;
};

/// Listening TCP socket. Throws std::runtime_error when binding fails.
Socket listen_tcp(const std::string& host, int port, int* bound_port);

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = kDefaultPort;  // 0 picks a free port
  double pace_hz = 0.0;     // > 0 spaces frames for a human driver
  bool websocket = true;    // accept GET /ws upgrades on the same port
  std::filesystem::path static_dir;  // served for other GET paths when set
  std::filesystem::path record_dir = ".";
  std::function<void(const std::string&)> log;
};

/// Accepts connections and runs one Session per connection on its own
/// thread. TCP clients and websocket clients share the port; the first
/// bytes decide.
class Server {
 public:
  Server(const TownMap& town, ServerOptions opts);
  ~Server();
  /// Binds and starts accepting. Throws std::runtime_error on bind failure.
  void start();
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();
  int port() const { return port_; }
  int sessions_started() const { return sessions_; }

 private:
  void accept_loop();
  void serve_connection(int fd);
  void serve_http(Socket& s);
  void run_session(Channel& ch);
  void log(const std::string& line) const;

  const TownMap& town_;
  ServerOptions opts_;
  Socket listener_;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<int> sessions_{0};
  std::thread acceptor_;
  Connections conns_;
};

struct ClientOptions {
  std::chrono::milliseconds timeout = kDefaultTimeout;
  bool websocket = false;  // connect through GET /ws instead of raw framing
  std::string version = kProtocolVersion;
};

/// Blocking client mirroring the server contract. Not thread-safe.
class ClientSession {
 public:
  ClientSession(const std::string& host, int port, ClientOptions opts = {});
  ~ClientSession();

  const std::string& town_id() const { return town_id_; }
  SensorFrame reset(const MetaCommand& meta);
  SensorFrame step(const Control& control, std::optional<HighLevelCommand> command = std::nullopt);
  /// Whether the server clamped the last control.
  bool last_clamped() const { return clamped_; }
  nlohmann::json town();
  msg::RecordAck record(bool on, const std::string& path = {});
  /// Sends any message and waits for one reply; error frames are returned
  /// as messages, not thrown.
  Message request(const Message& m);
  void send_only(const Message& m);
  void close();

 private:
  Message reply();
  std::unique_ptr<Channel> ch_;
  ClientOptions opts_;
  std::string town_id_;
  bool clamped_ = false;
};

/// Env over a remote server.
class RemoteEnv : public Env {
 public:
  RemoteEnv(ClientSession& client, const TownMap& town) : client_(client), town_(town) {}
  const TownMap& town() const override { return town_; }
  SensorFrame reset(const MetaCommand& meta) override { return client_.reset(meta); }
  SensorFrame step(const Control& c, std::optional<HighLevelCommand> cmd = std::nullopt) override {
    return client_.step(c, cmd);
  }

 private:
  ClientSession& client_;
  const TownMap& town_;
};

/// Serves an Agent implementation to a benchmark over the protocol. Each
/// connection gets a fresh agent from the factory.
class AgentServer {
 public:
  using Factory = std::function<std::unique_ptr<Agent>()>;
  AgentServer(std::vector<const TownMap*> towns, Factory factory, std::string host = "127.0.0.1", int port = 3001);
  ~AgentServer();
  void start();
  void stop();
  void wait();
  int port() const { return port_; }

 private:
  void serve(int fd);
  std::vector<const TownMap*> towns_;
  Factory factory_;
  std::string host_;
  int port_;
  Socket listener_;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  Connections conns_;
};

/// Agent living behind an AgentServer.
class RemoteAgent : public Agent {
 public:
  RemoteAgent(std::string host, int port, std::chrono::milliseconds timeout = kDefaultTimeout);
  ~RemoteAgent() override;
  std::string name() const override { return name_; }
  void reset(const TownMap& town) override;
  /// Throws ClientError on timeout or a dropped connection.
  Control act(const SensorFrame& frame, HighLevelCommand command) override;

 private:
  Message exchange(const Message& m);
  std::string host_;
  int port_;
  std::chrono::milliseconds timeout_;
  std::unique_ptr<Channel> ch_;
  std::string name_ = "remote";
};

/// "host:port" or "tcp:host:port". Throws std::invalid_argument.
std::pair<std::string, int> parse_endpoint(const std::string& text);

}  // namespace microcarla
