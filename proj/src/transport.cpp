#include "microcarla/transport.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>

namespace microcarla {

using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

// --- sockets ------------------------------------------------------------------

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.release();
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::send_all(std::string_view bytes) {
  if (fd_ < 0) throw ClientError(ClientError::Kind::Connection, "socket is closed");
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ClientError(ClientError::Kind::Connection, std::string("send failed: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> Socket::recv_exact(std::size_t n, std::optional<std::chrono::milliseconds> timeout) {
  if (fd_ < 0) throw ClientError(ClientError::Kind::Connection, "socket is closed");
  std::string out(n, '\0');
  std::size_t got = 0;
  const auto deadline = Clock::now() + timeout.value_or(0ms);
  while (got < n) {
    if (timeout) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(std::max<std::int64_t>(0, left.count())));
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) throw ClientError(ClientError::Kind::Timeout, "timed out waiting for the peer");
      if (r < 0) throw ClientError(ClientError::Kind::Connection, std::string("poll failed: ") + std::strerror(errno));
    }
    const ssize_t k = ::recv(fd_, out.data() + got, n - got, 0);
    if (k == 0) {
      if (got == 0) return std::nullopt;
      throw ClientError(ClientError::Kind::Connection, "connection closed mid-message");
    }
    if (k < 0) {
      if (errno == EINTR) continue;
      throw ClientError(ClientError::Kind::Connection, std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(k);
  }
  return out;
}

namespace {

void no_delay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

addrinfo* resolve(const std::string& host, int port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  const int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res);
  if (rc != 0) throw std::runtime_error("cannot resolve " + host + ": " + ::gai_strerror(rc));
  return res;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

/// Reads an HTTP head up to the blank line, one byte at a time so nothing
/// after it is consumed.
std::string read_http_head(Socket& s, std::chrono::milliseconds timeout) {
  std::string head;
  while (head.size() < 16384) {
    auto c = s.recv_exact(1, timeout);
    if (!c) throw ClientError(ClientError::Kind::Connection, "connection closed during HTTP exchange");
    head += *c;
    if (head.size() >= 4 && head.compare(head.size() - 4, 4, "\r\n\r\n") == 0) return head;
  }
  throw ClientError(ClientError::Kind::Protocol, "HTTP head too large");
}

struct HttpHead {
  std::string first_line;
  std::map<std::string, std::string> headers;  // lower-case names
};

HttpHead parse_head(const std::string& head) {
  HttpHead h;
  std::istringstream in(head);
  std::string line;
  std::getline(in, line);
  h.first_line = trim(line);
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) break;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    h.headers[lower(trim(line.substr(0, colon)))] = trim(line.substr(colon + 1));
  }
  return h;
}

std::mt19937_64& mask_rng() {
  thread_local std::mt19937_64 rng{std::random_device{}()};
  return rng;
}

}  // namespace

Socket connect_tcp(const std::string& host, int port, std::chrono::milliseconds timeout) {
  addrinfo* res = nullptr;
  try {
    res = resolve(host, port, false);
  } catch (const std::runtime_error& e) {
    throw ClientError(ClientError::Kind::Connection, e.what());
  }
  std::string last = "no address";
  for (addrinfo* a = res; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (!s.valid()) continue;
    timeval tv{static_cast<time_t>(timeout.count() / 1000), static_cast<suseconds_t>((timeout.count() % 1000) * 1000)};
    ::setsockopt(s.fd(), SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
    if (::connect(s.fd(), a->ai_addr, a->ai_addrlen) == 0) {
      ::freeaddrinfo(res);
      no_delay(s.fd());
      return s;
    }
    last = std::strerror(errno);
  }
  ::freeaddrinfo(res);
  throw ClientError(ClientError::Kind::Connection,
                    "cannot connect to " + host + ":" + std::to_string(port) + ": " + last);
}

Socket listen_tcp(const std::string& host, int port, int* bound_port) {
  addrinfo* res = resolve(host, port, true);
  std::string last = "no address";
  for (addrinfo* a = res; a; a = a->ai_next) {
    Socket s(::socket(a->ai_family, a->ai_socktype, a->ai_protocol));
    if (!s.valid()) continue;
    int one = 1;
    ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(s.fd(), a->ai_addr, a->ai_addrlen) != 0 || ::listen(s.fd(), 64) != 0) {
      last = std::strerror(errno);
      continue;
    }
    ::freeaddrinfo(res);
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    if (bound_port)
      *bound_port = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                                : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    return s;
  }
  ::freeaddrinfo(res);
  throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port) + ": " + last);
}

// --- framings -------------------------------------------------------------------

void TcpChannel::send(std::string_view payload) {
  if (payload.size() > kMaxFrameBytes) throw DecodeError(DecodeError::Kind::Oversize, "message exceeds 16 MiB");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out;
  out.reserve(4 + payload.size());
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((n >> s) & 0xff));
  out.append(payload);
  sock_->send_all(out);
}

std::optional<std::string> TcpChannel::recv(std::optional<std::chrono::milliseconds> timeout) {
  auto head = sock_->recv_exact(4, timeout);
  if (!head) return std::nullopt;
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n = (n << 8) | static_cast<unsigned char>((*head)[i]);
  if (n > kMaxFrameBytes) throw DecodeError(DecodeError::Kind::Oversize, "declared length exceeds 16 MiB");
  if (n == 0) return std::string();
  auto body = sock_->recv_exact(n, timeout);
  if (!body) throw DecodeError(DecodeError::Kind::Truncated, "connection closed inside a frame");
  return body;
}

void WsChannel::send_frame(std::uint8_t opcode, std::string_view payload) {
  std::string out;
  out.reserve(payload.size() + 14);
  out.push_back(static_cast<char>(0x80 | opcode));
  const std::uint8_t mask_bit = client_ ? 0x80 : 0x00;
  const std::uint64_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(mask_bit | n));
  } else if (n <= 0xffff) {
    out.push_back(static_cast<char>(mask_bit | 126));
    out.push_back(static_cast<char>(n >> 8));
    out.push_back(static_cast<char>(n & 0xff));
  } else {
    out.push_back(static_cast<char>(mask_bit | 127));
    for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<char>((n >> s) & 0xff));
  }
  if (client_) {
    const std::uint32_t key = static_cast<std::uint32_t>(mask_rng()());
    char k[4];
    for (int i = 0; i < 4; ++i) k[i] = static_cast<char>((key >> (8 * i)) & 0xff);
    out.append(k, 4);
    const std::size_t base = out.size();
    out.append(payload);
    for (std::size_t i = 0; i < payload.size(); ++i) out[base + i] = static_cast<char>(out[base + i] ^ k[i % 4]);
  } else {
    out.append(payload);
  }
  sock_->send_all(out);
}

void WsChannel::send(std::string_view payload) {
  if (payload.size() > kMaxFrameBytes) throw DecodeError(DecodeError::Kind::Oversize, "message exceeds 16 MiB");
  send_frame(0x1, payload);
}

void WsChannel::close() {
  if (sock_->valid() && !closing_) {
    closing_ = true;
    try {
      send_frame(0x8, std::string("\x03\xe8", 2));  // 1000, normal closure
    } catch (const ClientError&) {
    }
  }
  sock_->close();
}

std::optional<std::string> WsChannel::recv(std::optional<std::chrono::milliseconds> timeout) {
  std::string message;
  bool in_message = false;
  for (;;) {
    auto head = sock_->recv_exact(2, timeout);
    if (!head) {
      if (in_message) throw DecodeError(DecodeError::Kind::Truncated, "connection closed inside a message");
      return std::nullopt;
    }
    const auto b0 = static_cast<std::uint8_t>((*head)[0]), b1 = static_cast<std::uint8_t>((*head)[1]);
    const bool fin = b0 & 0x80;
    const std::uint8_t opcode = b0 & 0x0f;
    const bool masked = b1 & 0x80;
    std::uint64_t n = b1 & 0x7f;
    auto more = [&](std::size_t k) {
      auto b = sock_->recv_exact(k, timeout);
      if (!b) throw DecodeError(DecodeError::Kind::Truncated, "connection closed inside a websocket frame");
      return *b;
    };
    if (n == 126 || n == 127) {
      const std::string ext = more(n == 126 ? 2 : 8);
      n = 0;
      for (char c : ext) n = (n << 8) | static_cast<unsigned char>(c);
    }
    if (n > kMaxFrameBytes || message.size() + n > kMaxFrameBytes)
      throw DecodeError(DecodeError::Kind::Oversize, "websocket message exceeds 16 MiB");
    if (!client_ && !masked) throw DecodeError(DecodeError::Kind::Schema, "client frames must be masked");
    std::string key = masked ? more(4) : std::string();
    std::string payload = n ? more(static_cast<std::size_t>(n)) : std::string();
    if (masked)
      for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ key[i % 4]);

    switch (opcode) {
      case 0x8:  // close
        if (!closing_) {
          closing_ = true;
          try {
            send_frame(0x8, payload.substr(0, 2));
          } catch (const ClientError&) {
          }
        }
        return std::nullopt;
      case 0x9:
        send_frame(0xA, payload);
        continue;
      case 0xA:
        continue;
      case 0x1:
      case 0x2:
        if (in_message) throw DecodeError(DecodeError::Kind::Schema, "new message inside a fragmented one");
        in_message = true;
        message = std::move(payload);
        break;
      case 0x0:
        if (!in_message) throw DecodeError(DecodeError::Kind::Schema, "continuation without a message");
        message += payload;
        break;
      default:
        throw DecodeError(DecodeError::Kind::Schema, "unknown websocket opcode");
    }
    if (fin) return message;
  }
}

std::string websocket_accept(const std::string& key) {
  const std::string in = key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(in.data(), in.size(), digest, &len, EVP_sha1(), nullptr);
  return wire::base64_encode(digest, len);
}

std::unique_ptr<WsChannel> websocket_connect(const std::string& host, int port, const std::string& path,
                                             std::chrono::milliseconds timeout) {
  Socket s = connect_tcp(host, port, timeout);
  std::uint8_t raw[16];
  for (auto& b : raw) b = static_cast<std::uint8_t>(mask_rng()());
  const std::string key = wire::base64_encode(raw, 16);
  s.send_all("GET " + path + " HTTP/1.1\r\nHost: " + host + ":" + std::to_string(port) +
             "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
             "\r\nSec-WebSocket-Version: 13\r\n\r\n");
  const HttpHead head = parse_head(read_http_head(s, timeout));
  if (head.first_line.find(" 101") == std::string::npos)
    throw ClientError(ClientError::Kind::Protocol, "websocket upgrade refused: " + head.first_line);
  auto it = head.headers.find("sec-websocket-accept");
  if (it == head.headers.end() || it->second != websocket_accept(key))
    throw ClientError(ClientError::Kind::Protocol, "bad Sec-WebSocket-Accept");
  return std::make_unique<WsChannel>(std::move(s), true);
}

// --- connection bookkeeping -------------------------------------------------------

void Connections::add(int fd) {
  std::lock_guard lk(mu_);
  fds_.insert(fd);
}

void Connections::remove(int fd) {
  {
    std::lock_guard lk(mu_);
    fds_.erase(fd);
  }
  cv_.notify_all();
}

void Connections::shutdown_all_and_wait() {
  std::unique_lock lk(mu_);
  for (int fd : fds_) ::shutdown(fd, SHUT_RDWR);
  cv_.wait(lk, [&] { return fds_.empty(); });
}

namespace {

/// Unregisters on scope exit; declare it after the owning socket so it
/// runs first.
struct Registration {
  Connections& c;
  int fd;
  ~Registration() { c.remove(fd); }
};

/// Waits for the listener; false once `running` drops.
bool accept_one(const Socket& listener, const std::atomic<bool>& running, int& fd) {
  while (running) {
    pollfd p{listener.fd(), POLLIN, 0};
    const int r = ::poll(&p, 1, 100);
    if (r <= 0) continue;
    fd = ::accept(listener.fd(), nullptr, nullptr);
    if (fd >= 0) {
      no_delay(fd);
      return true;
    }
  }
  return false;
}

}  // namespace

// --- server ---------------------------------------------------------------------

Server::Server(const TownMap& town, ServerOptions opts) : town_(town), opts_(std::move(opts)) {}

Server::~Server() { stop(); }

void Server::log(const std::string& line) const {
  if (opts_.log) opts_.log(line);
}

void Server::start() {
  listener_ = listen_tcp(opts_.host, opts_.port, &port_);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
  if (!acceptor_.joinable()) return;
  running_ = false;
  acceptor_.join();
  listener_.close();
  conns_.shutdown_all_and_wait();
}

void Server::wait() {
  while (running_) std::this_thread::sleep_for(100ms);
}

void Server::accept_loop() {
  int fd = -1;
  while (accept_one(listener_, running_, fd)) {
    conns_.add(fd);
    std::thread([this, fd] { serve_connection(fd); }).detach();
  }
}

void Server::serve_connection(int fd) {
  Socket s(fd);
  Registration reg{conns_, fd};
  // Websocket clients open with an HTTP GET; raw clients with a length.
  char peek[4];
  const auto deadline = Clock::now() + kDefaultTimeout;
  ssize_t n = 0;
  while (running_ && Clock::now() < deadline) {
    pollfd p{fd, POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    n = ::recv(fd, peek, 4, MSG_PEEK);
    if (n <= 0 || n == 4) break;
    std::this_thread::sleep_for(1ms);
  }
  if (n != 4) return;
  try {
    if (std::string_view(peek, 4) == "GET ") {
      serve_http(s);
    } else {
      TcpChannel ch(&s);
      run_session(ch);
    }
  } catch (const std::exception& e) {
    log(std::string("connection error: ") + e.what());
  }
}

void Server::serve_http(Socket& s) {
  const HttpHead head = parse_head(read_http_head(s, kDefaultTimeout));
  std::istringstream first(head.first_line);
  std::string method, target;
  first >> method >> target;
  const std::string path = target.substr(0, target.find('?'));
  auto header = [&](const char* name) {
    auto it = head.headers.find(name);
    return it == head.headers.end() ? std::string() : it->second;
  };
  auto respond = [&](const std::string& status, const std::string& type, const std::string& body) {
    s.send_all("HTTP/1.1 " + status + "\r\nContent-Type: " + type + "\r\nContent-Length: " +
               std::to_string(body.size()) + "\r\nConnection: close\r\n\r\n" + body);
  };

  if (path == "/ws") {
    if (!opts_.websocket) return respond("404 Not Found", "text/plain", "websocket endpoint disabled\n");
    const std::string key = header("sec-websocket-key");
    if (lower(header("upgrade")) != "websocket" || key.empty())
      return respond("400 Bad Request", "text/plain", "expected a websocket upgrade\n");
    s.send_all("HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
               "Sec-WebSocket-Accept: " +
               websocket_accept(key) + "\r\n\r\n");
    WsChannel ch(&s, false);
    run_session(ch);
    return;
  }
  if (opts_.static_dir.empty() || path.find("..") != std::string::npos)
    return respond("404 Not Found", "text/plain", "not found\n");
  const std::filesystem::path file = opts_.static_dir / (path == "/" ? "index.html" : path.substr(1));
  std::ifstream in(file, std::ios::binary);
  if (!in || std::filesystem::is_directory(file)) return respond("404 Not Found", "text/plain", "not found\n");
  std::ostringstream body;
  body << in.rdbuf();
  const std::string ext = file.extension().string();
  const std::string type = ext == ".html"  ? "text/html"
                           : ext == ".js"  ? "text/javascript"
                           : ext == ".css" ? "text/css"
                           : ext == ".json" ? "application/json"
                           : ext == ".svg" ? "image/svg+xml"
                                           : "application/octet-stream";
  respond("200 OK", type, body.str());
}

void Server::run_session(Channel& ch) {
  const int id = ++sessions_;
  log("session " + std::to_string(id) + " opened");
  Session session(town_, {opts_.record_dir});
  const auto period = opts_.pace_hz > 0 ? std::chrono::duration_cast<Clock::duration>(
                                              std::chrono::duration<double>(1.0 / opts_.pace_hz))
                                        : Clock::duration::zero();
  auto next_due = Clock::now();
  auto reject = [&](const DecodeError& e) {
    try {
      ch.send(encode_payload(session.reject(e)));
    } catch (const std::exception&) {
    }
  };
  while (running_) {
    std::optional<std::string> payload;
    Message in;
    try {
      payload = ch.recv(std::nullopt);
      if (!payload) break;
      in = decode_payload(*payload);
    } catch (const DecodeError& e) {
      reject(e);
      break;
    } catch (const ClientError&) {
      break;
    }
    if (period.count() > 0 && std::holds_alternative<msg::ControlMsg>(in)) {
      std::this_thread::sleep_until(next_due);
      next_due = std::max(Clock::now(), next_due) + period;
    }
    try {
      for (const auto& reply : session.handle(in)) ch.send(encode_payload(reply));
    } catch (const ClientError&) {
      break;
    }
    if (session.closed()) break;
  }
  ch.close();
  log("session " + std::to_string(id) + " closed");
}

// --- client -----------------------------------------------------------------------

ClientSession::ClientSession(const std::string& host, int port, ClientOptions opts) : opts_(std::move(opts)) {
  if (opts_.websocket) ch_ = websocket_connect(host, port, "/ws", opts_.timeout);
  else ch_ = std::make_unique<TcpChannel>(connect_tcp(host, port, opts_.timeout));
  const Message r = request(msg::Hello{opts_.version, ""});
  if (const auto* h = std::get_if<msg::Hello>(&r)) {
    town_id_ = h->town;
    return;
  }
  if (const auto* e = std::get_if<msg::Error>(&r)) throw ClientError(ClientError::Kind::Server, e->message, e->kind);
  throw ClientError(ClientError::Kind::Protocol, "unexpected handshake reply " + type_name(r));
}

ClientSession::~ClientSession() {
  try {
    close();
  } catch (...) {
  }
}

Message ClientSession::reply() {
  std::optional<std::string> payload;
  try {
    payload = ch_->recv(opts_.timeout);
  } catch (const DecodeError& e) {
    throw ClientError(ClientError::Kind::Protocol, e.what());
  }
  if (!payload) {
    ch_.reset();
    throw ClientError(ClientError::Kind::Connection, "server closed the connection");
  }
  try {
    return decode_payload(*payload);
  } catch (const DecodeError& e) {
    throw ClientError(ClientError::Kind::Protocol, std::string("undecodable reply: ") + e.what());
  }
}

void ClientSession::send_only(const Message& m) {
  if (!ch_) throw ClientError(ClientError::Kind::Connection, "session is closed");
  ch_->send(encode_payload(m));
}

Message ClientSession::request(const Message& m) {
  send_only(m);
  return reply();
}

SensorFrame ClientSession::reset(const MetaCommand& meta) {
  clamped_ = false;
  return expect_frame(request(msg::Meta{meta}));
}

SensorFrame ClientSession::step(const Control& control, std::optional<HighLevelCommand> command) {
  const Message r = request(msg::ControlMsg{control, command, false});
  if (const auto* f = std::get_if<msg::Frame>(&r)) clamped_ = f->clamped;
  return expect_frame(r);
}

nlohmann::json ClientSession::town() {
  const Message r = request(msg::TownRequest{});
  if (const auto* t = std::get_if<msg::Town>(&r)) return t->town;
  if (const auto* e = std::get_if<msg::Error>(&r)) throw ClientError(ClientError::Kind::Server, e->message, e->kind);
  throw ClientError(ClientError::Kind::Protocol, "expected town, got " + type_name(r));
}

msg::RecordAck ClientSession::record(bool on, const std::string& path) {
  const Message r = request(msg::Record{on, path});
  if (const auto* a = std::get_if<msg::RecordAck>(&r)) return *a;
  if (const auto* e = std::get_if<msg::Error>(&r)) throw ClientError(ClientError::Kind::Server, e->message, e->kind);
  throw ClientError(ClientError::Kind::Protocol, "expected record_ack, got " + type_name(r));
}

void ClientSession::close() {
  if (!ch_) return;
  try {
    ch_->send(encode_payload(msg::Close{}));
  } catch (const std::exception&) {
  }
  ch_->close();
  ch_.reset();
}

// --- external agents ----------------------------------------------------------------

AgentServer::AgentServer(std::vector<const TownMap*> towns, Factory factory, std::string host, int port)
    : towns_(std::move(towns)), factory_(std::move(factory)), host_(std::move(host)), port_(port) {}

AgentServer::~AgentServer() { stop(); }

void AgentServer::start() {
  listener_ = listen_tcp(host_, port_, &port_);
  running_ = true;
  acceptor_ = std::thread([this] {
    int fd = -1;
    while (accept_one(listener_, running_, fd)) {
      conns_.add(fd);
      std::thread([this, fd] { serve(fd); }).detach();
    }
  });
}

void AgentServer::stop() {
  if (!acceptor_.joinable()) return;
  running_ = false;
  acceptor_.join();
  listener_.close();
  conns_.shutdown_all_and_wait();
}

void AgentServer::wait() {
  while (running_) std::this_thread::sleep_for(100ms);
}

void AgentServer::serve(int fd) {
  Socket s(fd);
  Registration reg{conns_, fd};
  TcpChannel ch(&s);
  std::unique_ptr<Agent> agent;
  bool greeted = false;
  try {
    while (running_) {
      auto payload = ch.recv(std::nullopt);
      if (!payload) break;
      Message reply;
      try {
        const Message in = decode_payload(*payload);
        if (const auto* h = std::get_if<msg::Hello>(&in)) {
          greeted = h->version == kProtocolVersion;
          reply = greeted ? Message{msg::Hello{kProtocolVersion, ""}}
                          : Message{msg::Error{"version", "unsupported protocol version"}};
        } else if (!greeted) {
          reply = msg::Error{"protocol", "expected hello"};
        } else if (const auto* r = std::get_if<msg::AgentReset>(&in)) {
          const TownMap* town = nullptr;
          for (const auto* t : towns_)
            if (t->id == r->town) town = t;
          if (!town) {
            reply = msg::Error{"agent", "unknown town '" + r->town + "'"};
          } else {
            agent = factory_();
            agent->reset(*town);
            reply = msg::AgentReady{agent->name()};
          }
        } else if (const auto* a = std::get_if<msg::AgentAct>(&in)) {
          if (!agent) reply = msg::Error{"protocol", "agent_act before agent_reset"};
          else reply = msg::Action{clamp_control(agent->act(a->frame, a->command))};
        } else if (std::holds_alternative<msg::Close>(in)) {
          break;
        } else {
          reply = msg::Error{"protocol", "unexpected " + type_name(in)};
        }
      } catch (const DecodeError& e) {
        reply = msg::Error{to_string(e.kind()), e.what()};
      } catch (const std::exception& e) {
        reply = msg::Error{"agent", e.what()};
      }
      ch.send(encode_payload(reply));
    }
  } catch (const std::exception&) {
  }
}

RemoteAgent::RemoteAgent(std::string host, int port, std::chrono::milliseconds timeout)
    : host_(std::move(host)), port_(port), timeout_(timeout) {}

RemoteAgent::~RemoteAgent() {
  if (!ch_) return;
  try {
    ch_->send(encode_payload(msg::Close{}));
  } catch (...) {
  }
}

Message RemoteAgent::exchange(const Message& m) {
  try {
    ch_->send(encode_payload(m));
    auto payload = ch_->recv(timeout_);
    if (!payload) throw ClientError(ClientError::Kind::Connection, "agent closed the connection");
    Message r = decode_payload(*payload);
    if (const auto* e = std::get_if<msg::Error>(&r)) throw ClientError(ClientError::Kind::Server, e->message, e->kind);
    return r;
  } catch (const DecodeError& e) {
    ch_.reset();
    throw ClientError(ClientError::Kind::Protocol, e.what());
  } catch (const ClientError&) {
    ch_.reset();
    throw;
  }
}

void RemoteAgent::reset(const TownMap& town) {
  if (!ch_) {
    ch_ = std::make_unique<TcpChannel>(connect_tcp(host_, port_, timeout_));
    if (!std::holds_alternative<msg::Hello>(exchange(msg::Hello{})))
      throw ClientError(ClientError::Kind::Protocol, "agent handshake failed");
  }
  const Message r = exchange(msg::AgentReset{town.id});
  const auto* ready = std::get_if<msg::AgentReady>(&r);
  if (!ready) throw ClientError(ClientError::Kind::Protocol, "expected agent_ready");
  name_ = "remote:" + ready->name;
}

Control RemoteAgent::act(const SensorFrame& frame, HighLevelCommand command) {
  if (!ch_) throw ClientError(ClientError::Kind::Connection, "agent not connected");
  const Message r = exchange(msg::AgentAct{frame, command});
  const auto* a = std::get_if<msg::Action>(&r);
  if (!a) throw ClientError(ClientError::Kind::Protocol, "expected action");
  return a->control;
}

std::pair<std::string, int> parse_endpoint(const std::string& text) {
  std::string t = text;
  if (t.rfind("tcp:", 0) == 0) t = t.substr(4);
  const auto colon = t.rfind(':');
  if (colon == std::string::npos || colon == 0) throw std::invalid_argument("endpoint must be host:port: " + text);
  int port = 0;
  try {
    size_t used = 0;
    port = std::stoi(t.substr(colon + 1), &used);
    if (used != t.size() - colon - 1) throw std::invalid_argument("port");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad port in endpoint: " + text);
  }
  if (port <= 0 || port > 65535) throw std::invalid_argument("port out of range: " + text);
  return {t.substr(0, colon), port};
}

}  // namespace microcarla
