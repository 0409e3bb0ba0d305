#include "microcarla/session.hpp"

namespace microcarla {

std::string to_string(Session::Phase p) {
  switch (p) {
    case Session::Phase::AwaitingHandshake: return "awaiting-handshake";
    case Session::Phase::Configured: return "configured";
    case Session::Phase::Stepping: return "stepping";
    case Session::Phase::Closed: return "closed";
  }
  return "closed";
}

Session::Session(const TownMap& town, SessionOptions opts) : town_(town), opts_(std::move(opts)) {}

Session::~Session() = default;

Message Session::fail(const std::string& kind, const std::string& message) {
  phase_ = Phase::Closed;
  recorder_.reset();
  return msg::Error{kind, message};
}

Message Session::reject(const DecodeError& e) { return fail(to_string(e.kind()), e.what()); }

namespace {

bool plain_file_name(const std::string& name) {
  if (name.empty() || name == "." || name == ".." || name.size() > 200) return false;
  for (char c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')) return false;
  return true;
}

std::atomic<int> auto_demo_counter{0};

}  // namespace

Message Session::start_recording(const std::string& requested) {
  std::string name = requested;
  if (name.empty()) name = "demo_" + std::to_string(auto_demo_counter++) + ".jsonl";
  if (!plain_file_name(name)) return msg::Error{"record", "record path must be a plain file name"};
  try {
    recorder_ = std::make_unique<DemoWriter>(opts_.record_dir / name);
  } catch (const DemoError& e) {
    return msg::Error{"record", e.what()};
  }
  header_written_ = false;
  if (phase_ == Phase::Stepping) {
    recorder_->begin({kProtocolVersion, town_.id, "human", meta_, PerturbationConfig{false}});
    header_written_ = true;
  }
  return msg::RecordAck{true, name, 0};
}

Message Session::stop_recording() {
  if (!recorder_) return msg::RecordAck{false, "", 0};
  msg::RecordAck ack{false, recorder_->path().filename().string(), recorder_->samples()};
  recorder_.reset();
  return ack;
}

std::vector<Message> Session::handle(const Message& in) {
  if (phase_ == Phase::Closed) return {};
  if (std::holds_alternative<msg::Close>(in)) {
    phase_ = Phase::Closed;
    recorder_.reset();
    return {};
  }
  if (phase_ == Phase::AwaitingHandshake) {
    const auto* hello = std::get_if<msg::Hello>(&in);
    if (!hello) return {fail("protocol", "expected hello, got " + type_name(in))};
    if (hello->version != kProtocolVersion)
      return {fail("version", "unsupported protocol version '" + hello->version + "', server speaks " +
                                  kProtocolVersion)};
    version_ = hello->version;
    phase_ = Phase::Configured;
    return {msg::Hello{kProtocolVersion, town_.id}};
  }

  return std::visit(
      [&](const auto& m) -> std::vector<Message> {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, msg::Meta>) {
          try {
            world_ = apply_meta(town_, m.meta);
          } catch (const WorldError& e) {
            return {msg::Error{"meta", e.what()}};
          }
          meta_ = m.meta;
          phase_ = Phase::Stepping;
          if (recorder_) {
            recorder_->begin({kProtocolVersion, town_.id, "human", meta_, PerturbationConfig{false}});
            header_written_ = true;
          }
          last_frame_ = make_frame(world_, town_);
          return {msg::Frame{last_frame_, false}};
        } else if constexpr (std::is_same_v<T, msg::ControlMsg>) {
          if (phase_ != Phase::Stepping) return {fail("protocol", "control before meta")};
          const HighLevelCommand command = m.command.value_or(HighLevelCommand::FollowLane);
          bool clamped = false;
          const Control control = clamp_control(m.control, &clamped);
          clamped = clamped || m.clamped;
          if (recorder_ && header_written_ && command != HighLevelCommand::GoalReached) {
            DemoSample s{world_.tick, command, control, control, last_frame_.measurements.speed_kmh, last_frame_};
            try {
              recorder_->write(s);
            } catch (const DemoError&) {
              recorder_.reset();
            }
          }
          step(world_, town_, control);
          last_frame_ = make_frame(world_, town_);
          return {msg::Frame{last_frame_, clamped}};
        } else if constexpr (std::is_same_v<T, msg::TownRequest>) {
          return {msg::Town{town_to_json(town_)}};
        } else if constexpr (std::is_same_v<T, msg::Record>) {
          if (!m.on) return {stop_recording()};
          if (recorder_) return {msg::RecordAck{true, recorder_->path().filename().string(), recorder_->samples()}};
          return {start_recording(m.path)};
        } else {
          return {fail("protocol", "unexpected " + type_name(Message{m}) + " in phase " + to_string(phase_))};
        }
      },
      in);
}

// --- in-process loopback ----------------------------------------------------

SensorFrame expect_frame(const Message& reply) {
  if (const auto* f = std::get_if<msg::Frame>(&reply)) return f->frame;
  if (const auto* e = std::get_if<msg::Error>(&reply)) throw ClientError(ClientError::Kind::Server, e->message, e->kind);
  throw ClientError(ClientError::Kind::Protocol, "expected a frame, got " + type_name(reply));
}

LocalEnv::LocalEnv(const TownMap& town, SessionOptions opts) : town_(town), session_(town, std::move(opts)) {
  const Message hello = request(msg::Hello{});
  if (!std::holds_alternative<msg::Hello>(hello)) throw ClientError(ClientError::Kind::Protocol, "handshake failed");
}

Message LocalEnv::request(const Message& m) {
  const std::string out = encode(m);
  bytes_ += out.size();
  Message decoded;
  try {
    decoded = decode(out);
  } catch (const DecodeError& e) {
    decoded = session_.reject(e);
    return decoded;
  }
  const auto replies = session_.handle(decoded);
  if (replies.size() != 1) throw ClientError(ClientError::Kind::Connection, "session closed");
  const std::string back = encode(replies.front());
  bytes_ += back.size();
  return decode(back);
}

SensorFrame LocalEnv::reset(const MetaCommand& meta) { return expect_frame(request(msg::Meta{meta})); }

SensorFrame LocalEnv::step(const Control& control, std::optional<HighLevelCommand> command) {
  return expect_frame(request(msg::ControlMsg{control, command, false}));
}

}  // namespace microcarla
