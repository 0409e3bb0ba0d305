#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "microcarla/common.hpp"
#include "microcarla/sensors.hpp"

namespace microcarla {

inline constexpr const char* kProtocolVersion = "microcarla/1";
inline constexpr std::size_t kMaxFrameBytes = 16u << 20;

class DecodeError : public std::runtime_error {
 public:
  enum class Kind { Truncated, Oversize, Schema };
  DecodeError(Kind k, const std::string& msg) : std::runtime_error(msg), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};
std::string to_string(DecodeError::Kind k);

// Strict JSON forms shared by the wire messages and the demo files.
// Every *_from_json throws DecodeError(Schema) on missing or unknown keys.
namespace wire {
nlohmann::json to_json(const Control& c);
Control control_from_json(const nlohmann::json& j, bool* clamped = nullptr);
nlohmann::json to_json(const CameraConfig& c);
CameraConfig camera_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetaCommand& m);
MetaCommand meta_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Measurements& m);
Measurements measurements_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scan& s);
Scan scan_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SensorFrame& f);
SensorFrame frame_from_json(const nlohmann::json& j);
HighLevelCommand command_from_json(const nlohmann::json& j);

std::string base64_encode(const std::uint8_t* data, std::size_t n);
std::vector<std::uint8_t> base64_decode(std::string_view text);
}  // namespace wire

namespace msg {
struct Hello {
  std::string version = kProtocolVersion;
  std::string town;  // filled by the server
  bool operator==(const Hello&) const = default;
};
struct Meta {
  MetaCommand meta;
  bool operator==(const Meta&) const = default;
};
struct ControlMsg {
  Control control;
  std::optional<HighLevelCommand> command;  // annotation for recording
  bool clamped = false;  // set by decode, never sent
  bool operator==(const ControlMsg&) const = default;
};
struct Frame {
  SensorFrame frame;
  bool clamped = false;  // the control that produced this frame was clamped
  bool operator==(const Frame&) const = default;
};
struct Error {
  std::string kind;  // "protocol", "schema", "oversize", "meta", "version", "record"
  std::string message;
  bool operator==(const Error&) const = default;
};
struct TownRequest {
  bool operator==(const TownRequest&) const = default;
};
struct Town {
  nlohmann::json town;
  bool operator==(const Town&) const = default;
};
struct Record {
  bool on = false;
  std::string path;  // file name inside the server's record directory; empty picks one
  bool operator==(const Record&) const = default;
};
struct RecordAck {
  bool on = false;
  std::string path;
  std::int64_t samples = 0;
  bool operator==(const RecordAck&) const = default;
};
struct Close {
  bool operator==(const Close&) const = default;
};
// External agent channel: the bench is the client, the agent the server.
struct AgentReset {
  std::string town;
  bool operator==(const AgentReset&) const = default;
};
struct AgentReady {
  std::string name;
  bool operator==(const AgentReady&) const = default;
};
struct AgentAct {
  SensorFrame frame;
  HighLevelCommand command = HighLevelCommand::FollowLane;
  bool operator==(const AgentAct&) const = default;
};
struct Action {
  Control control;
  bool operator==(const Action&) const = default;
};
}  // namespace msg

using Message = std::variant<msg::Hello, msg::Meta, msg::ControlMsg, msg::Frame, msg::Error, msg::TownRequest,
                             msg::Town, msg::Record, msg::RecordAck, msg::Close, msg::AgentReset, msg::AgentReady,
                             msg::AgentAct, msg::Action>;

std::string type_name(const Message& m);

/// JSON text of one message, as carried in a websocket frame.
std::string encode_payload(const Message& m);
Message decode_payload(std::string_view json_text);

/// 4-byte big-endian length followed by the JSON payload.
std::string encode(const Message& m);
/// Decodes exactly one complete frame.
Message decode(std::string_view frame);

/// Incremental splitter for a TCP byte stream.
class FrameReader {
 public:
  void feed(std::string_view bytes) { buffer_.append(bytes); }
  /// Next complete payload, or nullopt when more bytes are needed. Throws
  /// DecodeError(Oversize) as soon as a too-large header arrives.
  std::optional<std::string> next();
  std::size_t buffered() const { return buffer_.size(); }

 private:
  std::string buffer_;
};

}  // namespace microcarla
