#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "encoder.hpp"
#include "error.hpp"
#include "loss.hpp"

namespace tscn {

// Checkpoint file layout (all integers little-endian):
//
//   offset 0   4 bytes   magic "TSCN"
//   offset 4   u32       format version (1)
//   offset 8   u64       header length L in bytes
//   offset 16  L bytes   header, compact JSON (UTF-8, keys sorted)
//   then       4*P bytes parameters as IEEE-754 float32, layer by layer in
//                        declaration order, weights before biases
//
// P is the total parameter count implied by the header's layer list.

inline constexpr char kCheckpointMagic[4] = {'T', 'S', 'C', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderParams<float> params;
  std::uint64_t seed = 0;
  int stage = 0;  // 1..3 = after that protocol stage, 0 = untrained
  std::string stage_name;
  KernelSpec kernel = KernelSpec::cauchy();

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

inline nlohmann::json layer_to_json(const LayerSpec& l) {
  using nlohmann::json;
  if (auto* c = std::get_if<Conv3x3>(&l)) return json{{"type", "conv3x3"}, {"in", c->in_channels}, {"out", c->out_channels}};
  if (std::holds_alternative<ReLU>(l)) return json{{"type", "relu"}};
  if (std::holds_alternative<MaxPool2>(l)) return json{{"type", "maxpool2"}};
  if (std::holds_alternative<GlobalAvgPool>(l)) return json{{"type", "gap"}};
  const auto& d = std::get<Dense>(l);
  return json{{"type", "dense"}, {"in", d.in_units}, {"out", d.out_units}};
}

inline LayerSpec layer_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "conv3x3") return Conv3x3{j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>()};
  if (type == "relu") return ReLU{};
  if (type == "maxpool2") return MaxPool2{};
  if (type == "gap") return GlobalAvgPool{};
  if (type == "dense") return Dense{j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>()};
  throw FormatError("checkpoint: unknown layer type '" + type + "'");
}

template <typename UInt>
void put_le(std::vector<std::uint8_t>& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename UInt>
UInt get_le(const std::uint8_t* p) {
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(p[i]) << (8 * i);
  return v;
}

} // namespace detail

inline std::string checkpoint_header(const Checkpoint& ck) {
  using nlohmann::json;
  const auto& p = ck.params;
  json layers = json::array();
  for (const auto& l : p.layers) layers.push_back(detail::layer_to_json(l));
  json frozen = json::array();
  for (bool f : p.frozen) frozen.push_back(f);
  json header{{"format", "tscn-checkpoint"},
              {"input", {p.input.channels, p.input.height, p.input.width}},
              {"layers", layers},
              {"head_start", p.head_start},
              {"frozen", frozen},
              {"readout_dim", p.readout_dim()},
              {"parameter_count", p.parameter_count()},
              {"seed", ck.seed},
              {"stage", {{"index", ck.stage}, {"name", ck.stage_name}}},
              {"kernel", {{"kind", to_string(ck.kernel.kind)}, {"tau", ck.kernel.tau}}}};
  return header.dump();
}

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck) {
  ck.params.validate();
  const std::string header = checkpoint_header(ck);
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, header.size());
  out.insert(out.end(), header.begin(), header.end());
  out.reserve(out.size() + 4 * ck.params.parameter_count());
  for (const auto& lp : ck.params.params) {
    for (float w : lp.weight) detail::put_le(out, std::bit_cast<std::uint32_t>(w));
    for (float b : lp.bias) detail::put_le(out, std::bit_cast<std::uint32_t>(b));
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source = "<buffer>") {
  if (bytes.size() < 16 || !std::equal(std::begin(kCheckpointMagic), std::end(kCheckpointMagic), bytes.begin()))
    throw FormatError(source + ": not a checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::get_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - 16) throw FormatError(source + ": truncated header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": malformed header: " + e.what());
  }

  Checkpoint ck;
  try {
    auto& p = ck.params;
    const auto in = h.at("input");
    p.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
    for (const auto& l : h.at("layers")) p.layers.push_back(detail::layer_from_json(l));
    p.head_start = h.at("head_start").get<std::size_t>();
    for (const auto& f : h.at("frozen")) p.frozen.push_back(f.get<bool>());
    ck.seed = h.at("seed").get<std::uint64_t>();
    ck.stage = h.at("stage").at("index").get<int>();
    ck.stage_name = h.at("stage").at("name").get<std::string>();
    ck.kernel = {kernel_kind_from_string(h.at("kernel").at("kind").get<std::string>()),
                 h.at("kernel").at("tau").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": bad header field: " + e.what());
  }

  auto& p = ck.params;
  if (p.frozen.size() != p.layers.size()) throw FormatError(source + ": freeze mask length does not match layers");
  std::size_t count = 0;
  for (const auto& l : p.layers) count += weight_count(l) + bias_count(l);
  const std::size_t payload = bytes.size() - 16 - header_len;
  if (payload != 4 * count)
    throw FormatError(source + ": parameter payload is " + std::to_string(payload) + " bytes, expected " +
                      std::to_string(4 * count));
  const std::uint8_t* cursor = bytes.data() + 16 + header_len;
  auto read = [&](std::vector<float>& v, std::size_t n) {
    v.resize(n);
    for (auto& x : v) {
      x = std::bit_cast<float>(detail::get_le<std::uint32_t>(cursor));
      cursor += 4;
    }
  };
  p.params.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    read(p.params[l].weight, weight_count(p.layers[l]));
    read(p.params[l].bias, bias_count(p.layers[l]));
  }
  try {
    p.validate();
  } catch (const std::exception& e) {
    throw FormatError(source + ": " + e.what());
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path.string());
}

} // namespace tscn
