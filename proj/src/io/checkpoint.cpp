#include "boltzflow/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace boltzflow::io {

namespace {

constexpr char kMagic[4] = {'B', 'F', 'L', 'W'};

template <typename T>
void put_le(std::vector<unsigned char>& out, T value) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>(bits >> (8 * i)));
}

template <typename T>
T get_le(const std::vector<unsigned char>& in, std::size_t& pos, const std::string& path) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  if (pos + sizeof(T) > in.size()) throw ConfigError("checkpoint " + path + ": truncated file");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= U(in[pos + i]) << (8 * i);
  pos += sizeof(T);
  return std::bit_cast<T>(bits);
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << j.dump(2) << '\n';
}

nlohmann::json read_sidecar(const std::string& path) {
  std::ifstream f(path + ".json");
  if (!f) throw ConfigError("checkpoint " + path + ": missing sidecar " + path + ".json");
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint " + path + ".json: " + e.what());
  }
}

}  // namespace

void write_network(const std::string& path, const Mlp<double>& net) {
  std::vector<unsigned char> buf(std::begin(kMagic), std::end(kMagic));
  put_le(buf, kCheckpointVersion);
  put_le(buf, std::uint32_t(net.widths.size()));
  for (int w : net.widths) put_le(buf, std::uint32_t(w));
  for (Eigen::Index i = 0; i < net.params.size(); ++i) put_le(buf, net.params(i));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

Mlp<double> read_network(const std::string& path, Activation activation) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot read checkpoint " + path);
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0) throw ConfigError("checkpoint " + path + ": bad magic");
  std::size_t pos = 4;
  const auto version = get_le<std::uint32_t>(buf, pos, path);
  if (version != kCheckpointVersion)
    throw ConfigError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  const auto n = get_le<std::uint32_t>(buf, pos, path);
  if (n < 2 || n > 1024) throw ConfigError("checkpoint " + path + ": implausible layer count");
  Mlp<double> net;
  net.activation = activation;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto w = get_le<std::uint32_t>(buf, pos, path);
    if (w == 0 || w > (1u << 20)) throw ConfigError("checkpoint " + path + ": implausible layer width");
    net.widths.push_back(int(w));
  }
  net.params.resize(Mlp<double>::parameter_count(net.widths));
  if (buf.size() - pos != std::size_t(net.params.size()) * 8)
    throw ConfigError("checkpoint " + path + ": parameter block does not match the layer widths");
  for (Eigen::Index i = 0; i < net.params.size(); ++i) net.params(i) = get_le<double>(buf, pos, path);
  return net;
}

void save_mlp(const std::string& path, const Mlp<double>& net, const std::string& kind, const nlohmann::json& meta) {
  write_network(path, net);
  nlohmann::json side = meta;
  side["kind"] = kind;
  side["format_version"] = kCheckpointVersion;
  side["widths"] = net.widths;
  side["activation"] = to_string(net.activation);
  write_json(path + ".json", side);
}

Mlp<double> load_mlp(const std::string& path, nlohmann::json* sidecar) {
  const nlohmann::json side = read_sidecar(path);
  const Activation act = parse_activation(side.value("activation", std::string("tanh")));
  Mlp<double> net = read_network(path, act);
  if (side.contains("widths") && side["widths"].get<std::vector<int>>() != net.widths)
    throw ConfigError("checkpoint " + path + ": sidecar widths disagree with the binary header");
  if (sidecar) *sidecar = side;
  return net;
}

void save_velocity_net(const std::string& path, const VelocityNet<double>& v, const nlohmann::json& meta) {
  nlohmann::json m = meta;
  m["context_dim"] = v.context_dim;
  m["x_dim"] = v.x_dim;
  m["time_k"] = v.time_k;
  save_mlp(path, v.net, "velocity_net", m);
}

VelocityNet<double> load_velocity_net(const std::string& path, nlohmann::json* sidecar) {
  nlohmann::json side;
  VelocityNet<double> v;
  v.net = load_mlp(path, &side);
  if (side.value("kind", std::string()) != "velocity_net")
    throw ConfigError("checkpoint " + path + ": not a velocity network");
  v.context_dim = side.at("context_dim").get<int>();
  v.x_dim = side.at("x_dim").get<int>();
  v.time_k = side.at("time_k").get<int>();
  if (v.net.input_dim() != v.input_dim() || v.net.output_dim() != v.x_dim)
    throw ConfigError("checkpoint " + path + ": velocity dimensions disagree with the network");
  if (sidecar) *sidecar = side;
  return v;
}

}  // namespace boltzflow::io
