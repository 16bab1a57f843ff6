#include "upil/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "upil/digest.hpp"
#include "upil/errors.hpp"

namespace upil {

using nlohmann::json;

namespace {

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const unsigned char> in, std::size_t& pos) {
  if (in.size() - pos < 8) throw CorruptionError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

void put_bytes(std::vector<unsigned char>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

std::string get_bytes(std::span<const unsigned char> in, std::size_t& pos, std::uint64_t n) {
  if (in.size() - pos < n) throw CorruptionError("checkpoint truncated");
  std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
  pos += n;
  return s;
}

struct NamedTensor {
  std::string name;
  const Tensor2* tensor;
};

std::vector<NamedTensor> param_order(const ModelBundle& b) {
  std::vector<NamedTensor> out;
  for (const ParamGroup* g : b.groups())
    for (std::size_t t = 0; t < g->tensors.size(); ++t)
      out.push_back({g->name + "." + std::to_string(t), &g->tensors[t]});
  return out;
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const ModelBundle& bundle, const PartitionRegistry& registry,
                                             const TrainConfig& cfg) {
  std::vector<unsigned char> payload;
  json order = json::array();
  json shapes = json::array();
  for (const auto& [name, t] : param_order(bundle)) {
    order.push_back(name);
    shapes.push_back({t->rows(), t->cols()});
    for (double v : t->values()) put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }
  const std::string reg = to_json(registry).dump();
  put_u64(payload, reg.size());
  put_bytes(payload, reg);

  json header = {{"config", to_json(cfg)},
                 {"feature_dim", bundle.config.feature_dim},
                 {"config_hash", bundle.config_hash},
                 {"seed", cfg.seed},
                 {"param_order", std::move(order)},
                 {"shapes", std::move(shapes)},
                 {"payload_sha256", sha256_hex(payload)}};
  const std::string head = header.dump();

  std::vector<unsigned char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  out.push_back(kCheckpointVersion);
  put_u64(out, head.size());
  put_bytes(out, head);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CorruptionError("not a checkpoint file (bad magic)");
  if (bytes[4] != kCheckpointVersion)
    throw VersionError("checkpoint format version " + std::to_string(bytes[4]) + " is not supported");
  std::size_t pos = 5;
  const std::uint64_t head_len = get_u64(bytes, pos);
  const std::string head = get_bytes(bytes, pos, head_len);
  const auto payload = bytes.subspan(pos);

  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint header unreadable: ") + e.what());
  }
  try {
    if (sha256_hex(payload) != header.at("payload_sha256").get<std::string>())
      throw CorruptionError("checkpoint payload hash mismatch");

    Checkpoint ck{{}, PartitionRegistry{}, train_config_from_json(header.at("config"))};
    ck.bundle = init_bundle(ck.config.model_config(header.at("feature_dim").get<std::size_t>()), 0);
    if (ck.bundle.config_hash != header.at("config_hash").get<std::string>())
      throw VersionError("checkpoint architecture hash does not match its config");

    const auto order = param_order(ck.bundle);
    const auto& names = header.at("param_order");
    const auto& shapes = header.at("shapes");
    if (names.size() != order.size() || shapes.size() != order.size())
      throw VersionError("checkpoint parameter list does not match the architecture");
    std::size_t ppos = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Tensor2& expected = *order[i].tensor;
      if (names[i].get<std::string>() != order[i].name || shapes[i][0].get<std::size_t>() != expected.rows() ||
          shapes[i][1].get<std::size_t>() != expected.cols())
        throw VersionError("checkpoint parameter '" + names[i].get<std::string>() + "' does not match the architecture");
      // order[] points into ck.bundle, so write through a mutable alias.
      auto values = const_cast<Tensor2&>(expected).values();
      for (double& v : values) v = std::bit_cast<double>(get_u64(payload, ppos));
    }
    const std::uint64_t reg_len = get_u64(payload, ppos);
    const std::string reg = get_bytes(payload, ppos, reg_len);
    if (ppos != payload.size()) throw CorruptionError("checkpoint has trailing bytes");
    ck.registry = registry_from_json(json::parse(reg));
    return ck;
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint header malformed: ") + e.what());
  }
}

void save_checkpoint(const ModelBundle& bundle, const PartitionRegistry& registry, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(bundle, registry, cfg);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void check_compatible(const Checkpoint& ckpt, const TrainConfig& run, std::size_t feature_dim) {
  const ModelConfig want = run.model_config(feature_dim);
  const ModelConfig& have = ckpt.bundle.config;
  if (have.k != want.k)
    throw VersionError("checkpoint was trained with k=" + std::to_string(have.k) + ", run expects k=" +
                       std::to_string(want.k));
  if (have.feature_dim != want.feature_dim)
    throw VersionError("checkpoint expects feature_dim " + std::to_string(have.feature_dim) + ", data has " +
                       std::to_string(want.feature_dim));
  if (have.phi_widths != want.phi_widths) throw VersionError("checkpoint feature extractor widths differ from the run");
}

}  // namespace upil
