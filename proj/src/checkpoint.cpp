#include "slicegen/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "slicegen/pgm.hpp"

namespace slicegen {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'G', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

const std::string kMomentPrefix[2] = {"adam.m/", "adam.v/"};

void add_optimizer(Checkpoint& ck, const Adam<float>& opt) {
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const auto& [name, var] = opt.params()[i];
    const auto& mom = opt.moments()[i];
    ck.tensors.emplace_back(kMomentPrefix[0] + name, Tensor<float>(var.shape(), mom.first));
    ck.tensors.emplace_back(kMomentPrefix[1] + name, Tensor<float>(var.shape(), mom.second));
  }
}

void restore_optimizer(const Checkpoint& ck, Adam<float>& opt, std::uint64_t steps) {
  std::vector<typename Adam<float>::Moments> moments;
  for (const auto& [name, var] : opt.params()) {
    const Tensor<float>& m = ck.tensor(kMomentPrefix[0] + name);
    const Tensor<float>& v = ck.tensor(kMomentPrefix[1] + name);
    if (m.shape() != var.shape() || v.shape() != var.shape())
      throw CheckpointError("optimizer state for " + name + " has the wrong shape");
    moments.push_back({m.storage(), v.storage()});
  }
  opt.restore(steps, std::move(moments));
}

}  // namespace

const Tensor<float>& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw CheckpointError("checkpoint has no tensor named " + name);
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return true;
  return false;
}

std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["train_config"] = ck.train_config;
  header["epoch"] = ck.epoch;
  if (!ck.optimizer.is_null()) header["optimizer"] = ck.optimizer;
  nlohmann::json entries = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : ck.tensors) {
    const std::size_t offset = payload.size();
    for (float v : t.values()) put_u32(payload, std::bit_cast<std::uint32_t>(v));
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"byte_offset", offset},
                       {"byte_len", payload.size() - offset}});
  }
  header["tensors"] = std::move(entries);
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t header_len = get_u32(raw + 4);
  if (8 + header_len > bytes.size()) throw CheckpointError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion)
      throw CheckpointError("unsupported checkpoint format_version " + std::to_string(version));
    ck.train_config = header.at("train_config");
    ck.epoch = header.at("epoch").get<int>();
    if (header.contains("optimizer")) ck.optimizer = header["optimizer"];
    const std::size_t base = 8 + header_len;
    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<Shape>();
      const std::size_t offset = e.at("byte_offset").get<std::size_t>();
      const std::size_t len = e.at("byte_len").get<std::size_t>();
      if (shape.empty() || shape_size(shape) * 4 != len)
        throw CheckpointError("tensor " + e.at("name").get<std::string>() + ": byte_len does not match shape");
      if (base + offset + len > bytes.size()) throw CheckpointError("checkpoint payload truncated");
      std::vector<float> values(shape_size(shape));
      for (std::size_t i = 0; i < values.size(); ++i)
        values[i] = std::bit_cast<float>(get_u32(raw + base + offset + 4 * i));
      ck.tensors.emplace_back(e.at("name").get<std::string>(), Tensor<float>(shape, std::move(values)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("malformed checkpoint tensor: ") + e.what());
  } catch (const DomainError& e) {
    throw CheckpointError(std::string("checkpoint holds non-finite values: ") + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomic(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

std::string read_checkpoint_header(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const std::size_t len = get_u32(reinterpret_cast<const unsigned char*>(bytes.data()) + 4);
  if (8 + len > bytes.size()) throw CheckpointError("checkpoint header truncated");
  const std::string text = bytes.substr(8, len);
  // Validates the version before handing the header out.
  decode_checkpoint(bytes);
  return text;
}

Checkpoint make_checkpoint(const Trainer& trainer, int epoch) {
  Checkpoint ck;
  ck.train_config = to_json(trainer.config());
  ck.epoch = epoch;
  for (const auto& [name, var] : trainer.model().parameters().items()) ck.tensors.emplace_back(name, var.value());
  ck.optimizer = {{"generator_steps", trainer.generator_optimizer().steps()},
                  {"critic_steps", trainer.critic_optimizer().steps()}};
  add_optimizer(ck, trainer.generator_optimizer());
  add_optimizer(ck, trainer.critic_optimizer());
  return ck;
}

CSliceGen<float> load_model(const Checkpoint& ck) {
  const TrainConfig cfg = train_config_from_json(ck.train_config);
  CSliceGen<float> model(cfg.model, cfg.seed);
  for (const auto& [name, var] : model.parameters().items()) {
    const Tensor<float>& t = ck.tensor(name);
    if (t.shape() != var.shape())
      throw CheckpointError("tensor " + name + " has shape " + shape_string(t.shape()) + ", model expects " +
                      shape_string(var.shape()));
    model.parameters().at(name).set_value(t);
  }
  return model;
}

Trainer restore_trainer(const Checkpoint& ck) { return restore_trainer(ck, train_config_from_json(ck.train_config)); }

Trainer restore_trainer(const Checkpoint& ck, const TrainConfig& config) {
  Trainer trainer(config, load_model(ck));
  if (!ck.optimizer.is_null()) {
    try {
      restore_optimizer(ck, trainer.generator_optimizer(), ck.optimizer.at("generator_steps").get<std::uint64_t>());
      restore_optimizer(ck, trainer.critic_optimizer(), ck.optimizer.at("critic_steps").get<std::uint64_t>());
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(std::string("malformed optimizer state: ") + e.what());
    }
  }
  return trainer;
}

}  // namespace slicegen
