#include "startopo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "startopo/error.hpp"

namespace startopo {

void TrainingConfig::validate() const {
  loss_weights.validate();
  if (epochs < 1) throw ConfigError("training: epochs must be >= 1");
  if (batch < 1) throw ConfigError("training: batch must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("training: validation_fraction must lie in [0, 1)");
  }
  if (early_stop_patience < 1) throw ConfigError("training: early_stop_patience must be >= 1");
  if (ray_stride < 1) throw ConfigError("training: ray_stride must be >= 1");
  if (strip_width < 1) throw ConfigError("training: strip_width must be >= 1");
  if (!(optimizer.learning_rate > 0.0) || !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
      !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.epsilon > 0.0)) {
    throw ConfigError("training: invalid optimizer settings");
  }
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"loss_weights", {{"alpha", c.loss_weights.alpha}, {"beta", c.loss_weights.beta}}},
                     {"optimizer", c.optimizer},
                     {"epochs", c.epochs},
                     {"batch", c.batch},
                     {"seed", c.seed},
                     {"validation_fraction", c.validation_fraction},
                     {"early_stop_patience", c.early_stop_patience},
                     {"ray_stride", c.ray_stride},
                     {"strip_width", c.strip_width}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  TrainingConfig d;
  if (j.contains("loss_weights")) {
    c.loss_weights.alpha = j["loss_weights"].value("alpha", d.loss_weights.alpha);
    c.loss_weights.beta = j["loss_weights"].value("beta", d.loss_weights.beta);
  }
  if (j.contains("optimizer")) c.optimizer = j["optimizer"].get<AdamConfig>();
  c.epochs = j.value("epochs", d.epochs);
  c.batch = j.value("batch", d.batch);
  c.seed = j.value("seed", d.seed);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.early_stop_patience = j.value("early_stop_patience", d.early_stop_patience);
  c.ray_stride = j.value("ray_stride", d.ray_stride);
  c.strip_width = j.value("strip_width", d.strip_width);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}, {"val_dice", r.val_dice}};
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").get<double>();
  r.val_dice = j.at("val_dice").get<double>();
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw IoError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return bytes(1)[0]; }
  std::uint32_t u32() {
    auto b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

nlohmann::json header_json(const Checkpoint& c) {
  return nlohmann::json{{"network", c.network},
                        {"training", c.training},
                        {"normalization", {{"mean", c.normalization.mean}, {"std", c.normalization.std}}},
                        {"history", c.history},
                        {"best_epoch", c.best_epoch}};
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(c.format_version);
  const std::string json = header_json(c).dump();
  w.u32(static_cast<std::uint32_t>(json.size()));
  w.bytes(json.data(), json.size());
  const auto& blocks = c.params.blocks();
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    w.u32(static_cast<std::uint32_t>(b.name.size()));
    w.bytes(b.name.data(), b.name.size());
    w.u8(b.learnable ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(b.shape.size()));
    for (int d : b.shape) w.u32(static_cast<std::uint32_t>(d));
    w.u64(b.value.size());
  }
  for (const auto& b : blocks) {
    for (float v : b.value) w.f32(v);
  }
  return w.take();
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.bytes(sizeof(kCheckpointMagic));
  if (std::memcmp(magic.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw IoError("not a checkpoint (bad magic bytes)");
  }
  Checkpoint c;
  c.format_version = r.u32();
  if (c.format_version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint format version " + std::to_string(c.format_version));
  }
  const auto json_bytes = r.bytes(r.u32());
  try {
    const auto j = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
    c.network = j.at("network").get<NetworkConfig>();
    c.training = j.at("training").get<TrainingConfig>();
    c.normalization.mean = j.at("normalization").at("mean").get<double>();
    c.normalization.std = j.at("normalization").at("std").get<double>();
    c.history = j.at("history").get<std::vector<EpochRecord>>();
    c.best_epoch = j.at("best_epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header is malformed: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  std::vector<std::uint64_t> sizes;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name = r.bytes(r.u32());
    const bool learnable = r.u8() != 0;
    const std::uint32_t rank = r.u32();
    std::vector<int> shape;
    std::uint64_t expected = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(r.u32()));
      expected *= static_cast<std::uint64_t>(shape.back());
    }
    const std::uint64_t n = r.u64();
    if (n != expected) throw IoError("checkpoint block element count disagrees with its shape");
    c.params.add(std::string(name.begin(), name.end()), shape, learnable);
    sizes.push_back(n);
  }
  for (std::uint32_t k = 0; k < count; ++k) {
    auto& values = c.params[k].value;
    r.need(sizes[k] * 4);
    for (auto& v : values) v = r.f32();
  }
  if (!r.done()) throw IoError("checkpoint has trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const IoError& e) {
    throw IoError("checkpoint '" + path.string() + "': " + e.what());
  }
}

nlohmann::json history_json(const Checkpoint& c) {
  return nlohmann::json{{"network", c.network},
                        {"training", c.training},
                        {"normalization", {{"mean", c.normalization.mean}, {"std", c.normalization.std}}},
                        {"best_epoch", c.best_epoch},
                        {"history", c.history}};
}

}  // namespace startopo
