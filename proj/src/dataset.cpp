#include "startopo/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "startopo/error.hpp"
#include "startopo/parallel.hpp"
#include "startopo/png_io.hpp"
#include "startopo/rng.hpp"

namespace startopo {

std::string to_string(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

std::string to_string(ImageSource source) { return source == ImageSource::Clean ? "clean" : "degraded"; }

ImageSource parse_image_source(const std::string& name) {
  if (name == "degraded") return ImageSource::Degraded;
  if (name == "clean") return ImageSource::Clean;
  throw ConfigError("unknown image source '" + name + "' (expected degraded or clean)");
}

std::vector<std::size_t> Manifest::indices(Split split) const {
  const std::string name = to_string(split);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == name) out.push_back(i);
  }
  return out;
}

void to_json(nlohmann::json& j, const Manifest& m) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : m.samples) {
    samples.push_back({{"image_path", s.image_path},
                       {"clean_image_path", s.clean_image_path},
                       {"label_path", s.label_path},
                       {"sample_seed", s.sample_seed},
                       {"split", s.split}});
  }
  j = nlohmann::json{{"version", m.version},
                     {"phantom_config", m.phantom_config},
                     {"degradation_config", m.degradation_config},
                     {"seed", m.seed},
                     {"test_fraction", m.test_fraction},
                     {"validation_fraction", m.validation_fraction},
                     {"samples", samples}};
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::filesystem::path file = path;
  if (std::filesystem::is_directory(file)) file /= "manifest.json";
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest '" + file.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest '" + file.string() + "': " + e.what());
  }
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    if (m.version != kManifestVersion) {
      throw IoError("manifest '" + file.string() + "' has unsupported version " + std::to_string(m.version));
    }
    m.phantom_config = j.at("phantom_config").get<PhantomConfig>();
    m.degradation_config = j.at("degradation_config").get<DegradationConfig>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.test_fraction = j.value("test_fraction", 0.2);
    m.validation_fraction = j.value("validation_fraction", 0.2);
    for (const auto& s : j.at("samples")) {
      SampleRecord r;
      r.image_path = s.at("image_path").get<std::string>();
      r.clean_image_path = s.value("clean_image_path", std::string());
      r.label_path = s.at("label_path").get<std::string>();
      r.sample_seed = s.at("sample_seed").get<std::uint64_t>();
      r.split = s.at("split").get<std::string>();
      parse_split(r.split);
      m.samples.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest '" + file.string() + "': " + e.what());
  }
  m.root = file.parent_path();
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write manifest '" + file.string() + "'");
  out << nlohmann::json(manifest).dump(2) << '\n';
  if (!out) throw IoError("failed writing manifest '" + file.string() + "'");
}

Manifest generate_dataset(std::size_t count, const PhantomConfig& phantom,
                          const DegradationConfig& degradation, std::uint64_t seed,
                          const std::filesystem::path& out, const DatasetOptions& options) {
  if (count == 0) throw ConfigError("dataset count must be >= 1");
  phantom.validate();
  degradation.validate();
  if (degradation.column_jitter_amplitude > phantom.margin) {
    throw ConfigError("column jitter amplitude exceeds the phantom margin; the band could leave the frame");
  }
  if (!(options.test_fraction >= 0.0 && options.test_fraction < 1.0) ||
      !(options.validation_fraction >= 0.0 && options.validation_fraction < 1.0)) {
    throw ConfigError("split fractions must lie in [0, 1)");
  }
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create dataset directory '" + out.string() + "': " + ec.message());

  Manifest m;
  m.phantom_config = phantom;
  m.degradation_config = degradation;
  m.seed = seed;
  m.test_fraction = options.test_fraction;
  m.validation_fraction = options.validation_fraction;
  m.root = out;

  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Xoshiro256 rng(derive_seed(seed, 0x73706c74));  // "splt"
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::lround(options.test_fraction * static_cast<double>(count)));
  const auto n_val =
      static_cast<std::size_t>(std::lround(options.validation_fraction * static_cast<double>(count - n_test)));
  std::vector<std::string> split(count, "train");
  for (std::size_t k = 0; k < count; ++k) {
    if (k < n_test) {
      split[order[k]] = "test";
    } else if (k < n_test + n_val) {
      split[order[k]] = "val";
    }
  }

  m.samples.resize(count);
  parallel_for(count, [&](std::size_t i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%04zu.png", i);
    SampleRecord r;
    r.image_path = std::string("image_") + stem;
    r.clean_image_path = std::string("clean_") + stem;
    r.label_path = std::string("label_") + stem;
    r.sample_seed = seed + i;
    r.split = split[i];
    const SamplePair pair = generate_phantom(phantom, r.sample_seed);
    write_gray_png(out / r.image_path, degrade(pair.image, degradation, r.sample_seed));
    write_gray_png(out / r.clean_image_path, pair.image);
    write_mask_png(out / r.label_path, pair.label);
    m.samples[i] = std::move(r);
  });
  save_manifest(m, out / "manifest.json");
  return m;
}

std::vector<std::filesystem::path> generate_frames(std::size_t count, const PhantomConfig& phantom,
                                                   const DegradationConfig& degradation, std::uint64_t seed,
                                                   const std::filesystem::path& out) {
  if (count == 0) throw ConfigError("frame count must be positive");
  phantom.validate();
  degradation.validate();
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create frame directory '" + out.string() + "': " + ec.message());
  std::vector<std::filesystem::path> files(count);
  parallel_for(count, [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.png", i);
    files[i] = out / name;
    const SamplePair pair = generate_phantom(phantom, seed + i);
    write_gray_png(files[i], degrade(pair.image, degradation, seed + i));
  });
  return files;
}

LoadedSample load_sample(const Manifest& manifest, std::size_t index, ImageSource source) {
  if (index >= manifest.samples.size()) {
    throw ConsistencyError("sample index " + std::to_string(index) + " out of range");
  }
  const auto& r = manifest.samples[index];
  const std::string& image = source == ImageSource::Clean ? r.clean_image_path : r.image_path;
  if (image.empty()) throw IoError("sample " + std::to_string(index) + " has no " + to_string(source) + " image");
  LoadedSample s{read_gray_png(manifest.resolve(image)), read_mask_png(manifest.resolve(r.label_path))};
  if (!s.image.same_shape(s.label)) {
    throw DimensionError("sample " + std::to_string(index) + ": image and label shapes differ");
  }
  return s;
}

std::string bytes_digest(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for hashing");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes_digest(bytes);
}

}  // namespace startopo
