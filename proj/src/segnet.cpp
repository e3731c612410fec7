#include "startopo/segnet.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>

#include "startopo/error.hpp"
#include "startopo/rng.hpp"

namespace startopo {

// ---------------------------------------------------------------------------
// Config

void NetworkConfig::validate() const {
  if (levels < 1 || levels > 8) throw ConfigError("network: levels must be in [1, 8]");
  if (base_channels < 1 || base_channels > 256) {
    throw ConfigError("network: base_channels must be in [1, 256]");
  }
  if (kernel_size != 3) throw ConfigError("network: kernel_size is fixed at 3");
  if (upsample != "transposed_conv") throw ConfigError("network: upsample must be transposed_conv");
  if (normalization != "batch_norm") throw ConfigError("network: normalization must be batch_norm");
  if (activation != "relu") throw ConfigError("network: activation must be relu");
  if (output != "sigmoid") throw ConfigError("network: output must be sigmoid");
}

void NetworkConfig::check_input(std::size_t height, std::size_t width) const {
  std::size_t h = height;
  std::size_t w = width;
  for (int level = 0; level < levels; ++level) {
    if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
      throw DimensionError("network level " + std::to_string(level) + ": input " +
                           std::to_string(h) + "x" + std::to_string(w) +
                           " cannot be halved (need height and width divisible by 2^" +
                           std::to_string(levels) + ")");
    }
    h /= 2;
    w /= 2;
  }
}

void to_json(nlohmann::json& j, const NetworkConfig& c) {
  j = nlohmann::json{{"levels", c.levels},         {"base_channels", c.base_channels},
                     {"kernel_size", c.kernel_size}, {"upsample", c.upsample},
                     {"normalization", c.normalization}, {"activation", c.activation},
                     {"output", c.output}};
}

void from_json(const nlohmann::json& j, NetworkConfig& c) {
  NetworkConfig d;
  c.levels = j.value("levels", d.levels);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.kernel_size = j.value("kernel_size", d.kernel_size);
  c.upsample = j.value("upsample", d.upsample);
  c.normalization = j.value("normalization", d.normalization);
  c.activation = j.value("activation", d.activation);
  c.output = j.value("output", d.output);
}

void to_json(nlohmann::json& j, const AdamConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"epsilon", c.epsilon}};
}

void from_json(const nlohmann::json& j, AdamConfig& c) {
  AdamConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
}

// ---------------------------------------------------------------------------
// Parameters

ParamBlock& ModelParams::add(std::string name, std::vector<int> shape, bool learnable) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  ParamBlock b;
  b.name = std::move(name);
  b.shape = std::move(shape);
  b.value.assign(n, 0.0f);
  b.grad.assign(learnable ? n : 0, 0.0f);
  b.learnable = learnable;
  blocks_.push_back(std::move(b));
  return blocks_.back();
}

std::size_t ModelParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return i;
  }
  throw ConsistencyError("unknown parameter block '" + name + "'");
}

std::size_t ModelParams::learnable_scalars() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) {
    if (b.learnable) n += b.value.size();
  }
  return n;
}

void ModelParams::zero_grad() {
  for (auto& b : blocks_) std::fill(b.grad.begin(), b.grad.end(), 0.0f);
}

bool ModelParams::all_finite() const {
  for (const auto& b : blocks_) {
    for (float v : b.value) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.blocks_.size() != b.blocks_.size()) return false;
  for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
    const auto& x = a.blocks_[i];
    const auto& y = b.blocks_[i];
    if (x.name != y.name || x.shape != y.shape || x.learnable != y.learnable) return false;
    if (x.value.size() != y.value.size() ||
        std::memcmp(x.value.data(), y.value.data(), x.value.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

std::size_t count_params(const NetworkConfig& config) {
  config.validate();
  auto conv = [](std::size_t in, std::size_t out) { return 9 * in * out + 2 * out; };
  std::size_t total = 0;
  std::size_t in = 1;
  for (int k = 0; k <= config.levels; ++k) {
    const auto c = static_cast<std::size_t>(config.channels(k));
    total += conv(in, c) + conv(c, c);
    in = c;
  }
  for (int k = config.levels - 1; k >= 0; --k) {
    const auto c = static_cast<std::size_t>(config.channels(k));
    total += 4 * (2 * c) * c + 2 * c;  // transposed conv + norm
    total += conv(2 * c, c) + conv(c, c);
  }
  total += static_cast<std::size_t>(config.channels(0)) + 1;  // 1x1 head
  return total;
}

// ---------------------------------------------------------------------------
// Layers

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return plane() * c; }
  float* sample(int s) { return data.data() + sample_size() * s; }
  const float* sample(int s) const { return data.data() + sample_size() * s; }
};

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.1f;

void im2col(const float* in, int cin, int h, int w, float* col) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < cin; ++ci) {
    const float* plane = in + hw * ci;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* dst = col + hw * (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx);
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int y = 0; y < h; ++y) {
          float* row = dst + static_cast<std::size_t>(y) * w;
          const int sy = y + dy;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          std::fill(row, row + x0, 0.0f);
          std::memcpy(row + x0, src + x0 + dx, sizeof(float) * static_cast<std::size_t>(x1 - x0));
          std::fill(row + x1, row + w, 0.0f);
        }
      }
    }
  }
}

void col2im(const float* col, int cin, int h, int w, float* out) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < cin; ++ci) {
    float* plane = out + hw * ci;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* src = col + hw * (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx);
        const int dy = ky - 1;
        const int dx = kx - 1;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const float* row = src + static_cast<std::size_t>(y) * w;
          float* dst = plane + static_cast<std::size_t>(sy) * w;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          for (int x = x0; x < x1; ++x) dst[x + dx] += row[x];
        }
      }
    }
  }
}

void init_uniform(ParamBlock& b, double bound, Xoshiro256& rng) {
  for (float& v : b.value) v = static_cast<float>(rng.uniform(-bound, bound));
}

// 3x3 convolution, stride 1, zero padding 1, no bias (a norm layer follows).
struct Conv3 {
  std::size_t weight = 0;
  int cin = 0, cout = 0;
  Tensor input;
  std::vector<float> col;

  void create(ModelParams& p, const std::string& name, int in, int out) {
    cin = in;
    cout = out;
    weight = p.blocks().size();
    p.add(name + ".weight", {out, in, 3, 3}, true);
  }

  void init(ModelParams& p, Xoshiro256& rng) const {
    init_uniform(p[weight], std::sqrt(6.0 / (9.0 * cin)), rng);
  }

  Tensor forward(const Tensor& x, ModelParams& p, bool train) {
    Tensor y(x.n, cout, x.h, x.w);
    const auto hw = static_cast<Eigen::Index>(x.plane());
    const Eigen::Index k = static_cast<Eigen::Index>(cin) * 9;
    col.resize(static_cast<std::size_t>(k * hw));
    CMapR wmat(p[weight].value.data(), cout, k);
    for (int s = 0; s < x.n; ++s) {
      im2col(x.sample(s), cin, x.h, x.w, col.data());
      MapR(y.sample(s), cout, hw).noalias() = wmat * CMapR(col.data(), k, hw);
    }
    if (train) input = x;
    return y;
  }

  Tensor backward(const Tensor& dy, ModelParams& p, bool need_dx) {
    const auto hw = static_cast<Eigen::Index>(input.plane());
    const Eigen::Index k = static_cast<Eigen::Index>(cin) * 9;
    col.resize(static_cast<std::size_t>(k * hw));
    CMapR wmat(p[weight].value.data(), cout, k);
    MapR dw(p[weight].grad.data(), cout, k);
    Tensor dx;
    std::vector<float> dcol;
    if (need_dx) {
      dx = Tensor(input.n, cin, input.h, input.w);
      dcol.resize(col.size());
    }
    for (int s = 0; s < input.n; ++s) {
      im2col(input.sample(s), cin, input.h, input.w, col.data());
      CMapR g(dy.sample(s), cout, hw);
      dw.noalias() += g * CMapR(col.data(), k, hw).transpose();
      if (need_dx) {
        MapR(dcol.data(), k, hw).noalias() = wmat.transpose() * g;
        col2im(dcol.data(), cin, input.h, input.w, dx.sample(s));
      }
    }
    input = Tensor();
    return dx;
  }
};

struct BatchNorm {
  std::size_t gamma = 0, beta = 0, running_mean = 0, running_var = 0;
  int channels = 0;
  Tensor xhat;
  std::vector<float> inv_std;

  void create(ModelParams& p, const std::string& name, int c) {
    channels = c;
    gamma = p.blocks().size();
    p.add(name + ".gamma", {c}, true);
    beta = p.blocks().size();
    p.add(name + ".beta", {c}, true);
    running_mean = p.blocks().size();
    p.add(name + ".running_mean", {c}, false);
    running_var = p.blocks().size();
    p.add(name + ".running_var", {c}, false);
  }

  void init(ModelParams& p) const {
    std::fill(p[gamma].value.begin(), p[gamma].value.end(), 1.0f);
    std::fill(p[beta].value.begin(), p[beta].value.end(), 0.0f);
    std::fill(p[running_mean].value.begin(), p[running_mean].value.end(), 0.0f);
    std::fill(p[running_var].value.begin(), p[running_var].value.end(), 1.0f);
  }

  Tensor forward(Tensor x, ModelParams& p, bool train) {
    const std::size_t plane = x.plane();
    const auto& g = p[gamma].value;
    const auto& b = p[beta].value;
    if (!train) {
      const auto& rm = p[running_mean].value;
      const auto& rv = p[running_var].value;
      for (int s = 0; s < x.n; ++s) {
        for (int c = 0; c < x.c; ++c) {
          const float scale = g[c] / std::sqrt(rv[c] + kBnEps);
          const float shift = b[c] - rm[c] * scale;
          float* v = x.sample(s) + plane * c;
          for (std::size_t i = 0; i < plane; ++i) v[i] = v[i] * scale + shift;
        }
      }
      return x;
    }
    const double m = static_cast<double>(plane) * x.n;
    inv_std.assign(static_cast<std::size_t>(x.c), 0.0f);
    auto& rm = p[running_mean].value;
    auto& rv = p[running_var].value;
    for (int c = 0; c < x.c; ++c) {
      double sum = 0.0;
      for (int s = 0; s < x.n; ++s) {
        const float* v = x.sample(s) + plane * c;
        for (std::size_t i = 0; i < plane; ++i) sum += v[i];
      }
      const double mean = sum / m;
      double sq = 0.0;
      for (int s = 0; s < x.n; ++s) {
        const float* v = x.sample(s) + plane * c;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = v[i] - mean;
          sq += d * d;
        }
      }
      const double var = sq / m;
      const auto inv = static_cast<float>(1.0 / std::sqrt(var + kBnEps));
      inv_std[static_cast<std::size_t>(c)] = inv;
      const auto meanf = static_cast<float>(mean);
      for (int s = 0; s < x.n; ++s) {
        float* v = x.sample(s) + plane * c;
        for (std::size_t i = 0; i < plane; ++i) v[i] = (v[i] - meanf) * inv;
      }
      rm[c] = (1.0f - kBnMomentum) * rm[c] + kBnMomentum * meanf;
      const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      rv[c] = (1.0f - kBnMomentum) * rv[c] + kBnMomentum * static_cast<float>(unbiased);
    }
    xhat = x;
    for (int s = 0; s < x.n; ++s) {
      for (int c = 0; c < x.c; ++c) {
        float* v = x.sample(s) + plane * c;
        for (std::size_t i = 0; i < plane; ++i) v[i] = v[i] * g[c] + b[c];
      }
    }
    return x;
  }

  Tensor backward(Tensor dy, ModelParams& p) {
    const std::size_t plane = dy.plane();
    const double m = static_cast<double>(plane) * dy.n;
    const auto& g = p[gamma].value;
    auto& dg = p[gamma].grad;
    auto& db = p[beta].grad;
    for (int c = 0; c < dy.c; ++c) {
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (int s = 0; s < dy.n; ++s) {
        const float* d = dy.sample(s) + plane * c;
        const float* xh = xhat.sample(s) + plane * c;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += d[i];
          sum_dy_xhat += static_cast<double>(d[i]) * xh[i];
        }
      }
      dg[c] += static_cast<float>(sum_dy_xhat);
      db[c] += static_cast<float>(sum_dy);
      const auto scale = static_cast<float>(g[c] * inv_std[static_cast<std::size_t>(c)] / m);
      const auto mf = static_cast<float>(m);
      const auto sdy = static_cast<float>(sum_dy);
      const auto sdx = static_cast<float>(sum_dy_xhat);
      for (int s = 0; s < dy.n; ++s) {
        float* d = dy.sample(s) + plane * c;
        const float* xh = xhat.sample(s) + plane * c;
        for (std::size_t i = 0; i < plane; ++i) d[i] = scale * (mf * d[i] - sdy - xh[i] * sdx);
      }
    }
    xhat = Tensor();
    return dy;
  }
};

struct Relu {
  Tensor output;

  Tensor forward(Tensor x, bool train) {
    for (float& v : x.data) v = v > 0.0f ? v : 0.0f;
    if (train) output = x;
    return x;
  }

  Tensor backward(Tensor dy) {
    for (std::size_t i = 0; i < dy.data.size(); ++i) {
      if (!(output.data[i] > 0.0f)) dy.data[i] = 0.0f;
    }
    output = Tensor();
    return dy;
  }
};

struct MaxPool {
  std::vector<std::uint32_t> argmax;
  int in_h = 0, in_w = 0, in_c = 0, in_n = 0;

  Tensor forward(const Tensor& x, bool train) {
    Tensor y(x.n, x.c, x.h / 2, x.w / 2);
    in_n = x.n;
    in_c = x.c;
    in_h = x.h;
    in_w = x.w;
    if (train) argmax.assign(y.data.size(), 0);
    std::size_t o = 0;
    for (int s = 0; s < x.n; ++s) {
      for (int c = 0; c < x.c; ++c) {
        const float* plane = x.sample(s) + x.plane() * c;
        for (int yy = 0; yy < y.h; ++yy) {
          for (int xx = 0; xx < y.w; ++xx, ++o) {
            std::uint32_t best = static_cast<std::uint32_t>(2 * yy * x.w + 2 * xx);
            const std::uint32_t cand[3] = {best + 1, best + static_cast<std::uint32_t>(x.w),
                                           best + static_cast<std::uint32_t>(x.w) + 1};
            for (std::uint32_t q : cand) {
              if (plane[q] > plane[best]) best = q;
            }
            y.data[o] = plane[best];
            if (train) argmax[o] = best;
          }
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy) {
    Tensor dx(in_n, in_c, in_h, in_w);
    std::size_t o = 0;
    for (int s = 0; s < dy.n; ++s) {
      for (int c = 0; c < dy.c; ++c) {
        float* plane = dx.sample(s) + dx.plane() * c;
        for (std::size_t i = 0; i < dy.plane(); ++i, ++o) plane[argmax[o]] += dy.data[o];
      }
    }
    argmax.clear();
    return dx;
  }
};

// 2x2 stride-2 transposed convolution, no bias (a norm layer follows).
// Weight layout: row (co * 4 + dy * 2 + dx), column ci.
struct ConvT2 {
  std::size_t weight = 0;
  int cin = 0, cout = 0;
  Tensor input;
  std::vector<float> buf;

  void create(ModelParams& p, const std::string& name, int in, int out) {
    cin = in;
    cout = out;
    weight = p.blocks().size();
    p.add(name + ".weight", {out, 2, 2, in}, true);
  }

  void init(ModelParams& p, Xoshiro256& rng) const {
    init_uniform(p[weight], std::sqrt(6.0 / cin), rng);
  }

  Tensor forward(const Tensor& x, ModelParams& p, bool train) {
    Tensor y(x.n, cout, x.h * 2, x.w * 2);
    const auto hw = static_cast<Eigen::Index>(x.plane());
    const Eigen::Index rows = static_cast<Eigen::Index>(cout) * 4;
    buf.resize(static_cast<std::size_t>(rows * hw));
    CMapR wmat(p[weight].value.data(), rows, cin);
    for (int s = 0; s < x.n; ++s) {
      MapR(buf.data(), rows, hw).noalias() = wmat * CMapR(x.sample(s), cin, hw);
      float* out = y.sample(s);
      for (int co = 0; co < cout; ++co) {
        float* plane = out + y.plane() * co;
        for (int q = 0; q < 4; ++q) {
          const int dy = q / 2;
          const int dx = q % 2;
          const float* src = buf.data() + static_cast<std::size_t>(co * 4 + q) * hw;
          for (int yy = 0; yy < x.h; ++yy) {
            float* dst = plane + static_cast<std::size_t>(2 * yy + dy) * y.w + dx;
            const float* row = src + static_cast<std::size_t>(yy) * x.w;
            for (int xx = 0; xx < x.w; ++xx) dst[2 * xx] = row[xx];
          }
        }
      }
    }
    if (train) input = x;
    return y;
  }

  Tensor backward(const Tensor& dyt, ModelParams& p) {
    const auto hw = static_cast<Eigen::Index>(input.plane());
    const Eigen::Index rows = static_cast<Eigen::Index>(cout) * 4;
    buf.resize(static_cast<std::size_t>(rows * hw));
    CMapR wmat(p[weight].value.data(), rows, cin);
    MapR dw(p[weight].grad.data(), rows, cin);
    Tensor dx(input.n, cin, input.h, input.w);
    for (int s = 0; s < input.n; ++s) {
      const float* g = dyt.sample(s);
      for (int co = 0; co < cout; ++co) {
        const float* plane = g + dyt.plane() * co;
        for (int q = 0; q < 4; ++q) {
          const int dy = q / 2;
          const int dx_ = q % 2;
          float* dst = buf.data() + static_cast<std::size_t>(co * 4 + q) * hw;
          for (int yy = 0; yy < input.h; ++yy) {
            const float* src = plane + static_cast<std::size_t>(2 * yy + dy) * dyt.w + dx_;
            float* row = dst + static_cast<std::size_t>(yy) * input.w;
            for (int xx = 0; xx < input.w; ++xx) row[xx] = src[2 * xx];
          }
        }
      }
      CMapR gm(buf.data(), rows, hw);
      dw.noalias() += gm * CMapR(input.sample(s), cin, hw).transpose();
      MapR(dx.sample(s), cin, hw).noalias() = wmat.transpose() * gm;
    }
    input = Tensor();
    return dx;
  }
};

struct ConvBlock {
  Conv3 conv1, conv2;
  BatchNorm bn1, bn2;
  Relu relu1, relu2;

  void create(ModelParams& p, const std::string& name, int in, int out) {
    conv1.create(p, name + ".conv1", in, out);
    bn1.create(p, name + ".bn1", out);
    conv2.create(p, name + ".conv2", out, out);
    bn2.create(p, name + ".bn2", out);
  }

  void init(ModelParams& p, Xoshiro256& rng) const {
    conv1.init(p, rng);
    bn1.init(p);
    conv2.init(p, rng);
    bn2.init(p);
  }

  Tensor forward(const Tensor& x, ModelParams& p, bool train) {
    Tensor y = relu1.forward(bn1.forward(conv1.forward(x, p, train), p, train), train);
    return relu2.forward(bn2.forward(conv2.forward(y, p, train), p, train), train);
  }

  Tensor backward(Tensor dy, ModelParams& p, bool need_dx) {
    dy = conv2.backward(bn2.backward(relu2.backward(std::move(dy)), p), p, true);
    return conv1.backward(bn1.backward(relu1.backward(std::move(dy)), p), p, need_dx);
  }
};

struct UpBlock {
  ConvT2 up;
  BatchNorm bn;
  Relu relu;

  void create(ModelParams& p, const std::string& name, int in, int out) {
    up.create(p, name, in, out);
    bn.create(p, name + ".bn", out);
  }

  void init(ModelParams& p, Xoshiro256& rng) const {
    up.init(p, rng);
    bn.init(p);
  }

  Tensor forward(const Tensor& x, ModelParams& p, bool train) {
    return relu.forward(bn.forward(up.forward(x, p, train), p, train), train);
  }

  Tensor backward(Tensor dy, ModelParams& p) {
    return up.backward(bn.backward(relu.backward(std::move(dy)), p), p);
  }
};

Tensor concat(const Tensor& a, const Tensor& b) {
  Tensor y(a.n, a.c + b.c, a.h, a.w);
  for (int s = 0; s < a.n; ++s) {
    std::copy(a.sample(s), a.sample(s) + a.sample_size(), y.sample(s));
    std::copy(b.sample(s), b.sample(s) + b.sample_size(), y.sample(s) + a.sample_size());
  }
  return y;
}

std::pair<Tensor, Tensor> split(const Tensor& y, int ca) {
  Tensor a(y.n, ca, y.h, y.w);
  Tensor b(y.n, y.c - ca, y.h, y.w);
  for (int s = 0; s < y.n; ++s) {
    std::copy(y.sample(s), y.sample(s) + a.sample_size(), a.sample(s));
    std::copy(y.sample(s) + a.sample_size(), y.sample(s) + y.sample_size(), b.sample(s));
  }
  return {std::move(a), std::move(b)};
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// Probabilities are kept strictly inside (0,1).
constexpr double kProbFloor = 1e-15;

}  // namespace

// ---------------------------------------------------------------------------
// SegNet

struct SegNet::Impl {
  NetworkConfig config;
  ModelParams params;
  std::vector<ConvBlock> enc;
  std::vector<MaxPool> pools;
  ConvBlock mid;
  std::vector<UpBlock> ups;
  std::vector<ConvBlock> dec;
  std::size_t head_weight = 0, head_bias = 0;

  // Train-mode caches.
  Tensor head_input;
  std::vector<ProbabilityMap> probs;
  bool has_train_cache = false;

  explicit Impl(const NetworkConfig& cfg) : config(cfg) {
    config.validate();
    const int levels = config.levels;
    enc.resize(static_cast<std::size_t>(levels));
    pools.resize(static_cast<std::size_t>(levels));
    ups.resize(static_cast<std::size_t>(levels));
    dec.resize(static_cast<std::size_t>(levels));
    int in = 1;
    for (int k = 0; k < levels; ++k) {
      enc[static_cast<std::size_t>(k)].create(params, "enc" + std::to_string(k), in, config.channels(k));
      in = config.channels(k);
    }
    mid.create(params, "bottleneck", in, config.channels(levels));
    for (int k = levels - 1; k >= 0; --k) {
      const int c = config.channels(k);
      ups[static_cast<std::size_t>(k)].create(params, "up" + std::to_string(k), config.channels(k + 1), c);
      dec[static_cast<std::size_t>(k)].create(params, "dec" + std::to_string(k), 2 * c, c);
    }
    head_weight = params.blocks().size();
    params.add("head.weight", {1, config.channels(0)}, true);
    head_bias = params.blocks().size();
    params.add("head.bias", {1}, true);
  }

  void init(std::uint64_t seed) {
    Xoshiro256 rng(derive_seed(seed, 0x696e6974));  // "init"
    for (const auto& b : enc) b.init(params, rng);
    mid.init(params, rng);
    for (int k = config.levels - 1; k >= 0; --k) {
      ups[static_cast<std::size_t>(k)].init(params, rng);
      dec[static_cast<std::size_t>(k)].init(params, rng);
    }
    init_uniform(params[head_weight], 1.0 / std::sqrt(static_cast<double>(config.channels(0))), rng);
    params[head_bias].value[0] = 0.0f;
  }

  std::vector<ProbabilityMap> forward(std::span<const NormalizedImage> batch, Mode mode) {
    if (batch.empty()) throw DimensionError("network forward: empty batch");
    const std::size_t h = batch[0].height();
    const std::size_t w = batch[0].width();
    for (const auto& img : batch) {
      if (!img.same_shape(h, w)) throw DimensionError("network forward: batch members differ in shape");
    }
    config.check_input(h, w);
    const bool train = mode == Mode::Train;
    Tensor x(static_cast<int>(batch.size()), 1, static_cast<int>(h), static_cast<int>(w));
    for (std::size_t s = 0; s < batch.size(); ++s) {
      for (std::size_t i = 0; i < h * w; ++i) x.sample(static_cast<int>(s))[i] = static_cast<float>(batch[s][i]);
    }
    const int levels = config.levels;
    std::vector<Tensor> skips(static_cast<std::size_t>(levels));
    for (int k = 0; k < levels; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      skips[ku] = enc[ku].forward(x, params, train);
      x = pools[ku].forward(skips[ku], train);
    }
    x = mid.forward(x, params, train);
    for (int k = levels - 1; k >= 0; --k) {
      const auto ku = static_cast<std::size_t>(k);
      Tensor up = ups[ku].forward(x, params, train);
      x = dec[ku].forward(concat(skips[ku], up), params, train);
      skips[ku] = Tensor();
    }
    const auto& hw_ = params[head_weight].value;
    const double bias = params[head_bias].value[0];
    std::vector<ProbabilityMap> out;
    out.reserve(batch.size());
    for (int s = 0; s < x.n; ++s) {
      std::vector<double> p(x.plane());
      const float* feat = x.sample(s);
      for (std::size_t i = 0; i < x.plane(); ++i) {
        double z = bias;
        for (int c = 0; c < x.c; ++c) z += static_cast<double>(hw_[static_cast<std::size_t>(c)]) * feat[x.plane() * c + i];
        const double prob = 1.0 / (1.0 + std::exp(-z));
        p[i] = std::clamp(prob, kProbFloor, 1.0 - kProbFloor);
      }
      out.emplace_back(h, w, std::move(p));
    }
    if (train) {
      head_input = std::move(x);
      probs = out;
      has_train_cache = true;
    } else {
      has_train_cache = false;
    }
    return out;
  }

  void backward(std::span<const RealGrid> grad_probs) {
    if (!has_train_cache) throw ConsistencyError("network backward: no train-mode forward pass to differentiate");
    if (grad_probs.size() != probs.size()) throw DimensionError("network backward: gradient batch size mismatch");
    const Tensor& x = head_input;
    Tensor dx(x.n, x.c, x.h, x.w);
    auto& hw_ = params[head_weight];
    auto& hb = params[head_bias];
    std::vector<double> dw(static_cast<std::size_t>(x.c), 0.0);
    double db = 0.0;
    for (int s = 0; s < x.n; ++s) {
      const auto& g = grad_probs[static_cast<std::size_t>(s)];
      const auto& p = probs[static_cast<std::size_t>(s)];
      require_same_shape(g, p, "network backward");
      const float* feat = x.sample(s);
      float* dfeat = dx.sample(s);
      for (std::size_t i = 0; i < x.plane(); ++i) {
        const double dz = g[i] * p[i] * (1.0 - p[i]);
        db += dz;
        for (int c = 0; c < x.c; ++c) {
          const std::size_t idx = x.plane() * static_cast<std::size_t>(c) + i;
          dw[static_cast<std::size_t>(c)] += dz * feat[idx];
          dfeat[idx] = static_cast<float>(dz * hw_.value[static_cast<std::size_t>(c)]);
        }
      }
    }
    for (int c = 0; c < x.c; ++c) hw_.grad[static_cast<std::size_t>(c)] += static_cast<float>(dw[static_cast<std::size_t>(c)]);
    hb.grad[0] += static_cast<float>(db);
    head_input = Tensor();
    probs.clear();
    has_train_cache = false;

    const int levels = config.levels;
    std::vector<Tensor> dskips(static_cast<std::size_t>(levels));
    for (int k = 0; k < levels; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      Tensor dcat = dec[ku].backward(std::move(dx), params, true);
      auto [dskip, dup] = split(dcat, config.channels(k));
      dskips[ku] = std::move(dskip);
      dx = ups[ku].backward(std::move(dup), params);
    }
    dx = mid.backward(std::move(dx), params, true);
    for (int k = levels - 1; k >= 0; --k) {
      const auto ku = static_cast<std::size_t>(k);
      Tensor d = pools[ku].backward(dx);
      add_into(d, dskips[ku]);
      dskips[ku] = Tensor();
      dx = enc[ku].backward(std::move(d), params, k > 0);
    }
  }
};

SegNet::SegNet(const NetworkConfig& config, std::uint64_t seed) : impl_(std::make_unique<Impl>(config)) {
  impl_->init(seed);
}

SegNet::SegNet(const NetworkConfig& config, ModelParams params) : impl_(std::make_unique<Impl>(config)) {
  auto& mine = impl_->params.blocks();
  auto& theirs = params.blocks();
  if (mine.size() != theirs.size()) {
    throw ConsistencyError("parameter set has " + std::to_string(theirs.size()) + " blocks, network expects " +
                           std::to_string(mine.size()));
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].name != theirs[i].name || mine[i].shape != theirs[i].shape ||
        mine[i].value.size() != theirs[i].value.size()) {
      throw ConsistencyError("parameter block '" + theirs[i].name + "' does not match network layout ('" +
                             mine[i].name + "')");
    }
    mine[i].value = std::move(theirs[i].value);
  }
  if (!impl_->params.all_finite()) throw ValueError("parameters contain non-finite values");
}

SegNet::~SegNet() = default;
SegNet::SegNet(SegNet&&) noexcept = default;
SegNet& SegNet::operator=(SegNet&&) noexcept = default;

const NetworkConfig& SegNet::config() const { return impl_->config; }
ModelParams& SegNet::params() { return impl_->params; }
const ModelParams& SegNet::params() const { return impl_->params; }

std::vector<ProbabilityMap> SegNet::forward(std::span<const NormalizedImage> batch, Mode mode) {
  return impl_->forward(batch, mode);
}

void SegNet::backward(std::span<const RealGrid> grad_probs) { impl_->backward(grad_probs); }

// ---------------------------------------------------------------------------
// Adam

void AdamOptimizer::step(ModelParams& params) {
  auto& blocks = params.blocks();
  if (m_.empty()) {
    for (const auto& b : blocks) {
      m_.emplace_back(b.grad.size(), 0.0f);
      v_.emplace_back(b.grad.size(), 0.0f);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(config_.beta1);
  const auto b2 = static_cast<float>(config_.beta2);
  const auto lr = static_cast<float>(config_.learning_rate);
  const auto eps = static_cast<float>(config_.epsilon);
  const auto inv_c1 = static_cast<float>(1.0 / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    auto& b = blocks[k];
    if (!b.learnable) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < b.value.size(); ++i) {
      const float g = b.grad[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      b.value[i] -= lr * (m[i] * inv_c1) / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

}  // namespace startopo
