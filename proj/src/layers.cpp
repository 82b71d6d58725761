#include "hasnets/layers.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "hasnets/errors.hpp"

namespace hasnets::nn {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::size_t parse_count(const std::string& text, std::string_view what) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value == 0) {
    throw ConfigError("bad " + std::string(what) + " '" + text + "' in layer descriptor");
  }
  return value;
}

std::vector<std::string> split_args(std::string_view inner) {
  std::vector<std::string> args;
  std::size_t start = 0;
  while (start <= inner.size()) {
    const auto comma = inner.find(',', start);
    const auto end = comma == std::string_view::npos ? inner.size() : comma;
    args.push_back(trim(inner.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return args;
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void fill_uniform(Tensor& t, double limit, Rng& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.data()) v = dist(rng);
}

void require_rank(const Shape& in, std::size_t rank, std::string_view layer) {
  if (in.size() != rank) {
    throw ConfigError(std::string(layer) + " expects a rank-" + std::to_string(rank) +
                      " sample shape, got " + shape_string(in));
  }
}

Shape with_batch(std::size_t batch, const Shape& sample) {
  Shape s;
  s.reserve(sample.size() + 1);
  s.push_back(batch);
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void check_batch(const Tensor& x, const Shape& sample, std::string_view layer) {
  if (x.rank() != sample.size() + 1 || !std::equal(sample.begin(), sample.end(), x.shape().begin() + 1)) {
    throw ConfigError(std::string(layer) + ": input " + shape_string(x.shape()) +
                      " does not match expected sample shape " + shape_string(sample));
  }
}

class Dense final : public Layer {
 public:
  Dense(const Shape& in, std::size_t units, Rng& rng)
      : in_shape_(in), in_size_(shape_size(in)), units_(units),
        weight_({units, shape_size(in)}), bias_({units}) {
    fill_uniform(weight_, glorot_limit(in_size_, units_), rng);
  }

  LayerSpec spec() const override { return {LayerKind::dense, units_, 0, 0.0}; }
  Shape output_shape() const override { return {units_}; }

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_batch(x, in_shape_, "dense");
    input_ = x;
    const std::size_t batch = x.dim(0);
    Tensor y({batch, units_});
    const double* w = weight_.raw();
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xb = x.raw() + b * in_size_;
      double* yb = y.raw() + b * units_;
      for (std::size_t o = 0; o < units_; ++o) {
        const double* wo = w + o * in_size_;
        double acc = 0.0;
        for (std::size_t i = 0; i < in_size_; ++i) acc += wo[i] * xb[i];
        yb[o] = acc + bias_[o];
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy, bool need_input_grad) override {
    const std::size_t batch = input_.dim(0);
    auto dw = weight_.grad();
    auto db = bias_.grad();
    Tensor dx;
    if (need_input_grad) dx = Tensor(input_.shape());
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xb = input_.raw() + b * in_size_;
      const double* dyb = dy.raw() + b * units_;
      for (std::size_t o = 0; o < units_; ++o) {
        const double g = dyb[o];
        db[o] += g;
        double* dwo = dw.data() + o * in_size_;
        for (std::size_t i = 0; i < in_size_; ++i) dwo[i] += g * xb[i];
        if (need_input_grad) {
          const double* wo = weight_.raw() + o * in_size_;
          double* dxb = dx.raw() + b * in_size_;
          for (std::size_t i = 0; i < in_size_; ++i) dxb[i] += g * wo[i];
        }
      }
    }
    return dx;
  }

  std::vector<Tensor*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  Shape in_shape_;
  std::size_t in_size_;
  std::size_t units_;
  Tensor weight_;  // [units, in]
  Tensor bias_;
  Tensor input_;
};

// Valid padding, stride 1, NHWC. Weights are [filters, k, k, channels] so that
// one filter is a contiguous row matching one im2col patch.
class Conv2D final : public Layer {
 public:
  Conv2D(const Shape& in, std::size_t filters, std::size_t kernel, Rng& rng)
      : in_shape_(in), filters_(filters), kernel_(kernel) {
    require_rank(in, 3, "conv2d");
    if (kernel > in[0] || kernel > in[1]) {
      throw ConfigError("conv2d kernel " + std::to_string(kernel) + " larger than input " +
                        shape_string(in));
    }
    out_h_ = in[0] - kernel + 1;
    out_w_ = in[1] - kernel + 1;
    patch_ = kernel * kernel * in[2];
    weight_ = Tensor({filters, kernel, kernel, in[2]});
    bias_ = Tensor({filters});
    fill_uniform(weight_, glorot_limit(patch_, kernel * kernel * filters), rng);
  }

  LayerSpec spec() const override { return {LayerKind::conv2d, filters_, kernel_, 0.0}; }
  Shape output_shape() const override { return {out_h_, out_w_, filters_}; }

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_batch(x, in_shape_, "conv2d");
    input_ = x;
    const std::size_t batch = x.dim(0);
    const std::size_t positions = out_h_ * out_w_;
    Tensor y({batch, out_h_, out_w_, filters_});
    col_.resize(positions * patch_);
    const double* w = weight_.raw();
    for (std::size_t b = 0; b < batch; ++b) {
      im2col(x.raw() + b * sample_size());
      double* yb = y.raw() + b * positions * filters_;
      for (std::size_t p = 0; p < positions; ++p) {
        const double* cp = col_.data() + p * patch_;
        double* yp = yb + p * filters_;
        for (std::size_t f = 0; f < filters_; ++f) {
          const double* wf = w + f * patch_;
          double acc = 0.0;
          for (std::size_t k = 0; k < patch_; ++k) acc += wf[k] * cp[k];
          yp[f] = acc + bias_[f];
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy, bool need_input_grad) override {
    const std::size_t batch = input_.dim(0);
    const std::size_t positions = out_h_ * out_w_;
    auto dw = weight_.grad();
    auto db = bias_.grad();
    Tensor dx;
    if (need_input_grad) dx = Tensor(input_.shape());
    std::vector<double> dcol(need_input_grad ? patch_ : 0);
    col_.resize(positions * patch_);
    for (std::size_t b = 0; b < batch; ++b) {
      im2col(input_.raw() + b * sample_size());
      const double* dyb = dy.raw() + b * positions * filters_;
      for (std::size_t p = 0; p < positions; ++p) {
        const double* cp = col_.data() + p * patch_;
        const double* dyp = dyb + p * filters_;
        if (need_input_grad) std::fill(dcol.begin(), dcol.end(), 0.0);
        for (std::size_t f = 0; f < filters_; ++f) {
          const double g = dyp[f];
          db[f] += g;
          double* dwf = dw.data() + f * patch_;
          for (std::size_t k = 0; k < patch_; ++k) dwf[k] += g * cp[k];
          if (need_input_grad) {
            const double* wf = weight_.raw() + f * patch_;
            for (std::size_t k = 0; k < patch_; ++k) dcol[k] += g * wf[k];
          }
        }
        if (need_input_grad) scatter_patch(dcol.data(), p, dx.raw() + b * sample_size());
      }
    }
    return dx;
  }

  std::vector<Tensor*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2D>(*this); }

 private:
  std::size_t sample_size() const { return in_shape_[0] * in_shape_[1] * in_shape_[2]; }

  void im2col(const double* x) {
    const std::size_t width = in_shape_[1];
    const std::size_t channels = in_shape_[2];
    const std::size_t run = kernel_ * channels;
    double* out = col_.data();
    for (std::size_t oy = 0; oy < out_h_; ++oy) {
      for (std::size_t ox = 0; ox < out_w_; ++ox) {
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          std::memcpy(out, x + ((oy + ky) * width + ox) * channels, run * sizeof(double));
          out += run;
        }
      }
    }
  }

  void scatter_patch(const double* dcol, std::size_t p, double* dx) const {
    const std::size_t width = in_shape_[1];
    const std::size_t channels = in_shape_[2];
    const std::size_t run = kernel_ * channels;
    const std::size_t oy = p / out_w_;
    const std::size_t ox = p % out_w_;
    for (std::size_t ky = 0; ky < kernel_; ++ky) {
      double* dst = dx + ((oy + ky) * width + ox) * channels;
      const double* src = dcol + ky * run;
      for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
    }
  }

  Shape in_shape_;
  std::size_t filters_;
  std::size_t kernel_;
  std::size_t out_h_ = 0;
  std::size_t out_w_ = 0;
  std::size_t patch_ = 0;
  Tensor weight_;
  Tensor bias_;
  Tensor input_;
  std::vector<double> col_;
};

// Non-overlapping p x p windows; trailing rows/columns that do not fill a
// window are dropped. Ties route the gradient to the first maximum.
class MaxPool final : public Layer {
 public:
  MaxPool(const Shape& in, std::size_t window) : in_shape_(in), window_(window) {
    require_rank(in, 3, "maxpool");
    if (window == 0 || window > in[0] || window > in[1]) {
      throw ConfigError("maxpool window does not fit input " + shape_string(in));
    }
    out_ = {in[0] / window, in[1] / window, in[2]};
  }

  LayerSpec spec() const override { return {LayerKind::maxpool, 0, window_, 0.0}; }
  Shape output_shape() const override { return out_; }

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_batch(x, in_shape_, "maxpool");
    const std::size_t batch = x.dim(0);
    const std::size_t width = in_shape_[1];
    const std::size_t channels = in_shape_[2];
    const std::size_t in_sample = shape_size(in_shape_);
    Tensor y(with_batch(batch, out_));
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = b * in_sample;
      for (std::size_t oy = 0; oy < out_[0]; ++oy) {
        for (std::size_t ox = 0; ox < out_[1]; ++ox) {
          for (std::size_t c = 0; c < channels; ++c, ++o) {
            std::size_t best = base + ((oy * window_) * width + ox * window_) * channels + c;
            for (std::size_t dy = 0; dy < window_; ++dy) {
              for (std::size_t dx = 0; dx < window_; ++dx) {
                const std::size_t idx =
                    base + ((oy * window_ + dy) * width + ox * window_ + dx) * channels + c;
                if (x[idx] > x[best]) best = idx;
              }
            }
            argmax_[o] = best;
            y[o] = x[best];
          }
        }
      }
    }
    in_batch_ = batch;
    return y;
  }

  Tensor backward(const Tensor& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor dx(with_batch(in_batch_, in_shape_));
    for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += dy[o];
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool>(*this); }

 private:
  Shape in_shape_;
  std::size_t window_;
  Shape out_;
  std::vector<std::size_t> argmax_;
  std::size_t in_batch_ = 0;
};

// Inverted dropout: kept units are scaled by 1/(1-rate) during training so
// evaluation is the identity.
class Dropout final : public Layer {
 public:
  Dropout(const Shape& in, double rate) : shape_(in), rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0,1)");
  }

  LayerSpec spec() const override { return {LayerKind::dropout, 0, 0, rate_}; }
  Shape output_shape() const override { return shape_; }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    check_batch(x, shape_, "dropout");
    if (!ctx.training || rate_ == 0.0) {
      mask_.assign(x.size(), 1.0);
      return x;
    }
    if (ctx.dropout_rng == nullptr) throw ConfigError("dropout in training mode needs an rng");
    std::bernoulli_distribution keep(1.0 - rate_);
    const double scale = 1.0 / (1.0 - rate_);
    mask_.resize(x.size());
    Tensor y = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
      mask_[i] = keep(*ctx.dropout_rng) ? scale : 0.0;
      y[i] *= mask_[i];
    }
    return y;
  }

  Tensor backward(const Tensor& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask_[i];
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }

 private:
  Shape shape_;
  double rate_;
  std::vector<double> mask_;
};

class Activation final : public Layer {
 public:
  Activation(const Shape& in, LayerKind kind) : shape_(in), kind_(kind) {}

  LayerSpec spec() const override { return {kind_, 0, 0, 0.0}; }
  Shape output_shape() const override { return shape_; }

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_batch(x, shape_, "activation");
    Tensor y = x;
    switch (kind_) {
      case LayerKind::elu:
        for (double& v : y.data()) v = v > 0.0 ? v : std::expm1(v);
        break;
      case LayerKind::relu:
        for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
        break;
      default:
        for (double& v : y.data()) v = std::tanh(v);
        break;
    }
    input_ = x;
    output_ = y;
    return y;
  }

  Tensor backward(const Tensor& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double x = input_[i];
      const double y = output_[i];
      double d = 0.0;
      switch (kind_) {
        case LayerKind::elu: d = x > 0.0 ? 1.0 : y + 1.0; break;
        case LayerKind::relu: d = x > 0.0 ? 1.0 : 0.0; break;
        default: d = 1.0 - y * y; break;
      }
      dx[i] *= d;
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Activation>(*this); }

 private:
  Shape shape_;
  LayerKind kind_;
  Tensor input_;
  Tensor output_;
};

class Softmax final : public Layer {
 public:
  explicit Softmax(const Shape& in) : shape_(in) { require_rank(in, 1, "softmax"); }

  LayerSpec spec() const override { return {LayerKind::softmax, 0, 0, 0.0}; }
  Shape output_shape() const override { return shape_; }

  Tensor forward(const Tensor& x, const ForwardContext&) override {
    check_batch(x, shape_, "softmax");
    Tensor y = x;
    const std::size_t classes = shape_[0];
    for (std::size_t b = 0; b < x.dim(0); ++b) {
      auto row = y.row(b);
      const double peak = *std::max_element(row.begin(), row.end());
      double total = 0.0;
      for (double& v : row) {
        v = std::exp(v - peak);
        total += v;
      }
      for (std::size_t c = 0; c < classes; ++c) row[c] /= total;
    }
    output_ = y;
    return y;
  }

  // dL/dz_k = p_k (g_k - sum_c p_c g_c)
  Tensor backward(const Tensor& dy, bool need_input_grad) override {
    if (!need_input_grad) return {};
    Tensor dx(output_.shape());
    for (std::size_t b = 0; b < output_.dim(0); ++b) {
      const auto p = output_.row(b);
      const auto g = dy.row(b);
      double dot = 0.0;
      for (std::size_t c = 0; c < p.size(); ++c) dot += p[c] * g[c];
      auto out = dx.row(b);
      for (std::size_t c = 0; c < p.size(); ++c) out[c] = p[c] * (g[c] - dot);
    }
    return dx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Softmax>(*this); }

 private:
  Shape shape_;
  Tensor output_;
};

}  // namespace

LayerSpec LayerSpec::parse(std::string_view raw) {
  const std::string text = trim(raw);
  const auto open = text.find('(');
  const std::string name = trim(text.substr(0, open));
  std::vector<std::string> args;
  if (open != std::string::npos) {
    if (text.back() != ')') throw ConfigError("unterminated layer descriptor '" + text + "'");
    args = split_args(std::string_view(text).substr(open + 1, text.size() - open - 2));
  }
  auto expect_args = [&](std::size_t n) {
    if (args.size() != n) {
      throw ConfigError("layer '" + name + "' takes " + std::to_string(n) + " argument(s): '" +
                        text + "'");
    }
  };
  LayerSpec spec;
  if (name == "dense") {
    expect_args(1);
    spec.kind = LayerKind::dense;
    spec.units = parse_count(args[0], "dense width");
  } else if (name == "conv2d") {
    expect_args(2);
    spec.kind = LayerKind::conv2d;
    spec.units = parse_count(args[0], "filter count");
    spec.kernel = parse_count(args[1], "kernel size");
  } else if (name == "maxpool") {
    expect_args(1);
    spec.kind = LayerKind::maxpool;
    spec.kernel = parse_count(args[0], "pool size");
  } else if (name == "dropout") {
    expect_args(1);
    spec.kind = LayerKind::dropout;
    try {
      std::size_t used = 0;
      spec.rate = std::stod(args[0], &used);
      if (used != args[0].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError("bad dropout rate '" + args[0] + "'");
    }
  } else if (name == "elu" || name == "relu" || name == "tanh" || name == "softmax") {
    expect_args(0);
    spec.kind = name == "elu"    ? LayerKind::elu
                : name == "relu" ? LayerKind::relu
                : name == "tanh" ? LayerKind::tanh
                                 : LayerKind::softmax;
  } else {
    throw ConfigError("unknown layer '" + text + "'");
  }
  return spec;
}

std::string LayerSpec::to_string() const {
  std::ostringstream out;
  switch (kind) {
    case LayerKind::dense: out << "dense(" << units << ")"; break;
    case LayerKind::conv2d: out << "conv2d(" << units << "," << kernel << ")"; break;
    case LayerKind::maxpool: out << "maxpool(" << kernel << ")"; break;
    case LayerKind::dropout: out << "dropout(" << rate << ")"; break;
    case LayerKind::elu: out << "elu"; break;
    case LayerKind::relu: out << "relu"; break;
    case LayerKind::tanh: out << "tanh"; break;
    case LayerKind::softmax: out << "softmax"; break;
  }
  return out.str();
}

std::vector<LayerSpec> parse_layer_list(std::string_view text) {
  std::vector<LayerSpec> specs;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto semi = text.find(';', start);
    const auto end = semi == std::string_view::npos ? text.size() : semi;
    const std::string item = trim(text.substr(start, end - start));
    if (!item.empty()) specs.push_back(LayerSpec::parse(item));
    if (semi == std::string_view::npos) break;
    start = semi + 1;
  }
  if (specs.empty()) throw ConfigError("empty layer list");
  return specs;
}

std::string layer_list_string(const std::vector<LayerSpec>& specs) {
  std::string out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (i) out += ";";
    out += specs[i].to_string();
  }
  return out;
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, const Shape& in, Rng& rng) {
  switch (spec.kind) {
    case LayerKind::dense: return std::make_unique<Dense>(in, spec.units, rng);
    case LayerKind::conv2d: return std::make_unique<Conv2D>(in, spec.units, spec.kernel, rng);
    case LayerKind::maxpool: return std::make_unique<MaxPool>(in, spec.kernel);
    case LayerKind::dropout: return std::make_unique<Dropout>(in, spec.rate);
    case LayerKind::softmax: return std::make_unique<Softmax>(in);
    default: return std::make_unique<Activation>(in, spec.kind);
  }
}

}  // namespace hasnets::nn
