#include "reference.hpp"

#include <cmath>
#include <stdexcept>

namespace binec::ref {

Array from_tensor(const Tensor& t) {
  Array a(t.shape());
  const auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) a.v[i] = d[i];
  return a;
}

Tensor to_tensor(const Array& a) {
  std::vector<float> f(a.v.begin(), a.v.end());
  return Tensor::from(a.shape, std::move(f));
}

Array conv2d(const Array& x, const Array& w, const Array& b, int stride, int pad) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Array out({n, co, oh, ow});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b.v[o];
          for (int c = 0; c < ci; ++c)
            for (int i = 0; i < kh; ++i)
              for (int j = 0; j < kw; ++j) {
                const int iy = y * stride - pad + i, ix = xx * stride - pad + j;
                if (iy < 0 || ix < 0 || iy >= h || ix >= wd) continue;
                acc += w.at4(o, c, i, j) * x.at4(s, c, iy, ix);
              }
          out.at4(s, o, y, xx) = acc;
        }
  return out;
}

Array depth_to_space(const Array& x, int b) {
  const int n = x.dim(0), c = x.dim(1) / (b * b), h = x.dim(2), w = x.dim(3);
  Array out({n, c, h * b, w * b});
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h * b; ++y)
        for (int xx = 0; xx < w * b; ++xx)
          out.at4(s, ch, y, xx) = x.at4(s, ch * b * b + (y % b) * b + xx % b, y / b, xx / b);
  return out;
}

Array space_to_depth(const Array& x, int b) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2) / b, w = x.dim(3) / b;
  Array out({n, c * b * b, h, w});
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h * b; ++y)
        for (int xx = 0; xx < w * b; ++xx)
          out.at4(s, ch * b * b + (y % b) * b + xx % b, y / b, xx / b) = x.at4(s, ch, y, xx);
  return out;
}

Array crop(const Array& x, int top, int left, int h, int w) {
  Array out({x.dim(0), x.dim(1), h, w});
  for (int s = 0; s < x.dim(0); ++s)
    for (int c = 0; c < x.dim(1); ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) out.at4(s, c, y, xx) = x.at4(s, c, top + y, left + xx);
  return out;
}

Array blocks_to_grid(const Array& blocks, int g) {
  const int n = blocks.dim(0) / (g * g), c = blocks.dim(1), h = blocks.dim(2), w = blocks.dim(3);
  Array out({n, c, g * h, g * w});
  for (int s = 0; s < n; ++s)
    for (int r = 0; r < g; ++r)
      for (int q = 0; q < g; ++q)
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              out.at4(s, ch, r * h + y, q * w + xx) = blocks.at4(s * g * g + r * g + q, ch, y, xx);
  return out;
}

Array grid_to_blocks(const Array& image, int g) {
  const int n = image.dim(0), c = image.dim(1), h = image.dim(2) / g, w = image.dim(3) / g;
  Array out({n * g * g, c, h, w});
  for (int s = 0; s < n; ++s)
    for (int r = 0; r < g; ++r)
      for (int q = 0; q < g; ++q)
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              out.at4(s * g * g + r * g + q, ch, y, xx) = image.at4(s, ch, r * h + y, q * w + xx);
  return out;
}

Array gather(const Array& x, const std::vector<int>& idx) {
  Shape s = x.shape;
  s[0] = static_cast<int>(idx.size());
  Array out(s);
  const std::size_t stride = x.v.size() / x.shape[0];
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::copy_n(x.v.begin() + idx[k] * stride, stride, out.v.begin() + k * stride);
  }
  return out;
}

Array map(const Array& x, double (*fn)(double)) {
  Array out = x;
  for (double& v : out.v) v = fn(v);
  return out;
}

namespace {
template <typename Op>
Array zip(const Array& a, const Array& b, Op op) {
  if (a.shape != b.shape) throw std::invalid_argument("ref: shape mismatch");
  Array out(a.shape);
  for (std::size_t i = 0; i < a.v.size(); ++i) out.v[i] = op(a.v[i], b.v[i]);
  return out;
}
double dtanh(double x) { return std::tanh(x); }
}  // namespace

Array add(const Array& a, const Array& b) { return zip(a, b, [](double x, double y) { return x + y; }); }
Array sub(const Array& a, const Array& b) { return zip(a, b, [](double x, double y) { return x - y; }); }
Array mul(const Array& a, const Array& b) { return zip(a, b, [](double x, double y) { return x * y; }); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double weighted_sum(const Array& a, const Array& w) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.v.size(); ++i) acc += a.v[i] * w.v[i];
  return acc;
}

Weights weights_of(const CodecModel& model, const std::vector<std::vector<double>>& values) {
  Weights w;
  const auto& entries = model.parameters().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Array a(entries[k].second.shape());
    a.v = values[k];
    w.emplace(entries[k].first, std::move(a));
  }
  return w;
}

Weights weights_of(const CodecModel& model) {
  std::vector<std::vector<double>> values;
  for (const auto& [name, t] : model.parameters().entries()) values.emplace_back(t.data().begin(), t.data().end());
  return weights_of(model, values);
}

namespace {

struct Net {
  const Weights& w;

  Array conv(const std::string& name, const Array& x, int stride, int pad) const {
    return conv2d(x, w.at(name + ".weight"), w.at(name + ".bias"), stride, pad);
  }
  Array first_conv(const std::string& name, const Array& ctx) const {
    if (ctx.dim(2) == 6) return conv(name, crop(ctx, 1, 1, 4, 4), 1, 0);
    return conv(name, ctx, 1, 1);
  }
  Array encoder(const std::string& p, Array x) const {
    for (int j = 0; j < 4; ++j) x = map(conv(p + ".conv" + std::to_string(j), x, 2, 1), dtanh);
    return x;
  }
  Array decoder(const std::string& p, const Array& ctx) const {
    Array h = depth_to_space(map(first_conv(p + ".conv0", ctx), dtanh), 2);
    h = depth_to_space(map(conv(p + ".conv1", h, 1, 1), dtanh), 2);
    h = depth_to_space(map(conv(p + ".conv2", h, 1, 1), dtanh), 2);
    return map(depth_to_space(conv(p + ".conv3", h, 1, 1), 2), dtanh);
  }
  Array gru(const std::string& p, const Array& x, const Array& h, int stride) const {
    const Array z = map(add(conv(p + ".x_update", x, stride, 1), conv(p + ".h_update", h, 1, 1)), sigmoid);
    const Array r = map(add(conv(p + ".x_reset", x, stride, 1), conv(p + ".h_reset", h, 1, 1)), sigmoid);
    const Array n = map(add(conv(p + ".x_candidate", x, stride, 1), conv(p + ".h_candidate", mul(r, h), 1, 1)), dtanh);
    return add(n, mul(z, sub(h, n)));
  }
};

struct OsrState {
  std::vector<Array> enc, dec;
};

Array zeros_state(int n, const Weights& w, const std::string& gru, int extent) {
  const int hidden = w.at(gru + ".h_update.weight").dim(0);
  return Array({n, hidden, extent, extent});
}

Array osr_encode(const Net& net, const Array& x, OsrState& s) {
  if (s.enc.empty()) {
    s.enc = {zeros_state(x.dim(0), net.w, "enc.gru1", 8), zeros_state(x.dim(0), net.w, "enc.gru2", 4)};
  }
  const Array h0 = map(net.conv("enc.head", x, 2, 1), dtanh);
  s.enc[0] = net.gru("enc.gru1", h0, s.enc[0], 2);
  s.enc[1] = net.gru("enc.gru2", s.enc[0], s.enc[1], 2);
  return map(net.conv("enc.code", s.enc[1], 2, 1), dtanh);
}

Array osr_decode(const Net& net, const Array& ctx, OsrState& s) {
  if (s.dec.empty()) {
    s.dec = {zeros_state(ctx.dim(0), net.w, "dec.gru1", 2), zeros_state(ctx.dim(0), net.w, "dec.gru2", 4)};
  }
  const Array h = map(net.first_conv("dec.head", ctx), dtanh);
  s.dec[0] = net.gru("dec.gru1", h, s.dec[0], 1);
  s.dec[1] = net.gru("dec.gru2", depth_to_space(s.dec[0], 2), s.dec[1], 1);
  Array u = map(net.conv("dec.conv3", depth_to_space(s.dec[1], 2), 1, 1), dtanh);
  return map(depth_to_space(net.conv("dec.conv4", depth_to_space(u, 2), 1, 1), 2), dtanh);
}

}  // namespace

std::vector<Array> residuals(const CodecModel& model, const Weights& w, const Array& batch) {
  if (model.variant() == Variant::kSINet) throw std::invalid_argument("ref: SINet unsupported");
  const Net net{w};
  const bool osr = model.recurrent();
  OsrState state;
  auto encode = [&](const Array& x, int i) {
    return osr ? osr_encode(net, x, state) : net.encoder("stage" + std::to_string(i - 1) + ".enc", x);
  };
  auto decode = [&](const Array& ctx, int i) {
    Array c = ctx;
    if (model.masked()) {
      for (int n = 0; n < c.dim(0); ++n)
        for (int ch = 0; ch < c.dim(1); ++ch)
          for (int y = 2; y < 4; ++y)
            for (int x = 2; x < 4; ++x) c.at4(n, ch, y, x) = 0.0;
    }
    return osr ? osr_decode(net, c, state) : net.decoder("stage" + std::to_string(i - 1) + ".dec", c);
  };

  std::vector<Array> r;
  Array r0;
  if (model.binet()) {
    const Array blocks = grid_to_blocks(batch, 3);
    std::vector<int> centres;
    for (int b = 0; b < batch.dim(0); ++b) centres.push_back(b * 9 + 4);
    r0 = gather(blocks, centres);
    const Array codes = encode(blocks, 1);
    for (auto& s : state.enc) s = gather(s, centres);
    r.push_back(sub(r0, decode(blocks_to_grid(codes, 3), 1)));
  } else {
    r0 = batch;
    r.push_back(sub(r0, decode(encode(r0, 1), 1)));
  }
  for (int i = 2; i <= model.iterations(); ++i) {
    const Array out = decode(encode(r.back(), i), i);
    r.push_back(osr ? sub(r0, out) : sub(r.back(), out));
  }
  return r;
}


double direct_psnr(const Image8& a, const Image8& b) {
  long double mse = 0.0L;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const long double d = static_cast<long double>(a.data[i]) - b.data[i];
    mse += d * d;
  }
  mse /= a.data.size();
  return 10.0 * std::log10(255.0 * 255.0 / static_cast<double>(mse));
}

double naive_ssim(const Image8& a, const Image8& b) {
  double g[11][11], total = 0.0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) total += g[y][x] = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / 4.5);
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double channels = 0.0;
  for (int c = 0; c < 3; ++c) {
    double acc = 0.0;
    int windows = 0;
    for (int y0 = 0; y0 + 11 <= a.height; ++y0) {
      for (int x0 = 0; x0 + 11 <= a.width; ++x0) {
        double ma = 0, mb = 0;
        for (int y = 0; y < 11; ++y)
          for (int x = 0; x < 11; ++x) {
            const double w = g[y][x] / total;
            ma += w * a.at(c, y0 + y, x0 + x);
            mb += w * b.at(c, y0 + y, x0 + x);
          }
        double va = 0, vb = 0, cov = 0;
        for (int y = 0; y < 11; ++y)
          for (int x = 0; x < 11; ++x) {
            const double w = g[y][x] / total;
            const double da = a.at(c, y0 + y, x0 + x) - ma, db = b.at(c, y0 + y, x0 + x) - mb;
            va += w * da * da;
            vb += w * db * db;
            cov += w * da * db;
          }
        acc += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++windows;
      }
    }
    channels += acc / windows;
  }
  return channels / 3.0;
}

}  // namespace binec::ref
