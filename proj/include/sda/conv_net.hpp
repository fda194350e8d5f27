#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sda/error.hpp"
#include "sda/rng.hpp"

namespace sda::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const Mat<T>>;

struct ParamSection {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Flat parameter blob with a named-section index.
class ParamLayout {
 public:
  std::size_t add(const std::string& name, std::size_t size) {
    sections_.push_back({name, total_, size});
    total_ += size;
    return sections_.back().offset;
  }
  std::size_t total() const noexcept { return total_; }
  const std::vector<ParamSection>& sections() const noexcept { return sections_; }

 private:
  std::vector<ParamSection> sections_;
  std::size_t total_ = 0;
};

// -----------------------------------------------------------------------------
// Elementwise pieces

template <typename T>
inline T sigmoid(T v) {
  return T(1) / (T(1) + std::exp(-v));
}

template <typename T>
inline void silu(std::span<const T> in, std::span<T> out) {
  for (std::size_t k = 0; k < in.size(); ++k) out[k] = in[k] * sigmoid(in[k]);
}

// dx = dy * d silu(x)/dx
template <typename T>
inline void silu_backward(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  for (std::size_t k = 0; k < x.size(); ++k) {
    const T s = sigmoid(x[k]);
    dx[k] = dy[k] * (s + x[k] * s * (T(1) - s));
  }
}

// -----------------------------------------------------------------------------
// 3x3 same-padded convolution via im2col

template <typename T>
inline void im2col(const T* in, std::size_t cin, std::size_t h, std::size_t w, T* cols) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        T* row = cols + ((c * 9) + ky * 3 + kx) * hw;
        const T* plane = in + c * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          T* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* src = plane + sy * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + kx - 1;
            dst[x] = (sx < 0 || sx >= static_cast<long>(w)) ? T(0) : src[sx];
          }
        }
      }
}

template <typename T>
inline void col2im_add(const T* cols, std::size_t cin, std::size_t h, std::size_t w, T* out) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < cin; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const T* row = cols + ((c * 9) + ky * 3 + kx) * hw;
        T* plane = out + c * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const T* src = row + y * w;
          T* dst = plane + sy * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + kx - 1;
            if (sx >= 0 && sx < static_cast<long>(w)) dst[sx] += src[x];
          }
        }
      }
}

struct ConvSpec {
  std::size_t cin = 0, cout = 0;
  std::size_t w_off = 0, b_off = 0;
};

template <typename T>
inline void conv_forward(const ConvSpec& cs, const T* params, const T* in, std::size_t h, std::size_t w, T* out,
                         std::vector<T>& cols) {
  const std::size_t hw = h * w;
  cols.resize(cs.cin * 9 * hw);
  im2col(in, cs.cin, h, w, cols.data());
  ConstMapMat<T> wm(params + cs.w_off, cs.cout, cs.cin * 9);
  ConstMapMat<T> cm(cols.data(), cs.cin * 9, hw);
  MapMat<T> om(out, cs.cout, hw);
  om.noalias() = wm * cm;
  for (std::size_t o = 0; o < cs.cout; ++o) om.row(o).array() += params[cs.b_off + o];
}

// dIn += conv^T dOut; parameter gradients accumulate into grads when non-null.
template <typename T>
inline void conv_backward(const ConvSpec& cs, const T* params, const T* in, std::size_t h, std::size_t w,
                          const T* dout, T* din, T* grads, std::vector<T>& cols, std::vector<T>& dcols) {
  const std::size_t hw = h * w;
  ConstMapMat<T> dm(dout, cs.cout, hw);
  if (grads) {
    cols.resize(cs.cin * 9 * hw);
    im2col(in, cs.cin, h, w, cols.data());
    ConstMapMat<T> cm(cols.data(), cs.cin * 9, hw);
    MapMat<T> gw(grads + cs.w_off, cs.cout, cs.cin * 9);
    gw.noalias() += dm * cm.transpose();
    for (std::size_t o = 0; o < cs.cout; ++o) grads[cs.b_off + o] += dm.row(o).sum();
  }
  if (din) {
    ConstMapMat<T> wm(params + cs.w_off, cs.cout, cs.cin * 9);
    dcols.resize(cs.cin * 9 * hw);
    MapMat<T> dc(dcols.data(), cs.cin * 9, hw);
    dc.noalias() = wm.transpose() * dm;
    col2im_add(dcols.data(), cs.cin, h, w, din);
  }
}

template <typename T>
inline void avg_pool2(const T* in, std::size_t c, std::size_t h, std::size_t w, T* out) {
  const std::size_t h2 = h / 2, w2 = w / 2;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t x = 0; x < w2; ++x) {
        const T* p = in + ch * h * w + 2 * y * w + 2 * x;
        out[ch * h2 * w2 + y * w2 + x] = T(0.25) * (p[0] + p[1] + p[w] + p[w + 1]);
      }
}

template <typename T>
inline void avg_pool2_backward(const T* dout, std::size_t c, std::size_t h, std::size_t w, T* din) {
  const std::size_t h2 = h / 2, w2 = w / 2;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t x = 0; x < w2; ++x) {
        const T g = T(0.25) * dout[ch * h2 * w2 + y * w2 + x];
        T* p = din + ch * h * w + 2 * y * w + 2 * x;
        p[0] += g;
        p[1] += g;
        p[w] += g;
        p[w + 1] += g;
      }
}

// nearest-neighbour x2; (h, w) are the low-resolution dims
template <typename T>
inline void upsample2(const T* in, std::size_t c, std::size_t h, std::size_t w, T* out) {
  const std::size_t W = 2 * w;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < W; ++x) out[ch * 4 * h * w + y * W + x] = in[ch * h * w + (y / 2) * w + x / 2];
}

template <typename T>
inline void upsample2_backward(const T* dout, std::size_t c, std::size_t h, std::size_t w, T* din) {
  const std::size_t W = 2 * w;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < W; ++x) din[ch * h * w + (y / 2) * w + x / 2] += dout[ch * 4 * h * w + y * W + x];
}

// -----------------------------------------------------------------------------

struct Architecture {
  std::uint32_t channels = 1;    // data channels in/out
  std::uint32_t base_width = 16; // level-0 feature maps; levels 1 and 2 use twice this
  std::uint32_t embed_dim = 32;
  std::uint32_t fourier = 4;     // sin/cos pairs of the noise embedding

  bool operator==(const Architecture&) const = default;
};

/// Three-level convolutional encoder-decoder with skip connections and FiLM noise
/// conditioning. Computes F(x, c_noise); preconditioning lives in the denoiser wrapper.
///
///   h0 = conv_in(x)                   e0 = res_a(h0)            [w,  H]
///   e1 = res_b(conv_d1(pool(e0)))                              [2w, H/2]
///   m  = res_c(conv_d2(pool(e1)))                              [2w, H/4]
///   g1 = res_d(conv_u1([up(m), e1]))                           [2w, H/2]
///   g0 = res_e(conv_u0([up(g1), e0]))                          [w,  H]
///   F  = conv_out(silu(g0))
///
/// res(x) = x + conv2(silu(film(conv1(silu(x))))), film(h) = h (1 + gamma) + beta with
/// (gamma, beta) linear in the shared embedding silu(W fourier(c_noise) + b).
template <typename T>
class ConvNet {
 public:
  static constexpr int kBlocks = 5;

  ConvNet() = default;

  explicit ConvNet(Architecture arch) : arch_(arch) {
    if (arch.channels == 0 || arch.base_width == 0 || arch.embed_dim == 0)
      throw ConfigError("conv net: architecture sizes must be positive");
    const std::size_t c0 = arch.base_width, c1 = 2 * arch.base_width, c2 = 2 * arch.base_width;
    const std::size_t feat = 1 + 2 * arch.fourier;
    emb_w_ = layout_.add("embed.weight", arch.embed_dim * feat);
    emb_b_ = layout_.add("embed.bias", arch.embed_dim);
    conv_in_ = conv("conv_in", arch.channels, c0);
    block_width_ = {c0, c1, c2, c1, c0};
    const char* names[kBlocks] = {"res_a", "res_b", "res_c", "res_d", "res_e"};
    for (int b = 0; b < kBlocks; ++b) {
      const std::size_t c = block_width_[b];
      const std::string n = names[b];
      res_[b].conv1 = conv(n + ".conv1", c, c);
      res_[b].conv2 = conv(n + ".conv2", c, c);
      res_[b].film_w = layout_.add(n + ".film.weight", 2 * c * arch.embed_dim);
      res_[b].film_b = layout_.add(n + ".film.bias", 2 * c);
    }
    conv_d1_ = conv("conv_d1", c0, c1);
    conv_d2_ = conv("conv_d2", c1, c2);
    conv_u1_ = conv("conv_u1", c2 + c1, c1);
    conv_u0_ = conv("conv_u0", c1 + c0, c0);
    conv_out_ = conv("conv_out", c0, arch.channels);
  }

  const Architecture& architecture() const noexcept { return arch_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t parameter_count() const noexcept { return layout_.total(); }

  /// Random initial parameters; residual second convs, FiLM and the output conv start at zero.
  std::vector<T> init_params(Rng& rng) const {
    std::vector<T> p(layout_.total(), T(0));
    auto fill = [&](std::size_t off, std::size_t n, double scale) {
      for (std::size_t k = 0; k < n; ++k) p[off + k] = static_cast<T>(scale * rng.normal());
    };
    auto init_conv = [&](const ConvSpec& cs) { fill(cs.w_off, cs.cout * cs.cin * 9, std::sqrt(2.0 / (cs.cin * 9.0))); };
    fill(emb_w_, arch_.embed_dim * (1 + 2 * arch_.fourier), 1.0 / std::sqrt(1.0 + 2.0 * arch_.fourier));
    init_conv(conv_in_);
    for (const auto& r : res_) init_conv(r.conv1);
    init_conv(conv_d1_);
    init_conv(conv_d2_);
    init_conv(conv_u1_);
    init_conv(conv_u0_);
    return p;
  }

  struct Trace {
    std::size_t h = 0, w = 0;
    std::vector<T> x, feat, emb_pre, emb;
    std::array<std::vector<T>, kBlocks> film;  // (gamma, beta) per block
    std::vector<T> h0, e0, p0, d1, e1, p1, d2, m, um, cat1, u1, g1, ug1, cat0, u0, g0, a_out, out;
    struct Res {
      std::vector<T> in, h1, f, a1, a2;
    };
    std::array<Res, kBlocks> res;
    std::vector<T> cols, dcols;
  };

  /// F(x; c_noise) for one C x H x W sample.
  void forward(std::span<const T> params, std::span<const T> x, std::size_t h, std::size_t w, T c_noise,
               Trace& tr) const {
    if (h % 4 != 0 || w % 4 != 0) throw ConfigError("conv net needs grid dims divisible by 4");
    if (x.size() != arch_.channels * h * w) throw ConfigError("conv net input size mismatch");
    const T* P = params.data();
    tr.h = h;
    tr.w = w;
    tr.x.assign(x.begin(), x.end());
    embed(P, c_noise, tr);
    const std::size_t c0 = block_width_[0], c1 = block_width_[1], c2 = block_width_[2];
    const std::size_t n0 = h * w, n1 = n0 / 4, n2 = n0 / 16;

    tr.h0.resize(c0 * n0);
    conv_forward(conv_in_, P, tr.x.data(), h, w, tr.h0.data(), tr.cols);
    res_forward(0, P, tr.h0, h, w, tr, tr.e0);

    tr.p0.resize(c0 * n1);
    avg_pool2(tr.e0.data(), c0, h, w, tr.p0.data());
    tr.d1.resize(c1 * n1);
    conv_forward(conv_d1_, P, tr.p0.data(), h / 2, w / 2, tr.d1.data(), tr.cols);
    res_forward(1, P, tr.d1, h / 2, w / 2, tr, tr.e1);

    tr.p1.resize(c1 * n2);
    avg_pool2(tr.e1.data(), c1, h / 2, w / 2, tr.p1.data());
    tr.d2.resize(c2 * n2);
    conv_forward(conv_d2_, P, tr.p1.data(), h / 4, w / 4, tr.d2.data(), tr.cols);
    res_forward(2, P, tr.d2, h / 4, w / 4, tr, tr.m);

    tr.cat1.resize((c2 + c1) * n1);
    upsample2(tr.m.data(), c2, h / 4, w / 4, tr.cat1.data());
    std::copy(tr.e1.begin(), tr.e1.end(), tr.cat1.begin() + c2 * n1);
    tr.u1.resize(c1 * n1);
    conv_forward(conv_u1_, P, tr.cat1.data(), h / 2, w / 2, tr.u1.data(), tr.cols);
    res_forward(3, P, tr.u1, h / 2, w / 2, tr, tr.g1);

    tr.cat0.resize((c1 + c0) * n0);
    upsample2(tr.g1.data(), c1, h / 2, w / 2, tr.cat0.data());
    std::copy(tr.e0.begin(), tr.e0.end(), tr.cat0.begin() + c1 * n0);
    tr.u0.resize(c0 * n0);
    conv_forward(conv_u0_, P, tr.cat0.data(), h, w, tr.u0.data(), tr.cols);
    res_forward(4, P, tr.u0, h, w, tr, tr.g0);

    tr.a_out.resize(c0 * n0);
    silu<T>(tr.g0, tr.a_out);
    tr.out.resize(arch_.channels * n0);
    conv_forward(conv_out_, P, tr.a_out.data(), h, w, tr.out.data(), tr.cols);
  }

  /// Reverse pass for dOut. Accumulates parameter gradients into `grads` (may be empty) and
  /// writes dF/dx^T dOut into `dx` (may be empty).
  void backward(std::span<const T> params, Trace& tr, std::span<const T> dout, std::span<T> grads,
                std::span<T> dx) const {
    const T* P = params.data();
    T* G = grads.empty() ? nullptr : grads.data();
    const std::size_t h = tr.h, w = tr.w;
    const std::size_t c0 = block_width_[0], c1 = block_width_[1], c2 = block_width_[2];
    const std::size_t n0 = h * w, n1 = n0 / 4, n2 = n0 / 16;
    std::array<std::vector<T>, kBlocks> dfilm;
    for (int b = 0; b < kBlocks; ++b) dfilm[b].assign(2 * block_width_[b], T(0));

    std::vector<T> d_a_out(c0 * n0, T(0));
    conv_backward(conv_out_, P, tr.a_out.data(), h, w, dout.data(), d_a_out.data(), G, tr.cols, tr.dcols);
    std::vector<T> d_g0(c0 * n0);
    silu_backward<T>(tr.g0, d_a_out, d_g0);

    std::vector<T> d_u0 = res_backward(4, P, d_g0, h, w, tr, G, dfilm[4]);
    std::vector<T> d_cat0((c1 + c0) * n0, T(0));
    conv_backward(conv_u0_, P, tr.cat0.data(), h, w, d_u0.data(), d_cat0.data(), G, tr.cols, tr.dcols);
    std::vector<T> d_g1(c1 * n1, T(0));
    upsample2_backward(d_cat0.data(), c1, h / 2, w / 2, d_g1.data());
    std::vector<T> d_e0(d_cat0.begin() + c1 * n0, d_cat0.end());

    std::vector<T> d_u1 = res_backward(3, P, d_g1, h / 2, w / 2, tr, G, dfilm[3]);
    std::vector<T> d_cat1((c2 + c1) * n1, T(0));
    conv_backward(conv_u1_, P, tr.cat1.data(), h / 2, w / 2, d_u1.data(), d_cat1.data(), G, tr.cols, tr.dcols);
    std::vector<T> d_m(c2 * n2, T(0));
    upsample2_backward(d_cat1.data(), c2, h / 4, w / 4, d_m.data());
    std::vector<T> d_e1(d_cat1.begin() + c2 * n1, d_cat1.end());

    std::vector<T> d_d2 = res_backward(2, P, d_m, h / 4, w / 4, tr, G, dfilm[2]);
    std::vector<T> d_p1(c1 * n2, T(0));
    conv_backward(conv_d2_, P, tr.p1.data(), h / 4, w / 4, d_d2.data(), d_p1.data(), G, tr.cols, tr.dcols);
    avg_pool2_backward(d_p1.data(), c1, h / 2, w / 2, d_e1.data());

    std::vector<T> d_d1 = res_backward(1, P, d_e1, h / 2, w / 2, tr, G, dfilm[1]);
    std::vector<T> d_p0(c0 * n1, T(0));
    conv_backward(conv_d1_, P, tr.p0.data(), h / 2, w / 2, d_d1.data(), d_p0.data(), G, tr.cols, tr.dcols);
    avg_pool2_backward(d_p0.data(), c0, h, w, d_e0.data());

    std::vector<T> d_h0 = res_backward(0, P, d_e0, h, w, tr, G, dfilm[0]);
    std::vector<T> d_x;
    if (!dx.empty()) d_x.assign(arch_.channels * n0, T(0));
    conv_backward(conv_in_, P, tr.x.data(), h, w, d_h0.data(), dx.empty() ? nullptr : d_x.data(), G, tr.cols,
                  tr.dcols);
    if (!dx.empty()) std::copy(d_x.begin(), d_x.end(), dx.begin());

    if (G) embed_backward(P, tr, dfilm, G);
  }

 private:
  struct ResSpec {
    ConvSpec conv1, conv2;
    std::size_t film_w = 0, film_b = 0;
  };

  ConvSpec conv(const std::string& name, std::size_t cin, std::size_t cout) {
    ConvSpec cs{cin, cout, 0, 0};
    cs.w_off = layout_.add(name + ".weight", cout * cin * 9);
    cs.b_off = layout_.add(name + ".bias", cout);
    return cs;
  }

  void embed(const T* P, T c_noise, Trace& tr) const {
    const std::size_t nf = 1 + 2 * arch_.fourier;
    tr.feat.resize(nf);
    tr.feat[0] = c_noise;
    for (std::size_t k = 0; k < arch_.fourier; ++k) {
      const T freq = static_cast<T>(std::ldexp(1.0, static_cast<int>(k)));
      tr.feat[1 + 2 * k] = std::sin(freq * c_noise);
      tr.feat[2 + 2 * k] = std::cos(freq * c_noise);
    }
    tr.emb_pre.resize(arch_.embed_dim);
    tr.emb.resize(arch_.embed_dim);
    for (std::size_t e = 0; e < arch_.embed_dim; ++e) {
      T acc = P[emb_b_ + e];
      for (std::size_t f = 0; f < nf; ++f) acc += P[emb_w_ + e * nf + f] * tr.feat[f];
      tr.emb_pre[e] = acc;
    }
    silu<T>(tr.emb_pre, tr.emb);
    for (int b = 0; b < kBlocks; ++b) {
      const std::size_t n = 2 * block_width_[b];
      tr.film[b].resize(n);
      for (std::size_t o = 0; o < n; ++o) {
        T acc = P[res_[b].film_b + o];
        for (std::size_t e = 0; e < arch_.embed_dim; ++e) acc += P[res_[b].film_w + o * arch_.embed_dim + e] * tr.emb[e];
        tr.film[b][o] = acc;
      }
    }
  }

  void embed_backward(const T* P, const Trace& tr, const std::array<std::vector<T>, kBlocks>& dfilm, T* G) const {
    const std::size_t nf = 1 + 2 * arch_.fourier;
    std::vector<T> demb(arch_.embed_dim, T(0));
    for (int b = 0; b < kBlocks; ++b) {
      const std::size_t n = 2 * block_width_[b];
      for (std::size_t o = 0; o < n; ++o) {
        const T g = dfilm[b][o];
        G[res_[b].film_b + o] += g;
        for (std::size_t e = 0; e < arch_.embed_dim; ++e) {
          G[res_[b].film_w + o * arch_.embed_dim + e] += g * tr.emb[e];
          demb[e] += g * P[res_[b].film_w + o * arch_.embed_dim + e];
        }
      }
    }
    std::vector<T> dpre(arch_.embed_dim);
    silu_backward<T>(tr.emb_pre, demb, dpre);
    for (std::size_t e = 0; e < arch_.embed_dim; ++e) {
      G[emb_b_ + e] += dpre[e];
      for (std::size_t f = 0; f < nf; ++f) G[emb_w_ + e * nf + f] += dpre[e] * tr.feat[f];
    }
  }

  void res_forward(int b, const T* P, const std::vector<T>& in, std::size_t h, std::size_t w, Trace& tr,
                   std::vector<T>& out) const {
    const std::size_t c = block_width_[b], n = h * w;
    auto& r = tr.res[b];
    r.in = in;
    r.a1.resize(c * n);
    silu<T>(r.in, r.a1);
    r.h1.resize(c * n);
    conv_forward(res_[b].conv1, P, r.a1.data(), h, w, r.h1.data(), tr.cols);
    r.f.resize(c * n);
    const auto& fl = tr.film[b];
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T scale = T(1) + fl[ch], shift = fl[c + ch];
      for (std::size_t k = 0; k < n; ++k) r.f[ch * n + k] = r.h1[ch * n + k] * scale + shift;
    }
    r.a2.resize(c * n);
    silu<T>(r.f, r.a2);
    out.resize(c * n);
    conv_forward(res_[b].conv2, P, r.a2.data(), h, w, out.data(), tr.cols);
    for (std::size_t k = 0; k < c * n; ++k) out[k] += r.in[k];
  }

  std::vector<T> res_backward(int b, const T* P, const std::vector<T>& dy, std::size_t h, std::size_t w, Trace& tr,
                              T* G, std::vector<T>& dfilm) const {
    const std::size_t c = block_width_[b], n = h * w;
    auto& r = tr.res[b];
    std::vector<T> da2(c * n, T(0));
    conv_backward(res_[b].conv2, P, r.a2.data(), h, w, dy.data(), da2.data(), G, tr.cols, tr.dcols);
    std::vector<T> df(c * n);
    silu_backward<T>(r.f, da2, df);
    std::vector<T> dh1(c * n);
    const auto& fl = tr.film[b];
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T scale = T(1) + fl[ch];
      T dg = T(0), db = T(0);
      for (std::size_t k = 0; k < n; ++k) {
        const T g = df[ch * n + k];
        dh1[ch * n + k] = g * scale;
        dg += g * r.h1[ch * n + k];
        db += g;
      }
      dfilm[ch] += dg;
      dfilm[c + ch] += db;
    }
    std::vector<T> da1(c * n, T(0));
    conv_backward(res_[b].conv1, P, r.a1.data(), h, w, dh1.data(), da1.data(), G, tr.cols, tr.dcols);
    std::vector<T> dx(c * n);
    silu_backward<T>(r.in, da1, dx);
    for (std::size_t k = 0; k < c * n; ++k) dx[k] += dy[k];
    return dx;
  }

  Architecture arch_;
  ParamLayout layout_;
  std::size_t emb_w_ = 0, emb_b_ = 0;
  ConvSpec conv_in_, conv_d1_, conv_d2_, conv_u1_, conv_u0_, conv_out_;
  std::array<ResSpec, kBlocks> res_;
  std::array<std::size_t, kBlocks> block_width_{};
};

// -----------------------------------------------------------------------------
// EDM preconditioning with sigma_data = 1.

struct Preconditioning {
  double c_skip, c_out, c_in, c_noise;

  static Preconditioning at(double sigma) {
    const double s2 = sigma * sigma;
    return {1.0 / (s2 + 1.0), sigma / std::sqrt(s2 + 1.0), 1.0 / std::sqrt(s2 + 1.0), std::log(sigma) / 4.0};
  }
};

}  // namespace sda::nn
