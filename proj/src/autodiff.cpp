#include "slicegen/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace slicegen {

// ---- Var -----------------------------------------------------------------

template <typename Real>
Var<Real>::Var() : node_(std::make_shared<Node>()) {}

template <typename Real>
Var<Real>::Var(Tensor<Real> value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename Real>
Tensor<Real> Var<Real>::grad() const {
  if (node_->grad.empty()) return Tensor<Real>(shape(), Real{0});
  return Tensor<Real>(shape(), node_->grad);
}

template <typename Real>
void Var<Real>::set_value(Tensor<Real> value) {
  if (!node_->is_leaf) throw ContractError("set_value is only allowed on leaf variables");
  if (value.shape() != shape())
    throw DimensionError("set_value shape " + shape_string(value.shape()) + " != " +
                         shape_string(shape()));
  node_->value = std::move(value);
}

template <typename Real>
Var<Real> Var<Real>::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

// ---- Tape ----------------------------------------------------------------

template <typename Real>
Tape<Real>*& Tape<Real>::active_slot() noexcept {
  thread_local Tape* slot = nullptr;
  return slot;
}

template <typename Real>
Tape<Real>* Tape<Real>::active() noexcept {
  return active_slot();
}

template <typename Real>
void Tape<Real>::record(std::vector<NodePtr> inputs, NodePtr output, BackwardRule rule) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(rule)});
}

template <typename Real>
void Tape<Real>::backward(const Var<Real>& loss) {
  if (loss.size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
  const auto& loss_node = loss.node();
  if (loss_node->is_leaf) {
    if (!loss_node->requires_grad) throw ContractError("loss does not require gradients");
    if (loss_node->grad.empty()) loss_node->grad.assign(1, Real{0});
    loss_node->grad[0] += Real{1};
    return;
  }

  std::size_t last = entries_.size();
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (entries_[i].output == loss_node) {
      last = i;
      break;
    }
  }
  if (last == entries_.size()) throw ContractError("loss is not connected to this tape");

  // Intermediate gradients restart from zero on every pass; leaves accumulate.
  for (std::size_t i = 0; i <= last; ++i) {
    auto& out = *entries_[i].output;
    out.grad.assign(out.value.size(), Real{0});
  }
  loss_node->grad[0] = Real{1};

  for (std::size_t i = last + 1; i-- > 0;) {
    const Entry& entry = entries_[i];
    const auto& g = entry.output->grad;
    if (std::all_of(g.begin(), g.end(), [](Real v) { return v == Real{0}; })) continue;
    entry.rule(std::span<const Real>(g));
  }
}

// ---- helpers -------------------------------------------------------------

namespace {

template <typename Real>
using NodePtr = std::shared_ptr<typename Var<Real>::Node>;

template <typename Real>
Tensor<Real> make_value(const char* op, Shape shape, std::vector<Real> values) {
  for (Real v : values)
    if (!std::isfinite(v)) throw DomainError(std::string("non-finite output in ") + op);
  return Tensor<Real>(std::move(shape), std::move(values));
}

template <typename Real, typename Rule>
Var<Real> emit(Tensor<Real> value, std::initializer_list<const Var<Real>*> inputs, Rule&& rule) {
  Tape<Real>* tape = Tape<Real>::active();
  bool needs_grad = false;
  for (const Var<Real>* in : inputs) needs_grad = needs_grad || in->requires_grad();
  if (!tape || !needs_grad) return Var<Real>(std::move(value), false);

  auto node = std::make_shared<typename Var<Real>::Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->is_leaf = false;
  std::vector<NodePtr<Real>> in_nodes;
  in_nodes.reserve(inputs.size());
  for (const Var<Real>* in : inputs) in_nodes.push_back(in->node());
  tape->record(std::move(in_nodes), node, std::forward<Rule>(rule));
  return Var<Real>::from_node(node);
}

// Gradient buffer of a node, or nullptr when it takes no gradient.
template <typename Real>
Real* grad_buffer(const NodePtr<Real>& node) {
  if (!node->requires_grad) return nullptr;
  if (node->grad.empty()) node->grad.assign(node->value.size(), Real{0});
  return node->grad.data();
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
}

void require_rank(const char* op, const Shape& s, std::size_t rank) {
  if (s.size() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_string(s));
}

// Elementwise op y = f(x) with dy/dx = df(x, y); y is recomputed in backward.
template <typename Real, typename F, typename DF>
Var<Real> unary(const char* op, const Var<Real>& x, F f, DF df) {
  const auto& xv = x.value().storage();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = static_cast<Real>(f(double(xv[i])));
  auto xn = x.node();
  return emit<Real>(make_value<Real>(op, x.shape(), std::move(out)), {&x},
                    [xn, f, df](std::span<const Real> g) {
                      Real* gx = grad_buffer<Real>(xn);
                      if (!gx) return;
                      const auto& xv = xn->value.storage();
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        const double v = xv[i];
                        gx[i] += static_cast<Real>(double(g[i]) * df(v, f(v)));
                      }
                    });
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, oh, ow, stride, pad;
};

}  // namespace

// ---- arithmetic ----------------------------------------------------------

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape("add", a.shape(), b.shape());
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  auto an = a.node(), bn = b.node();
  return emit<Real>(make_value<Real>("add", a.shape(), std::move(out)), {&a, &b},
                    [an, bn](std::span<const Real> g) {
                      if (Real* ga = grad_buffer<Real>(an))
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      if (Real* gb = grad_buffer<Real>(bn))
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                    });
}

template <typename Real>
Var<Real> sub(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  auto an = a.node(), bn = b.node();
  return emit<Real>(make_value<Real>("sub", a.shape(), std::move(out)), {&a, &b},
                    [an, bn](std::span<const Real> g) {
                      if (Real* ga = grad_buffer<Real>(an))
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      if (Real* gb = grad_buffer<Real>(bn))
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                    });
}

template <typename Real>
Var<Real> mul(const Var<Real>& a, const Var<Real>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  auto an = a.node(), bn = b.node();
  return emit<Real>(make_value<Real>("mul", a.shape(), std::move(out)), {&a, &b},
                    [an, bn](std::span<const Real> g) {
                      const auto& av = an->value.storage();
                      const auto& bv = bn->value.storage();
                      if (Real* ga = grad_buffer<Real>(an))
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                      if (Real* gb = grad_buffer<Real>(bn))
                        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                    });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, double factor) {
  const auto& av = a.value().storage();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = static_cast<Real>(av[i] * factor);
  auto an = a.node();
  return emit<Real>(make_value<Real>("scale", a.shape(), std::move(out)), {&a},
                    [an, factor](std::span<const Real> g) {
                      if (Real* ga = grad_buffer<Real>(an))
                        for (std::size_t i = 0; i < g.size(); ++i)
                          ga[i] += static_cast<Real>(g[i] * factor);
                    });
}

template <typename Real>
Var<Real> add_scalar(const Var<Real>& a, double offset) {
  const auto& av = a.value().storage();
  std::vector<Real> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = static_cast<Real>(av[i] + offset);
  auto an = a.node();
  return emit<Real>(make_value<Real>("add_scalar", a.shape(), std::move(out)), {&a},
                    [an](std::span<const Real> g) {
                      if (Real* ga = grad_buffer<Real>(an))
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    });
}

template <typename Real>
Var<Real> bias_add(const Var<Real>& x, const Var<Real>& bias) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw DimensionError("bias_add: input needs rank >= 2");
  require_rank("bias_add", bias.shape(), 1);
  const std::size_t n = s[0], c = s[1], inner = shape_size(s) / (n * c);
  if (bias.shape()[0] != c)
    throw DimensionError("bias_add: bias length " + std::to_string(bias.shape()[0]) +
                         " != channels " + std::to_string(c));
  const auto& xv = x.value().storage();
  const auto& bv = bias.value().storage();
  std::vector<Real> out(xv.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t base = (i * c + j) * inner;
      for (std::size_t k = 0; k < inner; ++k) out[base + k] = xv[base + k] + bv[j];
    }
  auto xn = x.node(), bn = bias.node();
  return emit<Real>(make_value<Real>("bias_add", s, std::move(out)), {&x, &bias},
                    [xn, bn, n, c, inner](std::span<const Real> g) {
                      if (Real* gx = grad_buffer<Real>(xn))
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      if (Real* gb = grad_buffer<Real>(bn))
                        for (std::size_t j = 0; j < c; ++j) {
                          double acc = 0.0;
                          for (std::size_t i = 0; i < n; ++i) {
                            const std::size_t base = (i * c + j) * inner;
                            for (std::size_t k = 0; k < inner; ++k) acc += g[base + k];
                          }
                          gb[j] += static_cast<Real>(acc);
                        }
                    });
}

template <typename Real>
Var<Real> matmul(const Var<Real>& a, const Var<Real>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  const auto& av = a.value().storage();
  const auto& bv = b.value().storage();
  std::vector<Real> out(m * n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const Real* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<Real>(row[j]);
  }
  auto an = a.node(), bn = b.node();
  return emit<Real>(
      make_value<Real>("matmul", Shape{m, n}, std::move(out)), {&a, &b},
      [an, bn, m, k, n](std::span<const Real> g) {
        const auto& av = an->value.storage();
        const auto& bv = bn->value.storage();
        if (Real* ga = grad_buffer<Real>(an)) {
          // dA = dC * B^T
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              const Real* brow = bv.data() + p * n;
              const Real* grow = g.data() + i * n;
              for (std::size_t j = 0; j < n; ++j) acc += double(grow[j]) * brow[j];
              ga[i * k + p] += static_cast<Real>(acc);
            }
        }
        if (Real* gb = grad_buffer<Real>(bn)) {
          // dB = A^T * dC
          std::vector<double> acc(k * n, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = av[i * k + p];
              const Real* grow = g.data() + i * n;
              double* arow = acc.data() + p * n;
              for (std::size_t j = 0; j < n; ++j) arow[j] += aip * grow[j];
            }
          for (std::size_t i = 0; i < k * n; ++i) gb[i] += static_cast<Real>(acc[i]);
        }
      });
}

// ---- convolutions --------------------------------------------------------
//
// Both convolutions share three kernels over the same index relation
//   out[n, co, oh, ow] <- in[n, ci, oh * s - p + kh, ow * s - p + kw] * w[co, ci, kh, kw]:
//   correlate  : out = sum over (ci, kh, kw) of in * w      (conv2d forward)
//   scatter    : in  = sum over (co, kh, kw) of out * w     (conv2d dx, conv_transpose forward)
//   weight_grad: w   = sum over (n, oh, ow) of out * in     (kernel gradient, both ops)
// Here "in" is the large spatial grid (h, w) and "out" the strided one (oh, ow);
// the kernel index order is [co][ci] with co on the strided side.

namespace {

// Valid range [lo, hi) of strided indices o with 0 <= o * stride + k - pad < extent.
std::pair<std::size_t, std::size_t> valid_range(std::size_t k, const ConvGeometry& gm,
                                                std::size_t count, std::size_t extent) {
  const long off = long(k) - long(gm.pad);
  const long s = long(gm.stride);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (long(extent) - off + s - 1) / s;
  hi = std::clamp(hi, 0L, long(count));
  lo = std::min(lo, hi);
  return {std::size_t(lo), std::size_t(hi)};
}

// cols[(ci, ky, kx), (oy, ox)] = in[ci, oy * s + ky - p, ox * s + kx - p], zero outside.
template <typename Real>
void im2col(const ConvGeometry& gm, const Real* in, std::vector<Real>& cols) {
  const std::size_t ohow = gm.oh * gm.ow;
  cols.assign(gm.cin * gm.kh * gm.kw * ohow, Real{0});
  for (std::size_t ci = 0; ci < gm.cin; ++ci)
    for (std::size_t ky = 0; ky < gm.kh; ++ky) {
      const auto [ylo, yhi] = valid_range(ky, gm, gm.oh, gm.h);
      for (std::size_t kx = 0; kx < gm.kw; ++kx) {
        const auto [xlo, xhi] = valid_range(kx, gm, gm.ow, gm.w);
        Real* dst = cols.data() + ((ci * gm.kh + ky) * gm.kw + kx) * ohow;
        const Real* plane = in + ci * gm.h * gm.w;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const Real* row = plane + (oy * gm.stride + ky - gm.pad) * gm.w;
          for (std::size_t ox = xlo; ox < xhi; ++ox)
            dst[oy * gm.ow + ox] = row[ox * gm.stride + kx - gm.pad];
        }
      }
    }
}

// in[ci, ...] += cols scattered back (adjoint of im2col).
template <typename Real>
void col2im_add(const ConvGeometry& gm, const std::vector<double>& cols, Real* in) {
  const std::size_t ohow = gm.oh * gm.ow;
  std::vector<double> acc(gm.h * gm.w);
  for (std::size_t ci = 0; ci < gm.cin; ++ci) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t ky = 0; ky < gm.kh; ++ky) {
      const auto [ylo, yhi] = valid_range(ky, gm, gm.oh, gm.h);
      for (std::size_t kx = 0; kx < gm.kw; ++kx) {
        const auto [xlo, xhi] = valid_range(kx, gm, gm.ow, gm.w);
        const double* src = cols.data() + ((ci * gm.kh + ky) * gm.kw + kx) * ohow;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          double* row = acc.data() + (oy * gm.stride + ky - gm.pad) * gm.w;
          for (std::size_t ox = xlo; ox < xhi; ++ox)
            row[ox * gm.stride + kx - gm.pad] += src[oy * gm.ow + ox];
        }
      }
    }
    Real* dst = in + ci * gm.h * gm.w;
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] += static_cast<Real>(acc[i]);
  }
}

// Double-precision dot product with four interleaved partial sums in fixed order.
template <typename Real>
double dot(const Real* a, const Real* b, std::size_t n) {
  double p0 = 0.0, p1 = 0.0, p2 = 0.0, p3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    p0 += double(a[j]) * double(b[j]);
    p1 += double(a[j + 1]) * double(b[j + 1]);
    p2 += double(a[j + 2]) * double(b[j + 2]);
    p3 += double(a[j + 3]) * double(b[j + 3]);
  }
  for (; j < n; ++j) p0 += double(a[j]) * double(b[j]);
  return (p0 + p1) + (p2 + p3);
}

template <typename Real>
void correlate(const ConvGeometry& gm, const Real* in, const Real* w, Real* out) {
  const std::size_t ohow = gm.oh * gm.ow, taps = gm.cin * gm.kh * gm.kw;
  std::vector<Real> cols;
  std::vector<double> acc(ohow);
  for (std::size_t n = 0; n < gm.n; ++n) {
    im2col(gm, in + n * gm.cin * gm.h * gm.w, cols);
    for (std::size_t co = 0; co < gm.cout; ++co) {
      std::fill(acc.begin(), acc.end(), 0.0);
      const Real* wrow = w + co * taps;
      for (std::size_t r = 0; r < taps; ++r) {
        const double wv = wrow[r];
        const Real* col = cols.data() + r * ohow;
        for (std::size_t j = 0; j < ohow; ++j) acc[j] += wv * double(col[j]);
      }
      Real* dst = out + (n * gm.cout + co) * ohow;
      for (std::size_t j = 0; j < ohow; ++j) dst[j] = static_cast<Real>(acc[j]);
    }
  }
}

// Adds the scatter result into `in` (accumulating, so it doubles as a gradient update).
template <typename Real>
void scatter_add(const ConvGeometry& gm, const Real* out, const Real* w, Real* in) {
  const std::size_t ohow = gm.oh * gm.ow, taps = gm.cin * gm.kh * gm.kw;
  std::vector<double> cols(taps * ohow);
  for (std::size_t n = 0; n < gm.n; ++n) {
    std::fill(cols.begin(), cols.end(), 0.0);
    for (std::size_t co = 0; co < gm.cout; ++co) {
      const Real* wrow = w + co * taps;
      const Real* src = out + (n * gm.cout + co) * ohow;
      for (std::size_t r = 0; r < taps; ++r) {
        const double wv = wrow[r];
        double* col = cols.data() + r * ohow;
        for (std::size_t j = 0; j < ohow; ++j) col[j] += wv * double(src[j]);
      }
    }
    col2im_add(gm, cols, in + n * gm.cin * gm.h * gm.w);
  }
}

template <typename Real>
void weight_grad_add(const ConvGeometry& gm, const Real* out, const Real* in, Real* w) {
  const std::size_t ohow = gm.oh * gm.ow, taps = gm.cin * gm.kh * gm.kw;
  std::vector<Real> cols;
  std::vector<double> acc(gm.cout * taps, 0.0);
  for (std::size_t n = 0; n < gm.n; ++n) {
    im2col(gm, in + n * gm.cin * gm.h * gm.w, cols);
    for (std::size_t co = 0; co < gm.cout; ++co) {
      const Real* src = out + (n * gm.cout + co) * ohow;
      for (std::size_t r = 0; r < taps; ++r) {
        const Real* col = cols.data() + r * ohow;
        acc[co * taps + r] += dot(src, col, ohow);
      }
    }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) w[i] += static_cast<Real>(acc[i]);
}

void check_stride(const char* op, std::size_t stride) {
  if (stride == 0) throw DimensionError(std::string(op) + ": stride must be positive");
}

}  // namespace

template <typename Real>
Var<Real> conv2d(const Var<Real>& x, const Var<Real>& kernel, std::size_t stride,
                 std::size_t padding) {
  check_stride("conv2d", stride);
  require_rank("conv2d", x.shape(), 4);
  require_rank("conv2d", kernel.shape(), 4);
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks[1] != xs[1])
    throw DimensionError("conv2d: kernel expects " + std::to_string(ks[1]) +
                         " input channels, got " + std::to_string(xs[1]));
  if (xs[2] + 2 * padding < ks[2] || xs[3] + 2 * padding < ks[3])
    throw DimensionError("conv2d: kernel larger than padded input");
  ConvGeometry gm{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3],
                  (xs[2] + 2 * padding - ks[2]) / stride + 1,
                  (xs[3] + 2 * padding - ks[3]) / stride + 1, stride, padding};
  std::vector<Real> out(gm.n * gm.cout * gm.oh * gm.ow);
  correlate(gm, x.value().storage().data(), kernel.value().storage().data(), out.data());
  auto xn = x.node(), kn = kernel.node();
  return emit<Real>(make_value<Real>("conv2d", Shape{gm.n, gm.cout, gm.oh, gm.ow}, std::move(out)),
                    {&x, &kernel}, [xn, kn, gm](std::span<const Real> g) {
                      if (Real* gx = grad_buffer<Real>(xn))
                        scatter_add(gm, g.data(), kn->value.storage().data(), gx);
                      if (Real* gk = grad_buffer<Real>(kn))
                        weight_grad_add(gm, g.data(), xn->value.storage().data(), gk);
                    });
}

template <typename Real>
Var<Real> conv_transpose2d(const Var<Real>& x, const Var<Real>& kernel, std::size_t stride,
                           std::size_t padding) {
  check_stride("conv_transpose2d", stride);
  require_rank("conv_transpose2d", x.shape(), 4);
  require_rank("conv_transpose2d", kernel.shape(), 4);
  const Shape& xs = x.shape();
  const Shape& ks = kernel.shape();
  if (ks[0] != xs[1])
    throw DimensionError("conv_transpose2d: kernel expects " + std::to_string(ks[0]) +
                         " input channels, got " + std::to_string(xs[1]));
  const long oh = long(xs[2] - 1) * long(stride) - 2 * long(padding) + long(ks[2]);
  const long ow = long(xs[3] - 1) * long(stride) - 2 * long(padding) + long(ks[3]);
  if (oh <= 0 || ow <= 0) throw DimensionError("conv_transpose2d: empty output");
  // The strided side is the input here: x plays conv2d's output, the result its input.
  ConvGeometry gm{xs[0], ks[1], std::size_t(oh), std::size_t(ow), xs[1], ks[2], ks[3],
                  xs[2], xs[3], stride, padding};
  std::vector<Real> out(gm.n * gm.cin * gm.h * gm.w, Real{0});
  scatter_add(gm, x.value().storage().data(), kernel.value().storage().data(), out.data());
  auto xn = x.node(), kn = kernel.node();
  return emit<Real>(
      make_value<Real>("conv_transpose2d", Shape{gm.n, gm.cin, gm.h, gm.w}, std::move(out)),
      {&x, &kernel}, [xn, kn, gm](std::span<const Real> g) {
        if (Real* gx = grad_buffer<Real>(xn)) {
          std::vector<Real> tmp(xn->value.size());
          correlate(gm, g.data(), kn->value.storage().data(), tmp.data());
          for (std::size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
        }
        if (Real* gk = grad_buffer<Real>(kn))
          weight_grad_add(gm, xn->value.storage().data(), g.data(), gk);
      });
}

// ---- elementwise ---------------------------------------------------------

template <typename Real>
Var<Real> relu(const Var<Real>& x) {
  return unary<Real>(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

template <typename Real>
Var<Real> leaky_relu(const Var<Real>& x, double slope) {
  return unary<Real>(
      "leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
      [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

template <typename Real>
Var<Real> sigmoid(const Var<Real>& x) {
  return unary<Real>(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

template <typename Real>
Var<Real> tanh(const Var<Real>& x) {
  return unary<Real>(
      "tanh", x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

template <typename Real>
Var<Real> exp(const Var<Real>& x) {
  return unary<Real>(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

template <typename Real>
Var<Real> log(const Var<Real>& x) {
  for (Real v : x.value().storage())
    if (v <= Real{0}) throw DomainError("log of non-positive value");
  return unary<Real>(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

template <typename Real>
Var<Real> square(const Var<Real>& x) {
  return unary<Real>(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

template <typename Real>
Var<Real> sqrt(const Var<Real>& x) {
  for (Real v : x.value().storage())
    if (v < Real{0}) throw DomainError("sqrt of negative value");
  // d/dx sqrt at 0 is taken as 0 (subgradient convention) instead of +inf.
  return unary<Real>(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

template <typename Real>
Var<Real> abs(const Var<Real>& x) {
  return unary<Real>(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// ---- reductions ----------------------------------------------------------

template <typename Real>
Var<Real> sum(const Var<Real>& x) {
  double acc = 0.0;
  for (Real v : x.value().storage()) acc += v;
  auto xn = x.node();
  return emit<Real>(make_value<Real>("sum", Shape{1}, {static_cast<Real>(acc)}), {&x},
                    [xn](std::span<const Real> g) {
                      if (Real* gx = grad_buffer<Real>(xn))
                        for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += g[0];
                    });
}

template <typename Real>
Var<Real> mean(const Var<Real>& x) {
  double acc = 0.0;
  for (Real v : x.value().storage()) acc += v;
  const double n = double(x.size());
  auto xn = x.node();
  return emit<Real>(make_value<Real>("mean", Shape{1}, {static_cast<Real>(acc / n)}), {&x},
                    [xn, n](std::span<const Real> g) {
                      if (Real* gx = grad_buffer<Real>(xn)) {
                        const Real share = static_cast<Real>(double(g[0]) / n);
                        for (std::size_t i = 0; i < xn->value.size(); ++i) gx[i] += share;
                      }
                    });
}

// ---- structural ----------------------------------------------------------

template <typename Real>
Var<Real> reshape(const Var<Real>& x, Shape shape) {
  auto value = x.value().reshaped(std::move(shape));
  auto xn = x.node();
  return emit<Real>(std::move(value), {&x}, [xn](std::span<const Real> g) {
    if (Real* gx = grad_buffer<Real>(xn))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d])
        throw DimensionError("concat: shape mismatch " + shape_string(s) + " vs " +
                             shape_string(first));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<Real> out(shape_size(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t row = p.shape()[axis] * inner;
    const auto& pv = p.value().storage();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.data() + o * row, row, out.data() + o * out_row + offset);
    offset += row;
  }

  Tape<Real>* tape = Tape<Real>::active();
  const bool needs_grad =
      std::any_of(parts.begin(), parts.end(), [](const auto& p) { return p.requires_grad(); });
  auto value = make_value<Real>("concat", out_shape, std::move(out));
  if (!tape || !needs_grad) return Var<Real>(std::move(value), false);

  std::vector<NodePtr<Real>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  auto node = std::make_shared<typename Var<Real>::Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->is_leaf = false;
  tape->record(nodes, node, [nodes, offsets, outer, inner, out_row, axis](std::span<const Real> g) {
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      Real* gp = grad_buffer<Real>(nodes[k]);
      if (!gp) continue;
      const std::size_t row = nodes[k]->value.shape()[axis] * inner;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < row; ++i) gp[o * row + i] += g[o * out_row + offsets[k] + i];
    }
  });
  return Var<Real>::from_node(node);
}

template <typename Real>
Var<Real> slice(const Var<Real>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis out of range");
  if (begin >= end || end > s[axis])
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis of length " + std::to_string(s[axis]));
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t in_row = s[axis] * inner, out_row = (end - begin) * inner,
                    skip = begin * inner;
  const auto& xv = x.value().storage();
  std::vector<Real> out(outer * out_row);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + o * in_row + skip, out_row, out.data() + o * out_row);
  auto xn = x.node();
  return emit<Real>(make_value<Real>("slice", out_shape, std::move(out)), {&x},
                    [xn, outer, in_row, out_row, skip](std::span<const Real> g) {
                      if (Real* gx = grad_buffer<Real>(xn))
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < out_row; ++i)
                            gx[o * in_row + skip + i] += g[o * out_row + i];
                    });
}

template <typename Real>
Var<Real> gather(const Var<Real>& x, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("gather: no indices");
  const Shape& s = x.shape();
  const std::size_t row = shape_size(s) / s[0];
  for (std::size_t idx : indices)
    if (idx >= s[0])
      throw DimensionError("gather: index " + std::to_string(idx) + " out of range for " +
                           shape_string(s));
  Shape out_shape = s;
  out_shape[0] = indices.size();
  const auto& xv = x.value().storage();
  std::vector<Real> out(indices.size() * row);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(xv.data() + indices[i] * row, row, out.data() + i * row);
  auto xn = x.node();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return emit<Real>(make_value<Real>("gather", out_shape, std::move(out)), {&x},
                    [xn, idx, row](std::span<const Real> g) {
                      if (Real* gx = grad_buffer<Real>(xn))
                        for (std::size_t i = 0; i < idx.size(); ++i)
                          for (std::size_t k = 0; k < row; ++k)
                            gx[idx[i] * row + k] += g[i * row + k];
                    });
}

// ---- explicit instantiations ---------------------------------------------

#define SLICEGEN_INSTANTIATE(Real)                                                              \
  template class Var<Real>;                                                                     \
  template class Tape<Real>;                                                                    \
  template Var<Real> add(const Var<Real>&, const Var<Real>&);                                   \
  template Var<Real> sub(const Var<Real>&, const Var<Real>&);                                   \
  template Var<Real> mul(const Var<Real>&, const Var<Real>&);                                   \
  template Var<Real> scale(const Var<Real>&, double);                                           \
  template Var<Real> add_scalar(const Var<Real>&, double);                                      \
  template Var<Real> bias_add(const Var<Real>&, const Var<Real>&);                              \
  template Var<Real> matmul(const Var<Real>&, const Var<Real>&);                                \
  template Var<Real> conv2d(const Var<Real>&, const Var<Real>&, std::size_t, std::size_t);      \
  template Var<Real> conv_transpose2d(const Var<Real>&, const Var<Real>&, std::size_t,          \
                                      std::size_t);                                             \
  template Var<Real> relu(const Var<Real>&);                                                    \
  template Var<Real> leaky_relu(const Var<Real>&, double);                                      \
  template Var<Real> sigmoid(const Var<Real>&);                                                 \
  template Var<Real> tanh(const Var<Real>&);                                                    \
  template Var<Real> exp(const Var<Real>&);                                                     \
  template Var<Real> log(const Var<Real>&);                                                     \
  template Var<Real> square(const Var<Real>&);                                                  \
  template Var<Real> sqrt(const Var<Real>&);                                                    \
  template Var<Real> abs(const Var<Real>&);                                                     \
  template Var<Real> sum(const Var<Real>&);                                                     \
  template Var<Real> mean(const Var<Real>&);                                                    \
  template Var<Real> reshape(const Var<Real>&, Shape);                                          \
  template Var<Real> concat(const std::vector<Var<Real>>&, std::size_t);                        \
  template Var<Real> slice(const Var<Real>&, std::size_t, std::size_t, std::size_t);            \
  template Var<Real> gather(const Var<Real>&, std::span<const std::size_t>);

SLICEGEN_INSTANTIATE(float)
SLICEGEN_INSTANTIATE(double)

#undef SLICEGEN_INSTANTIATE

}  // namespace slicegen
