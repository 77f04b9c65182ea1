#include "posecl/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "posecl/errors.hpp"

namespace posecl {

const Tensor& Var::value() const { return tape_->node(id_).value; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

Var Tape::push(std::string op, Tensor value, bool requires_grad,
               std::function<void(Tape&, std::size_t)> backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push("constant", std::move(value), false, nullptr); }

Var Tape::parameter(std::string name, Tensor value) {
  Var v = push("parameter", std::move(value), true, nullptr);
  nodes_[v.id()].param = std::move(name);
  return v;
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::vector<std::string> Tape::ops() const {
  std::vector<std::string> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.op);
  return out;
}

GradientMap Tape::backward(Var loss) {
  if (loss.tape() != this) throw RegistryError("loss belongs to a different tape");
  const auto& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) throw RankError("backward needs a scalar loss, got shape " + shape_str(lv.shape()));

  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id())[0] = 1.0;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }

  GradientMap grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.param.empty()) continue;
    Tensor g(n.value.shape(), 0.0);
    if (!n.grad.empty()) std::copy(n.grad.begin(), n.grad.end(), g.values().begin());
    grads.insert_or_assign(n.param, std::move(g));
  }
  return grads;
}

namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape())
    throw RegistryError("operands recorded on different tapes");
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (a.tape() == nullptr) throw RegistryError("operand has no tape");
  return *a.tape();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// rows x cols view of a rank-1 or rank-2 tensor
std::pair<std::size_t, std::size_t> as_rows(const char* op, const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw RankError(std::string(op) + " expects rank 1 or 2, got " + shape_str(t.shape()));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_str(av.shape()) + " by " +
                         shape_str(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n}, 0.0);
  auto A = av.values();
  auto B = bv.values();
  auto C = out.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * n];
      double* crow = &C[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  const std::size_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return tape.push("matmul", std::move(out), ga || gb, [=](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad;
    const auto& Av = t.node(ia).value.data();
    const auto& Bv = t.node(ib).value.data();
    if (ga) {
      auto& dA = t.grad_buffer(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = &G[i * n];
          const double* brow = &Bv[p * n];
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          dA[i * k + p] += acc;
        }
    }
    if (gb) {
      auto& dB = t.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = Av[i * k + p];
          if (aip == 0.0) continue;
          const double* grow = &G[i * n];
          double* drow = &dB[p * n];
          for (std::size_t j = 0; j < n; ++j) drow[j] += aip * grow[j];
        }
    }
  });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0))
    throw DimensionError("add_bias: cannot add " + shape_str(bv.shape()) + " to " +
                         shape_str(xv.shape()));
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const std::size_t ix = x.id(), ib = bias.id();
  const bool gx = x.requires_grad(), gb = bias.requires_grad();
  return tape.push("add_bias", std::move(out), gx || gb, [=](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad;
    if (gx) {
      auto& d = t.grad_buffer(ix);
      for (std::size_t i = 0; i < m * n; ++i) d[i] += G[i];
    }
    if (gb) {
      auto& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) d[j] += G[i * n + j];
    }
  });
}

Var relu(Var x) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  const std::size_t ix = x.id();
  return tape.push("relu", std::move(out), x.requires_grad(), [ix](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad;
    const auto& X = t.node(ix).value.data();
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < G.size(); ++i)
      if (X[i] > 0.0) d[i] += G[i];
  });
}

Var sigmoid(Var x) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  const std::size_t ix = x.id();
  return tape.push("sigmoid", std::move(out), x.requires_grad(), [ix](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad;
    const auto& Y = t.node(self).value.data();
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * Y[i] * (1.0 - Y[i]);
  });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = tape_of(x);
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return tape.push("reshape", std::move(out), x.requires_grad(), [ix](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad;
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i];
  });
}

namespace {

template <class F, class Ga, class Gb>
Var binary(const char* op, Var a, Var b, F f, Ga da, Gb db) {
  Tape& tape = same_tape(a, b);
  require_same_shape(op, a.value(), b.value());
  Tensor out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(out[i], bv[i]);
  const std::size_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return tape.push(op, std::move(out), ga || gb, [=](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad;
    const auto& A = t.node(ia).value.data();
    const auto& B = t.node(ib).value.data();
    if (ga) {
      auto& d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * da(A[i], B[i]);
    }
    if (gb) {
      auto& d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < G.size(); ++i) d[i] += G[i] * db(A[i], B[i]);
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var square(Var x) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.values()) v = v * v;
  const std::size_t ix = x.id();
  return tape.push("square", std::move(out), x.requires_grad(), [ix](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad;
    const auto& X = t.node(ix).value.data();
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < G.size(); ++i) d[i] += 2.0 * X[i] * G[i];
  });
}

Var scale(Var x, double factor) {
  Tape& tape = tape_of(x);
  Tensor out = x.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ix = x.id();
  return tape.push("scale", std::move(out), x.requires_grad(), [ix, factor](Tape& t, std::size_t self) {
    const auto& G = t.node(self).grad;
    auto& d = t.grad_buffer(ix);
    for (std::size_t i = 0; i < G.size(); ++i) d[i] += factor * G[i];
  });
}

Var mul_const(Var x, const Tensor& factor) {
  Tape& tape = tape_of(x);
  require_same_shape("mul_const", x.value(), factor);
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  const std::size_t ix = x.id();
  return tape.push("mul_const", std::move(out), x.requires_grad(),
                   [ix, f = factor.data()](Tape& t, std::size_t self) {
                     const auto& G = t.node(self).grad;
                     auto& d = t.grad_buffer(ix);
                     for (std::size_t i = 0; i < G.size(); ++i) d[i] += f[i] * G[i];
                   });
}

Var sum(Var x) {
  Tape& tape = tape_of(x);
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return tape.push("sum", Tensor::scalar(s), x.requires_grad(), [ix](Tape& t, std::size_t self) {
    const double g = t.node(self).grad[0];
    for (auto& d : t.grad_buffer(ix)) d += g;
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var softmax_temp(Var logits, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw TemperatureError("softmax temperature must be positive, got " + std::to_string(tau));
  Tape& tape = tape_of(logits);
  const Tensor& x = logits.value();
  const auto [rows, n] = as_rows("softmax_temp", x);
  Tensor out(x.shape(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x.values()[r * n];
    double* yr = &out.values()[r * n];
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp((xr[j] - mx) / tau);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  const std::size_t ix = logits.id();
  return tape.push("softmax_temp", std::move(out), logits.requires_grad(),
                   [ix, rows, n, tau](Tape& t, std::size_t self) {
                     const auto& G = t.node(self).grad;
                     const auto& Y = t.node(self).value.data();
                     auto& d = t.grad_buffer(ix);
                     for (std::size_t r = 0; r < rows; ++r) {
                       double dot = 0.0;
                       for (std::size_t j = 0; j < n; ++j) dot += G[r * n + j] * Y[r * n + j];
                       for (std::size_t j = 0; j < n; ++j)
                         d[r * n + j] += Y[r * n + j] * (G[r * n + j] - dot) / tau;
                     }
                   });
}

Var kl_div(Var p, Var q) {
  Tape& tape = same_tape(p, q);
  const Tensor& pv = p.value();
  const Tensor& qv = q.value();
  require_same_shape("kl_div", pv, qv);
  const auto [rows, n] = as_rows("kl_div", pv);
  for (const Tensor* t : {&pv, &qv})
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = (*t)[r * n + j];
        if (v < 0.0 || !std::isfinite(v))
          throw NormalizationError("kl_div: entry " + std::to_string(v) + " is not a probability");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-6)
        throw NormalizationError("kl_div: row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double pi = pv[i];
    if (pi == 0.0) continue;
    total += pi * (std::log(pi) - std::log(std::max(qv[i], kKlFloor)));
  }
  const std::size_t ip = p.id(), iq = q.id();
  return tape.push("kl_div", Tensor::scalar(total), q.requires_grad(), [ip, iq](Tape& t, std::size_t self) {
    const double g = t.node(self).grad[0];
    const auto& P = t.node(ip).value.data();
    const auto& Q = t.node(iq).value.data();
    auto& d = t.grad_buffer(iq);
    for (std::size_t i = 0; i < P.size(); ++i)
      if (P[i] != 0.0 && Q[i] >= kKlFloor) d[i] -= g * P[i] / Q[i];
  });
}

Var mse(Var a, Var b, const Tensor* mask) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape("mse", av, bv);
  std::vector<double> m(av.size(), 1.0);
  if (mask) {
    require_same_shape("mse mask", av, *mask);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double v = (*mask)[i];
      if (v != 0.0 && v != 1.0) throw DimensionError("mse: mask entries must be 0 or 1");
      m[i] = v;
    }
  }
  double count = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0) continue;
    const double diff = av[i] - bv[i];
    acc += diff * diff;
    count += 1.0;
  }
  const double value = count > 0.0 ? acc / count : 0.0;
  const std::size_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  return tape.push("mse", Tensor::scalar(value), (ga || gb) && count > 0.0,
                   [=, m = std::move(m)](Tape& t, std::size_t self) {
                     const double g = t.node(self).grad[0] * 2.0 / count;
                     const auto& A = t.node(ia).value.data();
                     const auto& B = t.node(ib).value.data();
                     if (ga) {
                       auto& d = t.grad_buffer(ia);
                       for (std::size_t i = 0; i < m.size(); ++i)
                         if (m[i] != 0.0) d[i] += g * (A[i] - B[i]);
                     }
                     if (gb) {
                       auto& d = t.grad_buffer(ib);
                       for (std::size_t i = 0; i < m.size(); ++i)
                         if (m[i] != 0.0) d[i] -= g * (A[i] - B[i]);
                     }
                   });
}

Var gather_channels(Var x, std::span<const std::size_t> channels, std::size_t block) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || block == 0 || xv.dim(1) % block != 0)
    throw DimensionError("gather_channels: " + shape_str(xv.shape()) + " is not [B x C*" +
                         std::to_string(block) + "]");
  if (channels.empty()) throw ChannelError("gather_channels: empty channel list");
  const std::size_t batch = xv.dim(0), width = xv.dim(1), nch = width / block;
  for (auto c : channels)
    if (c >= nch)
      throw ChannelError("gather_channels: channel " + std::to_string(c) + " not in 0.." +
                         std::to_string(nch - 1));
  std::vector<std::size_t> chans(channels.begin(), channels.end());
  Tensor out(Shape{batch * chans.size(), block}, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < chans.size(); ++k)
      std::copy_n(&xv.values()[b * width + chans[k] * block], block,
                  &out.values()[(b * chans.size() + k) * block]);
  const std::size_t ix = x.id();
  return tape.push("gather_channels", std::move(out), x.requires_grad(),
                   [=, chans = std::move(chans)](Tape& t, std::size_t self) {
                     const auto& G = t.node(self).grad;
                     auto& d = t.grad_buffer(ix);
                     for (std::size_t b = 0; b < batch; ++b)
                       for (std::size_t k = 0; k < chans.size(); ++k)
                         for (std::size_t j = 0; j < block; ++j)
                           d[b * width + chans[k] * block + j] += G[(b * chans.size() + k) * block + j];
                   });
}

Var leading_block(Var x, std::size_t rows, std::size_t cols) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  const auto [xr, xc] = as_rows("leading_block", xv);
  if (rows > xr || cols > xc || rows == 0 || cols == 0)
    throw DimensionError("leading_block: " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " exceeds " + shape_str(xv.shape()));
  Shape shape = xv.rank() == 1 ? Shape{cols} : Shape{rows, cols};
  Tensor out(shape, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(&xv.values()[r * xc], cols, &out.values()[r * cols]);
  const std::size_t ix = x.id();
  const std::size_t width = xc;
  return tape.push("leading_block", std::move(out), x.requires_grad(),
                   [=](Tape& t, std::size_t self) {
                     const auto& G = t.node(self).grad;
                     auto& d = t.grad_buffer(ix);
                     for (std::size_t r = 0; r < rows; ++r)
                       for (std::size_t c = 0; c < cols; ++c) d[r * width + c] += G[r * cols + c];
                   });
}

}  // namespace posecl
