// SPDX-License-Identifier: Apache-2.0
#include "tetra/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tetra/nn.hpp"
#include "tetra/quantize.hpp"

namespace tetra::ad {

Var Tape::leaf(Matrix value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (Var in : inputs) {
    if (in.id >= nodes_.size()) throw std::invalid_argument("Tape::record: unknown input");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Matrix& Tape::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!g.same_shape(n.value)) throw std::logic_error("Tape::accumulate: gradient shape mismatch");
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(Var loss) {
  const Matrix& v = value(loss);
  if (v.rows() != 1 || v.cols() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got " + std::to_string(v.rows()) + "x" +
                                std::to_string(v.cols()));
  }
  backward(loss, Matrix(1, 1, 1.0));
}

void Tape::backward(Var out, const Matrix& seed) {
  if (!seed.same_shape(value(out))) throw std::invalid_argument("backward: seed shape mismatch");
  accumulate(out, seed);
  // Node ids are a topological order, so one reverse sweep visits each node once.
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

Matrix scaled(const Matrix& a, double c) {
  Matrix out = a;
  for (double& v : out.values()) v *= c;
  return out;
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  const Matrix& x = t.value(a);
  const Matrix& y = t.value(b);
  require_same_shape(x, y, "add");
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
    tp.accumulate(tp.input(self, 0), tp.upstream(self));
    tp.accumulate(tp.input(self, 1), tp.upstream(self));
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Matrix& x = t.value(a);
  const Matrix& y = t.value(b);
  require_same_shape(x, y, "sub");
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
    tp.accumulate(tp.input(self, 0), tp.upstream(self));
    tp.accumulate(tp.input(self, 1), scaled(tp.upstream(self), -1.0));
  });
}

Var scale(Tape& t, Var a, double c) {
  return t.record(scaled(t.value(a), c), {a}, [c](Tape& tp, std::size_t self) {
    tp.accumulate(tp.input(self, 0), scaled(tp.upstream(self), c));
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Matrix& x = t.value(a);
  const Matrix& y = t.value(b);
  require_same_shape(x, y, "mul");
  Matrix out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Var va = tp.input(self, 0);
    const Var vb = tp.input(self, 1);
    Matrix ga = g;
    Matrix gb = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] *= tp.value(vb)[i];
      gb[i] *= tp.value(va)[i];
    }
    tp.accumulate(va, ga);
    tp.accumulate(vb, gb);
  });
}

Var add_bias(Tape& t, Var x, Var bias) {
  Matrix out = nn::add_bias(t.value(x), t.value(bias));
  return t.record(std::move(out), {x, bias}, [](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate(tp.input(self, 0), g);
    const Var vb = tp.input(self, 1);
    if (tp.requires_grad(vb)) {
      Matrix gb(tp.value(vb).rows(), tp.value(vb).cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += g(i, j);
      tp.accumulate(vb, gb);
    }
  });
}

Var matmul(Tape& t, Var a, Var b) {
  Matrix out = tetra::matmul(t.value(a), t.value(b));
  return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Var va = tp.input(self, 0);
    const Var vb = tp.input(self, 1);
    if (tp.requires_grad(va)) tp.accumulate(va, tetra::matmul_nt(g, tp.value(vb)));
    if (tp.requires_grad(vb)) tp.accumulate(vb, tetra::matmul_tn(tp.value(va), g));
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  Matrix out = tetra::matmul_nt(t.value(a), t.value(b));
  return t.record(std::move(out), {a, b}, [](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Var va = tp.input(self, 0);
    const Var vb = tp.input(self, 1);
    if (tp.requires_grad(va)) tp.accumulate(va, tetra::matmul(g, tp.value(vb)));
    if (tp.requires_grad(vb)) tp.accumulate(vb, tetra::matmul_tn(g, tp.value(va)));
  });
}

Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end) {
  const Matrix& x = t.value(a);
  if (begin > end || end > x.cols()) throw std::invalid_argument("slice_cols: range out of bounds");
  Matrix out(x.rows(), end - begin);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = x(i, j);
  return t.record(std::move(out), {a}, [begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Var va = tp.input(self, 0);
    Matrix ga(tp.value(va).rows(), tp.value(va).cols());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, begin + j) = g(i, j);
    tp.accumulate(va, ga);
  });
}

Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t end) {
  const Matrix& x = t.value(a);
  if (begin > end || end > x.rows()) throw std::invalid_argument("slice_rows: range out of bounds");
  Matrix out(end - begin, x.cols());
  std::copy(x.values().begin() + static_cast<std::ptrdiff_t>(begin * x.cols()),
            x.values().begin() + static_cast<std::ptrdiff_t>(end * x.cols()), out.values().begin());
  return t.record(std::move(out), {a}, [begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Var va = tp.input(self, 0);
    Matrix ga(tp.value(va).rows(), tp.value(va).cols());
    std::copy(g.values().begin(), g.values().end(),
              ga.values().begin() + static_cast<std::ptrdiff_t>(begin * ga.cols()));
    tp.accumulate(va, ga);
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += t.value(p).cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Matrix& x = t.value(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) out(i, offset + j) = x(i, j);
    offset += x.cols();
  }
  return t.record(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < tp.input_count(self); ++k) {
      const Var vp = tp.input(self, k);
      const std::size_t w = tp.value(vp).cols();
      if (tp.requires_grad(vp)) {
        Matrix gp(g.rows(), w);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) = g(i, off + j);
        tp.accumulate(vp, gp);
      }
      off += w;
    }
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const std::size_t cols = t.value(parts[0]).cols();
  std::vector<double> data;
  std::size_t rows = 0;
  for (Var p : parts) {
    const Matrix& x = t.value(p);
    if (x.cols() != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    data.insert(data.end(), x.values().begin(), x.values().end());
    rows += x.rows();
  }
  return t.record(Matrix(rows, cols, std::move(data)), std::vector<Var>(parts.begin(), parts.end()),
                  [](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.upstream(self);
                    std::size_t row = 0;
                    for (std::size_t k = 0; k < tp.input_count(self); ++k) {
                      const Var vp = tp.input(self, k);
                      const std::size_t r = tp.value(vp).rows();
                      if (tp.requires_grad(vp)) {
                        Matrix gp(r, g.cols());
                        std::copy_n(g.values().begin() + static_cast<std::ptrdiff_t>(row * g.cols()), r * g.cols(),
                                    gp.values().begin());
                        tp.accumulate(vp, gp);
                      }
                      row += r;
                    }
                  });
}

Var layer_norm(Tape& t, Var x, Var scale_v, Var shift_v) {
  nn::LayerNormResult r = nn::layer_norm(t.value(x), t.value(scale_v), t.value(shift_v));
  Matrix normalized = std::move(r.normalized);
  std::vector<double> inv_std = std::move(r.inv_std);
  return t.record(std::move(r.out), {x, scale_v, shift_v},
                  [normalized = std::move(normalized), inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.upstream(self);
                    const Var vx = tp.input(self, 0);
                    const Var vs = tp.input(self, 1);
                    const Var vb = tp.input(self, 2);
                    const Matrix& gamma = tp.value(vs);
                    const std::size_t rows = g.rows();
                    const std::size_t cols = g.cols();
                    if (tp.requires_grad(vs) || tp.requires_grad(vb)) {
                      Matrix gs(gamma.rows(), gamma.cols());
                      Matrix gb(gamma.rows(), gamma.cols());
                      for (std::size_t i = 0; i < rows; ++i)
                        for (std::size_t j = 0; j < cols; ++j) {
                          gs[j] += g(i, j) * normalized(i, j);
                          gb[j] += g(i, j);
                        }
                      tp.accumulate(vs, gs);
                      tp.accumulate(vb, gb);
                    }
                    if (tp.requires_grad(vx)) {
                      Matrix gx(rows, cols);
                      const double inv_n = 1.0 / static_cast<double>(cols);
                      for (std::size_t i = 0; i < rows; ++i) {
                        double mean_g = 0.0;
                        double mean_gx = 0.0;
                        for (std::size_t j = 0; j < cols; ++j) {
                          const double gn = g(i, j) * gamma[j];
                          mean_g += gn;
                          mean_gx += gn * normalized(i, j);
                        }
                        mean_g *= inv_n;
                        mean_gx *= inv_n;
                        for (std::size_t j = 0; j < cols; ++j) {
                          const double gn = g(i, j) * gamma[j];
                          gx(i, j) = inv_std[i] * (gn - mean_g - normalized(i, j) * mean_gx);
                        }
                      }
                      tp.accumulate(vx, gx);
                    }
                  });
}

Var gelu(Tape& t, Var x) {
  return t.record(nn::gelu(t.value(x)), {x}, [](Tape& tp, std::size_t self) {
    const Var vx = tp.input(self, 0);
    const Matrix& xv = tp.value(vx);
    Matrix gx = tp.upstream(self);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= nn::gelu_grad(xv[i]);
    tp.accumulate(vx, gx);
  });
}

Var softmax_rows(Tape& t, Var x) {
  return t.record(nn::softmax_rows(t.value(x)), {x}, [](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& y = tp.value(Var{self});
    Matrix gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(tp.input(self, 0), gx);
  });
}

Var average(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("average: no inputs");
  Matrix out = t.value(parts[0]);
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const Matrix& x = t.value(parts[k]);
    require_same_shape(out, x, "average");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += x[i];
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (double& v : out.values()) v *= inv;
  const std::size_t count = parts.size();
  return t.record(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                  [inv, count](Tape& tp, std::size_t self) {
                    const Matrix g = scaled(tp.upstream(self), inv);
                    for (std::size_t k = 0; k < count; ++k) tp.accumulate(tp.input(self, k), g);
                  });
}

Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.record(Matrix(1, 1, s), {a}, [](Tape& tp, std::size_t self) {
    const Var va = tp.input(self, 0);
    tp.accumulate(va, Matrix(tp.value(va).rows(), tp.value(va).cols(), tp.upstream(self)[0]));
  });
}

Var squared_distance(Tape& t, Var a, Var b) {
  const Matrix& x = t.value(a);
  const Matrix& y = t.value(b);
  require_same_shape(x, y, "squared_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return t.record(Matrix(1, 1, s), {a, b}, [](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0];
    const Var va = tp.input(self, 0);
    const Var vb = tp.input(self, 1);
    const Matrix& x = tp.value(va);
    const Matrix& y = tp.value(vb);
    Matrix ga(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = 2.0 * g * (x[i] - y[i]);
    tp.accumulate(va, ga);
    if (tp.requires_grad(vb)) tp.accumulate(vb, scaled(ga, -1.0));
  });
}

Var kl_rows(Tape& t, const Matrix& p, Var q, double floor) {
  const Matrix& qv = t.value(q);
  require_same_shape(p, qv, "kl_rows");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) s += p[i] * std::log(p[i] / std::max(qv[i], floor));
  }
  return t.record(Matrix(1, 1, s), {q}, [p, floor](Tape& tp, std::size_t self) {
    const double g = tp.upstream(self)[0];
    const Var vq = tp.input(self, 0);
    const Matrix& qv2 = tp.value(vq);
    Matrix gq(qv2.rows(), qv2.cols());
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i] > 0.0 && qv2[i] > floor) gq[i] = -g * p[i] / qv2[i];
    }
    tp.accumulate(vq, gq);
  });
}

Var l2_normalize_rows(Tape& t, Var y, double eps) {
  const Matrix& x = t.value(y);
  Matrix out(x.rows(), x.cols());
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double n2 = 0.0;
    for (double v : x.row(i)) n2 += v * v;
    norms[i] = std::max(std::sqrt(n2), eps);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / norms[i];
  }
  return t.record(std::move(out), {y}, [norms = std::move(norms)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    const Matrix& z = tp.value(Var{self});
    Matrix gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += z(i, j) * g(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) = (g(i, j) - z(i, j) * dot) / norms[i];
    }
    tp.accumulate(tp.input(self, 0), gx);
  });
}

Var ternary_weight(Tape& t, Var w, double lambda, std::optional<double> gamma) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("ternary_weight: lambda outside [0, 1]");
  const Matrix& wv = t.value(w);
  if (wv.empty()) throw std::invalid_argument("ternary_weight: empty weight");
  double g = 0.0;
  if (gamma) {
    g = *gamma;
  } else {
    for (double v : wv.values()) g += std::abs(v);
    g /= static_cast<double>(wv.size());
  }
  const bool surrogate = t.quant_forward() == QuantForward::kSurrogate;
  const double denom = g + quant::kTernaryEps;
  Matrix out(wv.rows(), wv.cols());
  for (std::size_t i = 0; i < wv.size(); ++i) {
    const double c = std::clamp(wv[i] / denom, -1.0, 1.0);
    const double q = g * (surrogate ? c : std::round(c));
    out[i] = (1.0 - lambda) * wv[i] + lambda * q;
  }
  return t.record(std::move(out), {w}, [lambda, g](Tape& tp, std::size_t self) {
    const Var vw = tp.input(self, 0);
    const Matrix& up = tp.upstream(self);
    const Matrix& wv2 = tp.value(vw);
    Matrix gw(up.rows(), up.cols());
    for (std::size_t i = 0; i < up.size(); ++i) {
      const double mask = std::abs(wv2[i]) <= g ? 1.0 : 0.0;
      gw[i] = (1.0 - lambda) * up[i] + lambda * mask * up[i];
    }
    tp.accumulate(vw, gw);
  });
}

Var act_fake_quant(Tape& t, Var x, double lambda, int bits) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("act_fake_quant: lambda outside [0, 1]");
  const Matrix& xv = t.value(x);
  Matrix out = xv;
  if (t.quant_forward() == QuantForward::kQuantized && lambda > 0.0) {
    const Matrix q = quant::act_dequantize(quant::act_quantize(xv, bits));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - lambda) * xv[i] + lambda * q[i];
  }
  return t.record(std::move(out), {x}, [](Tape& tp, std::size_t self) {
    tp.accumulate(tp.input(self, 0), tp.upstream(self));
  });
}

Var sign_ste(Tape& t, Var y) {
  Matrix out = t.value(y);
  if (t.quant_forward() == QuantForward::kQuantized) {
    for (double& v : out.values()) v = v > 0.0 ? 1.0 : -1.0;
  }
  return t.record(std::move(out), {y}, [](Tape& tp, std::size_t self) {
    tp.accumulate(tp.input(self, 0), tp.upstream(self));
  });
}

}  // namespace tetra::ad
