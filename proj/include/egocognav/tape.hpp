#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "egocognav/errors.hpp"
#include "egocognav/rng.hpp"
#include "egocognav/tensor.hpp"

namespace egocognav {

// A named trainable tensor plus its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool decay = true;  // weight decay applies; off for biases and norm gains

  void zero_grad() {
    for (size_t i = 0; i < grad.size(); ++i) grad[i] = 0.0;
  }
};

// Owns parameters in registration order; the order defines the checkpoint
// layout. Uses a deque so references stay valid as parameters are added.
class ParamStore {
 public:
  // Uniform init in (-1/sqrt(fan_in), +1/sqrt(fan_in)).
  Parameter& create(const std::string& name, std::vector<size_t> shape,
                    size_t fan_in, Rng& rng, bool decay = true) {
    Parameter& p = emplace(name, std::move(shape), decay);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (size_t i = 0; i < p.value.size(); ++i) {
      p.value[i] = rng.uniform(-bound, bound);
    }
    return p;
  }

  Parameter& create_const(const std::string& name, std::vector<size_t> shape,
                          double fill, bool decay = false) {
    Parameter& p = emplace(name, std::move(shape), decay);
    for (size_t i = 0; i < p.value.size(); ++i) p.value[i] = fill;
    return p;
  }

  size_t count() const { return params_.size(); }
  Parameter& at(size_t i) { return params_[i]; }
  const Parameter& at(size_t i) const { return params_[i]; }

  Parameter* find(const std::string& name) {
    for (auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

  size_t total_size() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  Parameter& emplace(const std::string& name, std::vector<size_t> shape,
                     bool decay) {
    if (find(name)) throw Error("duplicate parameter name: " + name);
    params_.emplace_back();
    Parameter& p = params_.back();
    p.name = name;
    p.value = Tensor(shape);
    p.grad = Tensor(std::move(shape));
    p.decay = decay;
    return p;
  }

  std::deque<Parameter> params_;
};

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Define-by-run compute graph with reverse-mode differentiation. Creation
// order is a topological order, so backward() walks nodes in reverse and
// visits each reachable node exactly once. Single-threaded by contract;
// run concurrent evaluations on distinct Tape instances.
class Tape {
 public:
  Var constant(Tensor t) { return push(std::move(t), {}, nullptr); }

  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  Var param(Parameter& p) {
    Var v = push(p.value, {}, nullptr);
    param_leaves_.emplace_back(v.id, &p);
    return v;
  }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  const Tensor& grad(Var v) const { return nodes_[check(v)].grad; }

  size_t node_count() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    param_leaves_.clear();
  }

  // ---- elementwise and broadcasting ----

  Var add(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require(x.same_shape(y), "add", x, y);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return push(std::move(out), {a, b}, [](Tape& t, const Ctx& c) {
      t.axpy(c.parents[0], 1.0, t.nodes_[c.id].grad);
      t.axpy(c.parents[1], 1.0, t.nodes_[c.id].grad);
    });
  }

  Var sub(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require(x.same_shape(y), "sub", x, y);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return push(std::move(out), {a, b}, [](Tape& t, const Ctx& c) {
      t.axpy(c.parents[0], 1.0, t.nodes_[c.id].grad);
      t.axpy(c.parents[1], -1.0, t.nodes_[c.id].grad);
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require(x.same_shape(y), "mul", x, y);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return push(std::move(out), {a, b}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      Tensor& da = t.nodes_[c.parents[0]].grad;
      Tensor& db = t.nodes_[c.parents[1]].grad;
      const Tensor& x = t.nodes_[c.parents[0]].value;
      const Tensor& y = t.nodes_[c.parents[1]].value;
      for (size_t i = 0; i < g.size(); ++i) {
        da[i] += g[i] * y[i];
        db[i] += g[i] * x[i];
      }
    });
  }

  // a*x + b with constant coefficients.
  Var affine(Var v, double a, double b) {
    Tensor out = value(v);
    for (size_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + b;
    return push(std::move(out), {v}, [a](Tape& t, const Ctx& c) {
      t.axpy(c.parents[0], a, t.nodes_[c.id].grad);
    });
  }

  Var scale(Var v, double a) { return affine(v, a, 0.0); }

  // (m,n) + (1,n) row broadcast (bias add).
  Var add_row(Var x, Var b) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(b);
    require(bv.rows() == 1 && bv.cols() == xv.cols(), "add_row", xv, bv);
    Tensor out = xv;
    const size_t n = out.cols();
    for (size_t r = 0; r < out.rows(); ++r) {
      for (size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
    }
    return push(std::move(out), {x, b}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      t.axpy(c.parents[0], 1.0, g);
      Tensor& db = t.nodes_[c.parents[1]].grad;
      const size_t n = g.cols();
      for (size_t r = 0; r < g.rows(); ++r) {
        for (size_t j = 0; j < n; ++j) db[j] += g[r * n + j];
      }
    });
  }

  // (m,n) * (1,n) row broadcast (e.g. layer-norm gain).
  Var mul_row(Var x, Var s) {
    const Tensor& xv = value(x);
    const Tensor& sv = value(s);
    require(sv.rows() == 1 && sv.cols() == xv.cols(), "mul_row", xv, sv);
    Tensor out = xv;
    const size_t n = out.cols();
    for (size_t r = 0; r < out.rows(); ++r) {
      for (size_t j = 0; j < n; ++j) out[r * n + j] *= sv[j];
    }
    return push(std::move(out), {x, s}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& xv = t.nodes_[c.parents[0]].value;
      const Tensor& sv = t.nodes_[c.parents[1]].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      Tensor& ds = t.nodes_[c.parents[1]].grad;
      const size_t n = g.cols();
      for (size_t r = 0; r < g.rows(); ++r) {
        for (size_t j = 0; j < n; ++j) {
          dx[r * n + j] += g[r * n + j] * sv[j];
          ds[j] += g[r * n + j] * xv[r * n + j];
        }
      }
    });
  }

  // x * s where s is a scalar node, broadcast over x.
  Var smul(Var x, Var s) {
    const Tensor& xv = value(x);
    const double sv = value(s).scalar_value();
    Tensor out = xv;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= sv;
    return push(std::move(out), {x, s}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& xv = t.nodes_[c.parents[0]].value;
      const double sv = t.nodes_[c.parents[1]].value.scalar_value();
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      Tensor& ds = t.nodes_[c.parents[1]].grad;
      double acc = 0.0;
      for (size_t i = 0; i < g.size(); ++i) {
        dx[i] += g[i] * sv;
        acc += g[i] * xv[i];
      }
      ds[0] += acc;
    });
  }

  // x / s with a scalar node divisor.
  Var sdiv(Var x, Var s) {
    const Tensor& xv = value(x);
    const double sv = value(s).scalar_value();
    Tensor out = xv;
    for (size_t i = 0; i < out.size(); ++i) out[i] /= sv;
    return push(std::move(out), {x, s}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& xv = t.nodes_[c.parents[0]].value;
      const double sv = t.nodes_[c.parents[1]].value.scalar_value();
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      Tensor& ds = t.nodes_[c.parents[1]].grad;
      double acc = 0.0;
      for (size_t i = 0; i < g.size(); ++i) {
        dx[i] += g[i] / sv;
        acc += g[i] * xv[i];
      }
      ds[0] -= acc / (sv * sv);
    });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    if (x.cols() != y.rows()) {
      throw ShapeMismatch("matmul: " + x.shape_str() + " x " + y.shape_str());
    }
    Tensor out = Tensor::zeros(x.rows(), y.cols());
    matmul_accumulate(x.data(), y.data(), out.data(), x.rows(), x.cols(),
                      y.cols());
    return push(std::move(out), {a, b}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& x = t.nodes_[c.parents[0]].value;
      const Tensor& y = t.nodes_[c.parents[1]].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      Tensor& dy = t.nodes_[c.parents[1]].grad;
      // dX += G * Y^T ; dY += X^T * G
      matmul_a_bt_accumulate(g.data(), y.data(), dx.data(), g.rows(), g.cols(),
                             y.rows());
      matmul_at_b_accumulate(x.data(), g.data(), dy.data(), x.rows(), x.cols(),
                             g.cols());
    });
  }

  Var transpose(Var a) {
    const Tensor& x = value(a);
    Tensor out = Tensor::zeros(x.cols(), x.rows());
    for (size_t r = 0; r < x.rows(); ++r) {
      for (size_t j = 0; j < x.cols(); ++j) out.at(j, r) = x.at(r, j);
    }
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t r = 0; r < g.rows(); ++r) {
        for (size_t j = 0; j < g.cols(); ++j) dx.at(j, r) += g.at(r, j);
      }
    });
  }

  // ---- structure ----

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
    const size_t m = value(parts[0]).rows();
    size_t total = 0;
    for (Var p : parts) {
      if (value(p).rows() != m) {
        throw ShapeMismatch("concat_cols: row count mismatch");
      }
      total += value(p).cols();
    }
    Tensor out = Tensor::zeros(m, total);
    size_t off = 0;
    for (Var p : parts) {
      const Tensor& v = value(p);
      for (size_t r = 0; r < m; ++r) {
        for (size_t j = 0; j < v.cols(); ++j) out.at(r, off + j) = v.at(r, j);
      }
      off += v.cols();
    }
    return push(std::move(out), parts, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      size_t off = 0;
      for (int pid : c.parents) {
        Tensor& dp = t.nodes_[pid].grad;
        for (size_t r = 0; r < dp.rows(); ++r) {
          for (size_t j = 0; j < dp.cols(); ++j) dp.at(r, j) += g.at(r, off + j);
        }
        off += dp.cols();
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
    const size_t n = value(parts[0]).cols();
    size_t total = 0;
    for (Var p : parts) {
      if (value(p).cols() != n) {
        throw ShapeMismatch("concat_rows: column count mismatch");
      }
      total += value(p).rows();
    }
    Tensor out = Tensor::zeros(total, n);
    size_t off = 0;
    for (Var p : parts) {
      const Tensor& v = value(p);
      for (size_t r = 0; r < v.rows(); ++r) {
        for (size_t j = 0; j < n; ++j) out.at(off + r, j) = v.at(r, j);
      }
      off += v.rows();
    }
    return push(std::move(out), parts, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      size_t off = 0;
      for (int pid : c.parents) {
        Tensor& dp = t.nodes_[pid].grad;
        for (size_t r = 0; r < dp.rows(); ++r) {
          for (size_t j = 0; j < dp.cols(); ++j) dp.at(r, j) += g.at(off + r, j);
        }
        off += dp.rows();
      }
    });
  }

  Var slice_cols(Var a, size_t start, size_t len) {
    const Tensor& x = value(a);
    if (start + len > x.cols()) {
      throw ShapeMismatch("slice_cols: out of range on " + x.shape_str());
    }
    Tensor out = Tensor::zeros(x.rows(), len);
    for (size_t r = 0; r < x.rows(); ++r) {
      for (size_t j = 0; j < len; ++j) out.at(r, j) = x.at(r, start + j);
    }
    return push(std::move(out), {a}, [start](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t r = 0; r < g.rows(); ++r) {
        for (size_t j = 0; j < g.cols(); ++j) dx.at(r, start + j) += g.at(r, j);
      }
    });
  }

  Var slice_rows(Var a, size_t start, size_t len) {
    const Tensor& x = value(a);
    if (start + len > x.rows()) {
      throw ShapeMismatch("slice_rows: out of range on " + x.shape_str());
    }
    const size_t n = x.cols();
    Tensor out = Tensor::zeros(len, n);
    for (size_t r = 0; r < len; ++r) {
      for (size_t j = 0; j < n; ++j) out.at(r, j) = x.at(start + r, j);
    }
    return push(std::move(out), {a}, [start](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t r = 0; r < g.rows(); ++r) {
        for (size_t j = 0; j < g.cols(); ++j) dx.at(start + r, j) += g.at(r, j);
      }
    });
  }

  // ---- reductions ----

  Var sum_all(Var a) {
    const Tensor& x = value(a);
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i];
    return push(Tensor::scalar(s), {a}, [](Tape& t, const Ctx& c) {
      const double g = t.nodes_[c.id].grad[0];
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t i = 0; i < dx.size(); ++i) dx[i] += g;
    });
  }

  Var mean_all(Var a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(value(a).size()));
  }

  // Temporal mean pool: (T,n) -> (1,n).
  Var mean_rows(Var a) {
    const Tensor& x = value(a);
    const size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(1, n);
    for (size_t r = 0; r < m; ++r) {
      for (size_t j = 0; j < n; ++j) out[j] += x.at(r, j);
    }
    for (size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(m);
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      const size_t m = dx.rows(), n = dx.cols();
      const double inv = 1.0 / static_cast<double>(m);
      for (size_t r = 0; r < m; ++r) {
        for (size_t j = 0; j < n; ++j) dx.at(r, j) += g[j] * inv;
      }
    });
  }

  // ---- nonlinearities ----

  Var softmax_rows(Var a) {
    const Tensor& x = value(a);
    Tensor out = x;
    const size_t n = out.cols();
    for (size_t r = 0; r < out.rows(); ++r) {
      double* row = out.data() + r * n;
      double mx = row[0];
      for (size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      for (size_t j = 0; j < n; ++j) row[j] /= sum;
    }
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& y = t.nodes_[c.id].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      const size_t n = y.cols();
      for (size_t r = 0; r < y.rows(); ++r) {
        double dot = 0.0;
        for (size_t j = 0; j < n; ++j) dot += g.at(r, j) * y.at(r, j);
        for (size_t j = 0; j < n; ++j) {
          dx.at(r, j) += (g.at(r, j) - dot) * y.at(r, j);
        }
      }
    });
  }

  // Row-wise normalization to zero mean and unit variance (no affine part).
  Var layer_norm_rows(Var a) {
    constexpr double kEps = 1e-5;
    const Tensor& x = value(a);
    const size_t m = x.rows(), n = x.cols();
    Tensor out = Tensor::zeros(m, n);
    for (size_t r = 0; r < m; ++r) {
      double mean = 0.0;
      for (size_t j = 0; j < n; ++j) mean += x.at(r, j);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (size_t j = 0; j < n; ++j) {
        const double d = x.at(r, j) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + kEps);
      for (size_t j = 0; j < n; ++j) out.at(r, j) = (x.at(r, j) - mean) * inv;
    }
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& x = t.nodes_[c.parents[0]].value;
      const Tensor& y = t.nodes_[c.id].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      const size_t m = x.rows(), n = x.cols();
      for (size_t r = 0; r < m; ++r) {
        double mean = 0.0;
        for (size_t j = 0; j < n; ++j) mean += x.at(r, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) {
          const double d = x.at(r, j) - mean;
          var += d * d;
        }
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        double gmean = 0.0, gymean = 0.0;
        for (size_t j = 0; j < n; ++j) {
          gmean += g.at(r, j);
          gymean += g.at(r, j) * y.at(r, j);
        }
        gmean /= static_cast<double>(n);
        gymean /= static_cast<double>(n);
        for (size_t j = 0; j < n; ++j) {
          dx.at(r, j) += inv * (g.at(r, j) - gmean - y.at(r, j) * gymean);
        }
      }
    });
  }

  Var gelu(Var a) {
    const Tensor& x = value(a);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = 0.5 * out[i] * (1.0 + std::erf(out[i] * M_SQRT1_2));
    }
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& x = t.nodes_[c.parents[0]].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      constexpr double kInvSqrt2Pi = 0.3989422804014327;
      for (size_t i = 0; i < g.size(); ++i) {
        const double phi = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
        dx[i] += g[i] * (phi + x[i] * pdf);
      }
    });
  }

  Var relu(Var a) {
    const Tensor& x = value(a);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& x = t.nodes_[c.parents[0]].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) dx[i] += g[i];
      }
    });
  }

  Var sigmoid(Var a) {
    const Tensor& x = value(a);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) {
      out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    }
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& y = t.nodes_[c.id].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        dx[i] += g[i] * y[i] * (1.0 - y[i]);
      }
    });
  }

  Var abs(Var a) {
    const Tensor& x = value(a);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& x = t.nodes_[c.parents[0]].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) {
          dx[i] += g[i];
        } else if (x[i] < 0.0) {
          dx[i] -= g[i];
        }
      }
    });
  }

  Var square(Var a) {
    const Tensor& x = value(a);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& x = t.nodes_[c.parents[0]].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t i = 0; i < g.size(); ++i) dx[i] += 2.0 * g[i] * x[i];
    });
  }

  // sqrt(x + eps); eps keeps the derivative finite near zero.
  Var sqrt(Var a, double eps = 0.0) {
    const Tensor& x = value(a);
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i] + eps);
    return push(std::move(out), {a}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& y = t.nodes_[c.id].value;
      Tensor& dx = t.nodes_[c.parents[0]].grad;
      for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * 0.5 / y[i];
    });
  }

  // Cross product of two (1,3) rows.
  Var cross3(Var a, Var b) {
    const Tensor& u = value(a);
    const Tensor& v = value(b);
    if (u.size() != 3 || v.size() != 3) {
      throw ShapeMismatch("cross3 expects 3-vectors");
    }
    Tensor out({1, 3});
    out[0] = u[1] * v[2] - u[2] * v[1];
    out[1] = u[2] * v[0] - u[0] * v[2];
    out[2] = u[0] * v[1] - u[1] * v[0];
    return push(std::move(out), {a, b}, [](Tape& t, const Ctx& c) {
      const Tensor& g = t.nodes_[c.id].grad;
      const Tensor& u = t.nodes_[c.parents[0]].value;
      const Tensor& v = t.nodes_[c.parents[1]].value;
      Tensor& du = t.nodes_[c.parents[0]].grad;
      Tensor& dv = t.nodes_[c.parents[1]].grad;
      // d/du (g . u x v) = v x g ; d/dv = g x u
      du[0] += v[1] * g[2] - v[2] * g[1];
      du[1] += v[2] * g[0] - v[0] * g[2];
      du[2] += v[0] * g[1] - v[1] * g[0];
      dv[0] += g[1] * u[2] - g[2] * u[1];
      dv[1] += g[2] * u[0] - g[0] * u[2];
      dv[2] += g[0] * u[1] - g[1] * u[0];
    });
  }

  // Per-element binary cross-entropy with logits against constant targets,
  // computed in the numerically stable form.
  Var bce_with_logits(Var logits, const Tensor& targets) {
    const Tensor& x = value(logits);
    if (!x.same_shape(targets)) {
      throw ShapeMismatch("bce_with_logits: target shape " +
                          targets.shape_str() + " vs " + x.shape_str());
    }
    Tensor out = x;
    for (size_t i = 0; i < out.size(); ++i) {
      const double v = x[i];
      out[i] = std::max(v, 0.0) - v * targets[i] + std::log1p(std::exp(-std::fabs(v)));
    }
    Tensor t_copy = targets;
    return push(std::move(out), {logits},
                [tg = std::move(t_copy)](Tape& t, const Ctx& c) {
                  const Tensor& g = t.nodes_[c.id].grad;
                  const Tensor& x = t.nodes_[c.parents[0]].value;
                  Tensor& dx = t.nodes_[c.parents[0]].grad;
                  for (size_t i = 0; i < g.size(); ++i) {
                    const double sig = 1.0 / (1.0 + std::exp(-x[i]));
                    dx[i] += g[i] * (sig - tg[i]);
                  }
                });
  }

  // ---- backward ----

  // Reverse-mode sweep from a scalar loss. Gradients of reachable parameter
  // leaves are accumulated into Parameter::grad (caller zeroes them).
  void backward(Var loss) {
    Node& root = nodes_[check(loss)];
    if (!root.value.is_scalar()) {
      throw NotScalar("backward requires a scalar loss, got " +
                      root.value.shape_str());
    }
    // Mark ancestors of the loss so unrelated nodes are skipped.
    std::vector<char> needed(nodes_.size(), 0);
    needed[loss.id] = 1;
    for (int i = loss.id; i >= 0; --i) {
      if (!needed[i]) continue;
      for (int p : nodes_[i].parents) needed[p] = 1;
    }
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (needed[i]) {
        Node& nd = nodes_[i];
        nd.grad = Tensor(nd.value.shape());
      }
    }
    nodes_[loss.id].grad[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      if (!needed[i] || !nodes_[i].back) continue;
      Ctx c{static_cast<int>(i), nodes_[i].parents};
      nodes_[i].back(*this, c);
    }
    for (auto& [id, p] : param_leaves_) {
      if (!needed[id]) continue;  // unreached parameters keep zero gradient
      const Tensor& g = nodes_[id].grad;
      for (size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    }
  }

 private:
  struct Ctx {
    int id;
    const std::vector<int>& parents;
  };
  using BackFn = std::function<void(Tape&, const Ctx&)>;

  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackFn back;
  };

  int check(Var v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size()) {
      throw Error("invalid Var handle");
    }
    return v.id;
  }

  static void require(bool ok, const char* op, const Tensor& a,
                      const Tensor& b) {
    if (!ok) {
      throw ShapeMismatch(std::string(op) + ": " + a.shape_str() + " vs " +
                          b.shape_str());
    }
  }

  Var push(Tensor value, const std::vector<Var>& parents, BackFn back) {
    if (!value.all_finite()) {
      throw NonFinite("non-finite value produced on tape");
    }
    Node nd;
    nd.value = std::move(value);
    nd.parents.reserve(parents.size());
    for (Var p : parents) nd.parents.push_back(check(p));
    nd.back = std::move(back);
    nodes_.push_back(std::move(nd));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  void axpy(int id, double a, const Tensor& g) {
    Tensor& dst = nodes_[id].grad;
    for (size_t i = 0; i < g.size(); ++i) dst[i] += a * g[i];
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<int, Parameter*>> param_leaves_;
};

// Scaled dot-product attention: softmax(q k^T / sqrt(dk) + mask) v.
// Rows of the attention matrix sum to one.
inline Var scaled_dot_attention(Tape& t, Var q, Var k, Var v,
                                Var mask = Var{}) {
  const size_t dk = t.value(q).cols();
  if (t.value(k).cols() != dk) {
    throw ShapeMismatch("attention: q/k width mismatch");
  }
  if (t.value(k).rows() != t.value(v).rows()) {
    throw ShapeMismatch("attention: k/v length mismatch");
  }
  Var scores = t.scale(t.matmul(q, t.transpose(k)),
                       1.0 / std::sqrt(static_cast<double>(dk)));
  if (mask.valid()) scores = t.add(scores, mask);
  return t.matmul(t.softmax_rows(scores), v);
}

// Max relative error between the analytic gradient of one parameter and a
// central finite difference, over up to `max_coords` sampled coordinates.
// `loss_fn` re-evaluates the scalar loss at the parameter's current value.
inline double finite_difference_check(const std::function<double()>& loss_fn,
                                      Parameter& p, const Tensor& analytic,
                                      double eps, size_t max_coords, Rng& rng) {
  if (eps < 1e-7 || eps > 1e-3) throw OutOfRange("finite difference eps");
  std::vector<size_t> coords(p.value.size());
  for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  if (coords.size() > max_coords) {
    rng.shuffle(coords);
    coords.resize(max_coords);
  }
  double worst = 0.0;
  for (size_t j : coords) {
    const double old = p.value[j];
    p.value[j] = old + eps;
    const double fp = loss_fn();
    p.value[j] = old - eps;
    const double fm = loss_fn();
    p.value[j] = old;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err =
        std::fabs(analytic[j] - numeric) / (std::fabs(numeric) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace egocognav
