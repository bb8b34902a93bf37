#include "dragtraffic/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dragtraffic/error.hpp"

namespace dragtraffic::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MutMap as_mat(Tensor& t) {
  return MutMap(t.raw(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch " + dims(a) + " vs " + dims(b));
}

template <typename F>
Var unary(Graph& g, Var x, F&& f, std::function<void(Graph&, const Tensor&, const Tensor&, Tensor&)> deriv) {
  const Tensor& xv = g.value(x);
  Tensor out(std::vector<std::size_t>{xv.rows(), xv.cols()});
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor saved_out = g.requires_grad(x) ? out : Tensor();
  return g.record(std::move(out), {x},
                  [x, saved_out = std::move(saved_out), deriv = std::move(deriv)](Graph& gr, const Tensor& dy) {
                    Tensor dx(std::vector<std::size_t>{dy.rows(), dy.cols()});
                    deriv(gr, saved_out, dy, dx);
                    gr.accumulate(x, dx);
                  });
}

}  // namespace

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& av = g.value(a);
  const Tensor& bv = g.value(b);
  if (av.cols() != bv.rows()) throw ShapeError("matmul: " + dims(av) + " · " + dims(bv));
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    if (gr.requires_grad(a)) {
      const Tensor& bv = gr.value(b);
      Tensor da = Tensor::matrix(dy.rows(), bv.rows());
      as_mat(da).noalias() = as_mat(dy) * as_mat(bv).transpose();
      gr.accumulate(a, da);
    }
    if (gr.requires_grad(b)) {
      const Tensor& av = gr.value(a);
      Tensor db = Tensor::matrix(av.cols(), dy.cols());
      as_mat(db).noalias() = as_mat(av).transpose() * as_mat(dy);
      gr.accumulate(b, db);
    }
  });
}

Var dense(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = g.value(x);
  const Tensor& wv = g.value(w);
  const Tensor& bv = g.value(b);
  if (xv.cols() != wv.rows()) throw ShapeError("dense: input " + dims(xv) + " vs weight " + dims(wv));
  if (bv.rows() != 1 || bv.cols() != wv.cols()) throw ShapeError("dense: bias " + dims(bv) + " vs weight " + dims(wv));
  Tensor out = Tensor::matrix(xv.rows(), wv.cols());
  auto o = as_mat(out);
  o.noalias() = as_mat(xv) * as_mat(wv);
  o.rowwise() += as_mat(bv).row(0);
  return g.record(std::move(out), {x, w, b}, [x, w, b](Graph& gr, const Tensor& dy) {
    const auto dym = as_mat(dy);
    if (gr.requires_grad(x)) {
      const Tensor& wv = gr.value(w);
      Tensor dx = Tensor::matrix(dy.rows(), wv.rows());
      as_mat(dx).noalias() = dym * as_mat(wv).transpose();
      gr.accumulate(x, dx);
    }
    if (gr.requires_grad(w)) {
      const Tensor& xv = gr.value(x);
      Tensor dw = Tensor::matrix(xv.cols(), dy.cols());
      as_mat(dw).noalias() = as_mat(xv).transpose() * dym;
      gr.accumulate(w, dw);
    }
    if (gr.requires_grad(b)) {
      Tensor db = Tensor::matrix(1, dy.cols());
      as_mat(db).row(0) = dym.colwise().sum();
      gr.accumulate(b, db);
    }
  });
}

Var add(Graph& g, Var a, Var b) {
  require_same(g.value(a), g.value(b), "add");
  Tensor out = g.value(a);
  as_mat(out) += as_mat(g.value(b));
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    gr.accumulate(a, dy);
    gr.accumulate(b, dy);
  });
}

Var sub(Graph& g, Var a, Var b) {
  require_same(g.value(a), g.value(b), "sub");
  Tensor out = g.value(a);
  as_mat(out) -= as_mat(g.value(b));
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    gr.accumulate(a, dy);
    if (gr.requires_grad(b)) {
      Tensor neg = dy;
      as_mat(neg) *= -1.0;
      gr.accumulate(b, neg);
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  require_same(g.value(a), g.value(b), "mul");
  Tensor out = g.value(a);
  as_mat(out).array() *= as_mat(g.value(b)).array();
  return g.record(std::move(out), {a, b}, [a, b](Graph& gr, const Tensor& dy) {
    if (gr.requires_grad(a)) {
      Tensor da = dy;
      as_mat(da).array() *= as_mat(gr.value(b)).array();
      gr.accumulate(a, da);
    }
    if (gr.requires_grad(b)) {
      Tensor db = dy;
      as_mat(db).array() *= as_mat(gr.value(a)).array();
      gr.accumulate(b, db);
    }
  });
}

Var add_row(Graph& g, Var a, Var row) {
  const Tensor& av = g.value(a);
  const Tensor& rv = g.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) throw ShapeError("add_row: " + dims(av) + " + " + dims(rv));
  Tensor out = av;
  as_mat(out).rowwise() += as_mat(rv).row(0);
  return g.record(std::move(out), {a, row}, [a, row](Graph& gr, const Tensor& dy) {
    gr.accumulate(a, dy);
    if (gr.requires_grad(row)) {
      Tensor dr = Tensor::matrix(1, dy.cols());
      as_mat(dr).row(0) = as_mat(dy).colwise().sum();
      gr.accumulate(row, dr);
    }
  });
}

Var scale(Graph& g, Var a, double s) {
  Tensor out = g.value(a);
  as_mat(out) *= s;
  return g.record(std::move(out), {a}, [a, s](Graph& gr, const Tensor& dy) {
    Tensor da = dy;
    as_mat(da) *= s;
    gr.accumulate(a, da);
  });
}

Var relu(Graph& g, Var x) {
  return unary(
      g, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](Graph&, const Tensor& y, const Tensor& dy, Tensor& dx) {
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
      });
}

Var square(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out = xv;
  as_mat(out).array() *= as_mat(xv).array();
  return g.record(std::move(out), {x}, [x](Graph& gr, const Tensor& dy) {
    Tensor dx = dy;
    as_mat(dx).array() *= 2.0 * as_mat(gr.value(x)).array();
    gr.accumulate(x, dx);
  });
}

Var sqrt(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] < 0.0) throw NumericError("sqrt of negative value");
  }
  return unary(
      g, x, [](double v) { return std::sqrt(v); },
      [](Graph&, const Tensor& y, const Tensor& dy, Tensor& dx) {
        for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] / (2.0 * y[i]) : 0.0;
      });
}

Var layernorm(Graph& g, Var x, double eps) {
  const Tensor& xv = g.value(x);
  const std::size_t n = xv.rows();
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(n, c);
  std::vector<double> inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv(r, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv(r, j) - mu) * (xv(r, j) - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) out(r, j) = (xv(r, j) - mu) * inv_std[r];
  }
  Tensor y = g.requires_grad(x) ? out : Tensor();
  return g.record(std::move(out), {x}, [x, y = std::move(y), inv_std = std::move(inv_std)](Graph& gr, const Tensor& dy) {
    const std::size_t n = dy.rows();
    const std::size_t c = dy.cols();
    Tensor dx = Tensor::matrix(n, c);
    for (std::size_t r = 0; r < n; ++r) {
      double mean_dy = 0.0;
      double mean_dy_y = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        mean_dy += dy(r, j);
        mean_dy_y += dy(r, j) * y(r, j);
      }
      mean_dy /= static_cast<double>(c);
      mean_dy_y /= static_cast<double>(c);
      for (std::size_t j = 0; j < c; ++j) dx(r, j) = inv_std[r] * (dy(r, j) - mean_dy - y(r, j) * mean_dy_y);
    }
    gr.accumulate(x, dx);
  });
}

Var softmax(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out = Tensor::matrix(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto row = xv.row_view(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) z += std::exp(row[j] - m);
    for (std::size_t j = 0; j < xv.cols(); ++j) out(r, j) = std::exp(row[j] - m) / z;
  }
  Tensor y = g.requires_grad(x) ? out : Tensor();
  return g.record(std::move(out), {x}, [x, y = std::move(y)](Graph& gr, const Tensor& dy) {
    Tensor dx = Tensor::matrix(dy.rows(), dy.cols());
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < dy.cols(); ++j) dot += dy(r, j) * y(r, j);
      for (std::size_t j = 0; j < dy.cols(); ++j) dx(r, j) = y(r, j) * (dy(r, j) - dot);
    }
    gr.accumulate(x, dx);
  });
}

Var log_softmax(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out = Tensor::matrix(xv.rows(), xv.cols());
  Tensor probs = Tensor::matrix(xv.rows(), xv.cols());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto row = xv.row_view(r);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < xv.cols(); ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < xv.cols(); ++j) {
      out(r, j) = row[j] - lse;
      probs(r, j) = std::exp(out(r, j));
    }
  }
  return g.record(std::move(out), {x}, [x, probs = std::move(probs)](Graph& gr, const Tensor& dy) {
    Tensor dx = Tensor::matrix(dy.rows(), dy.cols());
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < dy.cols(); ++j) total += dy(r, j);
      for (std::size_t j = 0; j < dy.cols(); ++j) dx(r, j) = dy(r, j) - probs(r, j) * total;
    }
    gr.accumulate(x, dx);
  });
}

Var concat(Graph& g, std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const std::size_t n = g.value(xs[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var v : xs) {
    const Tensor& t = g.value(v);
    if (t.rows() != n) throw ShapeError("concat: row mismatch " + dims(t) + " vs " + std::to_string(n) + " rows");
    widths.push_back(t.cols());
    total += t.cols();
  }
  Tensor out = Tensor::matrix(n, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    as_mat(out).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(widths[k])) =
        as_mat(g.value(xs[k]));
    offset += widths[k];
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return g.record(std::move(out), inputs, [inputs, widths](Graph& gr, const Tensor& dy) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (gr.requires_grad(inputs[k])) {
        Tensor part = Tensor::matrix(dy.rows(), widths[k]);
        as_mat(part) = as_mat(dy).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(widths[k]));
        gr.accumulate(inputs[k], part);
      }
      offset += widths[k];
    }
  });
}

Var slice_cols(Graph& g, Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = g.value(x);
  if (begin + count > xv.cols()) throw ShapeError("slice_cols: range exceeds " + dims(xv));
  Tensor out = Tensor::matrix(xv.rows(), count);
  as_mat(out) = as_mat(xv).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  const std::size_t width = xv.cols();
  return g.record(std::move(out), {x}, [x, begin, count, width](Graph& gr, const Tensor& dy) {
    Tensor dx = Tensor::matrix(dy.rows(), width);
    as_mat(dx).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) = as_mat(dy);
    gr.accumulate(x, dx);
  });
}

Var reshape(Graph& g, Var x, std::size_t rows, std::size_t cols) {
  const Tensor& xv = g.value(x);
  if (rows * cols != xv.size()) throw ShapeError("reshape: " + dims(xv) + " to " + std::to_string(rows) + "x" + std::to_string(cols));
  Tensor out = xv.reshaped({rows, cols});
  return g.record(std::move(out), {x}, [x](Graph& gr, const Tensor& dy) { gr.accumulate(x, dy.raw(), dy.size()); });
}

Var repeat_rows(Graph& g, Var x, std::size_t times) {
  const Tensor& xv = g.value(x);
  const std::size_t n = xv.rows();
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(n * times, c);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < times; ++k) {
      std::copy_n(xv.raw() + r * c, c, out.raw() + (r * times + k) * c);
    }
  }
  return g.record(std::move(out), {x}, [x, n, c, times](Graph& gr, const Tensor& dy) {
    Tensor dx = Tensor::matrix(n, c);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t k = 0; k < times; ++k) {
        const double* src = dy.raw() + (r * times + k) * c;
        for (std::size_t j = 0; j < c; ++j) dx(r, j) += src[j];
      }
    }
    gr.accumulate(x, dx);
  });
}

Var gather_rows(Graph& g, Var x, std::vector<std::size_t> rows) {
  const Tensor& xv = g.value(x);
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(rows.size(), c);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.raw() + rows[i] * c, c, out.raw() + i * c);
  }
  const std::size_t n = xv.rows();
  return g.record(std::move(out), {x}, [x, rows = std::move(rows), n, c](Graph& gr, const Tensor& dy) {
    Tensor dx = Tensor::matrix(n, c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < c; ++j) dx(rows[i], j) += dy(i, j);
    }
    gr.accumulate(x, dx);
  });
}

Var pick(Graph& g, Var x, std::vector<std::size_t> cols) {
  const Tensor& xv = g.value(x);
  if (cols.size() != xv.rows()) throw ShapeError("pick: need one column index per row");
  Tensor out = Tensor::matrix(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    if (cols[r] >= xv.cols()) throw ShapeError("pick: column index out of range");
    out(r, 0) = xv(r, cols[r]);
  }
  const std::size_t n = xv.rows();
  const std::size_t c = xv.cols();
  return g.record(std::move(out), {x}, [x, cols = std::move(cols), n, c](Graph& gr, const Tensor& dy) {
    Tensor dx = Tensor::matrix(n, c);
    for (std::size_t r = 0; r < n; ++r) dx(r, cols[r]) = dy(r, 0);
    gr.accumulate(x, dx);
  });
}

Var max_pool_over_set(Graph& g, Var x, std::span<const std::uint8_t> mask, std::size_t set_size) {
  const Tensor& xv = g.value(x);
  if (set_size == 0 || xv.rows() % set_size != 0) throw ShapeError("max_pool_over_set: rows not divisible by set size");
  if (mask.size() != xv.rows()) throw ShapeError("max_pool_over_set: mask length mismatch");
  const std::size_t sets = xv.rows() / set_size;
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(sets, c);
  std::vector<std::size_t> arg(sets * c);
  for (std::size_t s = 0; s < sets; ++s) {
    bool any = false;
    for (std::size_t e = 0; e < set_size; ++e) {
      const std::size_t r = s * set_size + e;
      if (!mask[r]) continue;
      for (std::size_t j = 0; j < c; ++j) {
        if (!any || xv(r, j) > out(s, j)) {
          out(s, j) = xv(r, j);
          arg[s * c + j] = r;
        }
      }
      any = true;
    }
    if (!any) throw ValidationError("max_pool_over_set: set " + std::to_string(s) + " has no unmasked elements");
  }
  const std::size_t n = xv.rows();
  return g.record(std::move(out), {x}, [x, arg = std::move(arg), n, c](Graph& gr, const Tensor& dy) {
    Tensor dx = Tensor::matrix(n, c);
    for (std::size_t s = 0; s < dy.rows(); ++s) {
      for (std::size_t j = 0; j < c; ++j) dx(arg[s * c + j], j) += dy(s, j);
    }
    gr.accumulate(x, dx);
  });
}

Var cumsum_steps(Graph& g, Var x, std::size_t channels) {
  const Tensor& xv = g.value(x);
  if (channels == 0 || xv.cols() % channels != 0) throw ShapeError("cumsum_steps: width not divisible by channels");
  Tensor out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t j = channels; j < out.cols(); ++j) out(r, j) += out(r, j - channels);
  }
  return g.record(std::move(out), {x}, [x, channels](Graph& gr, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t r = 0; r < dx.rows(); ++r) {
      for (std::size_t j = dx.cols() - channels; j-- > 0;) dx(r, j) += dx(r, j + channels);
    }
    gr.accumulate(x, dx);
  });
}

Var sum(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  const double total = as_mat(xv).sum();
  return g.record(Tensor::scalar(total), {x}, [x](Graph& gr, const Tensor& dy) {
    const Tensor& xv = gr.value(x);
    gr.accumulate(x, Tensor(std::vector<std::size_t>{xv.rows(), xv.cols()}, dy[0]));
  });
}

Var mean(Graph& g, Var x) {
  const std::size_t n = g.value(x).size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(g, sum(g, x), 1.0 / static_cast<double>(n));
}

Var row_sum(Graph& g, Var x) {
  const Tensor& xv = g.value(x);
  Tensor out = Tensor::matrix(xv.rows(), 1);
  as_mat(out).col(0) = as_mat(xv).rowwise().sum();
  const std::size_t c = xv.cols();
  return g.record(std::move(out), {x}, [x, c](Graph& gr, const Tensor& dy) {
    Tensor dx = Tensor::matrix(dy.rows(), c);
    for (std::size_t r = 0; r < dy.rows(); ++r) {
      for (std::size_t j = 0; j < c; ++j) dx(r, j) = dy(r, 0);
    }
    gr.accumulate(x, dx);
  });
}

}  // namespace dragtraffic::nn
