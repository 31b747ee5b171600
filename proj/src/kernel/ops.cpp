#include "mla/kernel/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mla/error.hpp"

namespace mla::kernel {

namespace {

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
}

std::string dims(const Tensor& t) { return shape_string({t.rows(), t.cols()}); }

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

void require_blocked(const Tensor& t, std::size_t block, const char* op) {
  if (block == 0 || t.rows() % block != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(t.rows()) +
                         " rows are not a multiple of block " + std::to_string(block));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  if (bv.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + dims(av) + " * " + dims(bv));
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      const double* brow = &bv(p, 0);
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      std::span<double> ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = &bv(p, 0);
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(b)) {
      std::span<double> gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av(i, p);
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  if (bv.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + dims(av) + " * " +
                         dims(bv) + "^T");
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &av(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &bv(j, 0);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out(i, j) = acc;
    }
  }
  return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (t.requires_grad(a)) {
      std::span<double> ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          const double* brow = &bv(j, 0);
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * brow[p];
        }
      }
    }
    if (t.requires_grad(b)) {
      std::span<double> gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = &av(i, 0);
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += gij * arow[p];
        }
      }
    }
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw DimensionError("add: shapes differ, " + shape_string(av.shape()) + " vs " +
                         shape_string(bv.shape()));
  }
  Tensor out = av;
  out.drop_grad();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    for (Var in : {a, b}) {
      if (!t.requires_grad(in)) continue;
      std::span<double> gi = t.grad_buffer(in);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    }
  });
}

Var add_row(Var x, Var bias) {
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (bv.size() != c) {
    throw DimensionError("add_row: bias " + shape_string(bv.shape()) + " does not match " + dims(xv));
  }
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(i, j) = xv(i, j) + bv[j];
  }
  return x.tape().record(std::move(out), {x, bias}, [x, bias, r, c](Tape& t, std::span<const double> g) {
    if (t.requires_grad(x)) {
      std::span<double> gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(bias)) {
      std::span<double> gb = t.grad_buffer(bias);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
      }
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  out.drop_grad();
  for (double& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& t, std::span<const double> g) {
    std::span<double> gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  out.drop_grad();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape().record(std::move(out), {x}, [x](Tape& t, std::span<const double> g) {
    const Tensor& xv = t.value(x);
    std::span<double> gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = x.value();
  out.drop_grad();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.tape().record(std::move(out), {x},
                         [x, mask = std::move(mask)](Tape& t, std::span<const double> g) {
                           std::span<double> gx = t.grad_buffer(x);
                           for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * mask[i];
                         });
}

Tensor softmax_rows(const Tensor& x) {
  require_finite(x, "softmax_rows");
  Tensor out({x.rows(), x.cols()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::span<const double> in = x.row(i);
    std::span<double> o = out.row(i);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - peak);
      total += o[j];
    }
    for (double& v : o) v /= total;
  }
  return out;
}

Var softmax_rows(Var x) {
  Tensor out = softmax_rows(x.value());
  const std::size_t r = out.rows(), c = out.cols();
  Tensor value = out;
  return x.tape().record(std::move(value), {x}, [x, r, c, y = std::move(out)](Tape& t, std::span<const double> g) {
    std::span<double> gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y(i, j);
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += y(i, j) * (g[i * c + j] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_same_tape(x, gain);
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gain.value().size() != c || bias.value().size() != c) {
    throw DimensionError("layer_norm: gain/bias length must equal " + std::to_string(c) + " columns");
  }
  Tensor out({r, c});
  std::vector<double> normed(r * c);
  std::vector<double> inv_std(r);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < r; ++i) {
    std::span<const double> row = xv.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      normed[i * c + j] = (row[j] - mean) * inv_std[i];
      out(i, j) = normed[i * c + j] * gv[j] + bv[j];
    }
  }
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, r, c, normed = std::move(normed), inv_std = std::move(inv_std)](
          Tape& t, std::span<const double> g) {
        const Tensor& gv = t.value(gain);
        if (t.requires_grad(gain)) {
          std::span<double> gg = t.grad_buffer(gain);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * normed[i * c + j];
          }
        }
        if (t.requires_grad(bias)) {
          std::span<double> gb = t.grad_buffer(bias);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
          }
        }
        if (t.requires_grad(x)) {
          std::span<double> gx = t.grad_buffer(x);
          const double n = static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double sum_d = 0.0, sum_dn = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[i * c + j] * gv[j];
              sum_d += d;
              sum_dn += d * normed[i * c + j];
            }
            for (std::size_t j = 0; j < c; ++j) {
              const double d = g[i * c + j] * gv[j];
              gx[i * c + j] += inv_std[i] / n * (n * d - sum_d - normed[i * c + j] * sum_dn);
            }
          }
        }
      });
}

Var select_cols(Var x, std::span<const std::size_t> columns) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  if (cols.empty()) throw DimensionError("select_cols: empty column list");
  for (std::size_t col : cols) {
    if (col >= c) throw DimensionError("select_cols: column " + std::to_string(col) + " out of range for " + dims(xv));
  }
  const std::size_t n = cols.size();
  Tensor out({r, n});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = xv(i, cols[j]);
  }
  return x.tape().record(std::move(out), {x}, [x, r, c, cols = std::move(cols)](Tape& t, std::span<const double> g) {
    std::span<double> gx = t.grad_buffer(x);
    const std::size_t n = cols.size();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < n; ++j) gx[i * c + cols[j]] += g[i * n + j];
    }
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  if (count == 0 || start + count > xv.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") exceeds " + dims(xv));
  }
  std::vector<std::size_t> cols(count);
  for (std::size_t j = 0; j < count; ++j) cols[j] = start + j;
  return select_cols(x, cols);
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (Var p : parts) {
    require_same_tape(parts[0], p);
    if (p.rows() != r) throw DimensionError("concat_cols: row counts differ");
    offsets.push_back(total);
    total += p.cols();
  }
  Tensor out({r, total});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, offsets[k] + j) = pv(i, j);
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(
      std::move(out), parts, [inputs, offsets, r, total](Tape& t, std::span<const double> g) {
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          if (!t.requires_grad(inputs[k])) continue;
          const std::size_t w = t.value(inputs[k]).cols();
          std::span<double> gp = t.grad_buffer(inputs[k]);
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + offsets[k] + j];
          }
        }
      });
}

Var interleave_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("interleave_rows: no inputs");
  const std::size_t batch = parts[0].rows(), c = parts[0].cols(), m = parts.size();
  for (Var p : parts) {
    require_same_tape(parts[0], p);
    if (p.rows() != batch || p.cols() != c) throw DimensionError("interleave_rows: part shapes differ");
  }
  Tensor out({batch * m, c});
  for (std::size_t i = 0; i < m; ++i) {
    const Tensor& pv = parts[i].value();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(&pv(b, 0), c, &out(b * m + i, 0));
    }
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [inputs, batch, c](Tape& t, std::span<const double> g) {
    const std::size_t m = inputs.size();
    for (std::size_t i = 0; i < m; ++i) {
      if (!t.requires_grad(inputs[i])) continue;
      std::span<double> gp = t.grad_buffer(inputs[i]);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < c; ++j) gp[b * c + j] += g[(b * m + i) * c + j];
      }
    }
  });
}

Var block_scores(Var q, Var k, std::size_t block, double factor) {
  require_same_tape(q, k);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  if (!qv.same_shape(kv) && !(qv.rows() == kv.rows() && qv.cols() == kv.cols())) {
    throw DimensionError("block_scores: q " + dims(qv) + " and k " + dims(kv) + " differ");
  }
  require_blocked(qv, block, "block_scores");
  const std::size_t rows = qv.rows(), w = qv.cols(), m = block;
  Tensor out({rows, m});
  for (std::size_t base = 0; base < rows; base += m) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* qi = &qv(base + i, 0);
      for (std::size_t j = 0; j < m; ++j) {
        const double* kj = &kv(base + j, 0);
        double acc = 0.0;
        for (std::size_t p = 0; p < w; ++p) acc += qi[p] * kj[p];
        out(base + i, j) = acc * factor;
      }
    }
  }
  return q.tape().record(std::move(out), {q, k}, [q, k, rows, w, m, factor](Tape& t, std::span<const double> g) {
    const Tensor& qv = t.value(q);
    const Tensor& kv = t.value(k);
    const bool want_q = t.requires_grad(q), want_k = t.requires_grad(k);
    std::span<double> gq = want_q ? t.grad_buffer(q) : std::span<double>{};
    std::span<double> gk = want_k ? t.grad_buffer(k) : std::span<double>{};
    for (std::size_t base = 0; base < rows; base += m) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double gij = g[(base + i) * m + j] * factor;
          for (std::size_t p = 0; p < w; ++p) {
            if (want_q) gq[(base + i) * w + p] += gij * kv(base + j, p);
            if (want_k) gk[(base + j) * w + p] += gij * qv(base + i, p);
          }
        }
      }
    }
  });
}

Var block_apply(Var a, Var v, std::size_t block) {
  require_same_tape(a, v);
  const Tensor& av = a.value();
  const Tensor& vv = v.value();
  const std::size_t m = block;
  if (av.cols() != m || av.rows() != vv.rows()) {
    throw DimensionError("block_apply: weights " + dims(av) + " incompatible with values " + dims(vv));
  }
  require_blocked(av, block, "block_apply");
  const std::size_t rows = av.rows(), w = vv.cols();
  Tensor out({rows, w});
  for (std::size_t base = 0; base < rows; base += m) {
    for (std::size_t i = 0; i < m; ++i) {
      double* orow = &out(base + i, 0);
      for (std::size_t j = 0; j < m; ++j) {
        const double aij = av(base + i, j);
        const double* vrow = &vv(base + j, 0);
        for (std::size_t p = 0; p < w; ++p) orow[p] += aij * vrow[p];
      }
    }
  }
  return a.tape().record(std::move(out), {a, v}, [a, v, rows, w, m](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& vv = t.value(v);
    if (t.requires_grad(a)) {
      std::span<double> ga = t.grad_buffer(a);
      for (std::size_t base = 0; base < rows; base += m) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < w; ++p) acc += g[(base + i) * w + p] * vv(base + j, p);
            ga[(base + i) * m + j] += acc;
          }
        }
      }
    }
    if (t.requires_grad(v)) {
      std::span<double> gv = t.grad_buffer(v);
      for (std::size_t base = 0; base < rows; base += m) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < m; ++j) {
            const double aij = av(base + i, j);
            for (std::size_t p = 0; p < w; ++p) gv[(base + j) * w + p] += aij * g[(base + i) * w + p];
          }
        }
      }
    }
  });
}

Var block_mean_rows(Var x, std::size_t block) {
  const Tensor& xv = x.value();
  require_blocked(xv, block, "block_mean_rows");
  const std::size_t batch = xv.rows() / block, c = xv.cols(), m = block;
  Tensor out({batch, c});
  const double inv = 1.0 / static_cast<double>(m);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < c; ++j) out(b, j) += xv(b * m + i, j);
    }
    for (std::size_t j = 0; j < c; ++j) out(b, j) *= inv;
  }
  return x.tape().record(std::move(out), {x}, [x, batch, c, m, inv](Tape& t, std::span<const double> g) {
    std::span<double> gx = t.grad_buffer(x);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[(b * m + i) * c + j] += g[b * c + j] * inv;
      }
    }
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record(Tensor::scalar(total), {x}, [x](Tape& t, std::span<const double> g) {
    std::span<double> gx = t.grad_buffer(x);
    for (double& v : gx) v += g[0];
  });
}

Var cross_entropy_soft(Var logits, const Tensor& targets) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows(), c = lv.cols();
  if (targets.rows() != n || targets.cols() != c) {
    throw DimensionError("cross_entropy_soft: logits " + dims(lv) + " vs targets " + dims(targets));
  }
  require_finite(lv, "cross_entropy_soft");
  std::vector<double> target_mass(n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (double p : targets.row(i)) {
      if (!(p >= 0.0)) throw ValidationError("cross_entropy_soft: target row " + std::to_string(i) + " has a negative or NaN entry");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ValidationError("cross_entropy_soft: target row " + std::to_string(i) +
                            " sums to " + std::to_string(total) + ", not 1");
    }
    target_mass[i] = total;
  }
  Tensor probs({n, c});
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> row = lv.row(i);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - peak);
    const double log_norm = peak + std::log(total);
    for (std::size_t j = 0; j < c; ++j) {
      const double log_p = row[j] - log_norm;
      probs(i, j) = std::exp(log_p);
      if (targets(i, j) != 0.0) loss -= targets(i, j) * log_p;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  loss *= inv_n;
  return logits.tape().record(
      Tensor::scalar(loss), {logits},
      [logits, targets, probs = std::move(probs), target_mass = std::move(target_mass), n, c,
       inv_n](Tape& t, std::span<const double> g) {
        std::span<double> gl = t.grad_buffer(logits);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            gl[i * c + j] += g[0] * inv_n * (probs(i, j) * target_mass[i] - targets(i, j));
          }
        }
      });
}

Var sum_xlogx(Var x, double floor) {
  const Tensor& xv = x.value();
  double total = 0.0;
  for (double v : xv.data()) {
    const double a = std::max(v, floor);
    total += a * std::log(a);
  }
  return x.tape().record(Tensor::scalar(total), {x}, [x, floor](Tape& t, std::span<const double> g) {
    const Tensor& xv = t.value(x);
    std::span<double> gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > floor) gx[i] += g[0] * (std::log(xv[i]) + 1.0);
    }
  });
}

}  // namespace mla::kernel
