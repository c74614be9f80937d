#include "gmeql/batch_evaluator.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

namespace gmeql {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

double ipow(double x, int n) {
  double r = 1.0;
  for (int i = 0; i < n; ++i) r *= x;
  return r;
}

}  // namespace

BatchEvaluator::BatchEvaluator(const Network& net, const Dataset& data)
    : net_(net), rows_(data.rows()), targets_(data.targets) {
  if (rows_ == 0) throw UsageError("batch evaluator: empty dataset");
  if (data.dims != net.spec().input_count) {
    throw UsageError("batch evaluator: dataset width does not match network inputs");
  }
  outputs_.resize(static_cast<std::size_t>(net.layer_count()));
  output_grads_.resize(outputs_.size());
  for (int k = 0; k < net.output_layer(); ++k) {
    outputs_[k].assign(static_cast<std::size_t>(net.layer_size(k)) * rows_, 0.0);
    output_grads_[k].assign(outputs_[k].size(), 0.0);
  }
  outputs_[net.output_layer()].assign(rows_, 0.0);
  derivs_ = outputs_;
  auto& in = outputs_[0];
  for (std::size_t r = 0; r < rows_; ++r) {
    const auto x = data.row(r);
    for (int d = 0; d < data.dims; ++d) in[static_cast<std::size_t>(d) * rows_ + r] = x[d];
  }
  if (net.spec().constant_node) {
    std::fill(in.begin() + static_cast<std::ptrdiff_t>(data.dims * rows_), in.end(), 1.0);
  }
  mix_.assign(net.connection_count() * rows_, 0.0);
  dmix_.assign(mix_.size(), 0.0);
  layer_first_.assign(static_cast<std::size_t>(net.layer_count()) + 1, net.connection_count());
  for (int k = 1; k < net.layer_count(); ++k) layer_first_[k] = net.first_connection({k, 0});
  std::size_t widest = 0;
  for (int k = 1; k < net.layer_count(); ++k) {
    widest = std::max(widest, (layer_first_[k + 1] - layer_first_[k]) *
                                  static_cast<std::size_t>(net.layer_size(k - 1)));
  }
  dv_scratch_.assign(widest, 0.0);
  int max_arity = 1;
  for (int k = 1; k < net.output_layer(); ++k) {
    for (int i = 0; i < net.layer_size(k); ++i) max_arity = std::max(max_arity, net.node_arity({k, i}));
  }
  scratch_.assign(static_cast<std::size_t>(max_arity + 1) * rows_, 0.0);
}

void BatchEvaluator::run_forward(std::span<const double> v, std::span<const double> w) {
  const std::size_t n = rows_;
  for (int k = 1; k <= net_.output_layer(); ++k) {
    std::vector<double>& out = outputs_[k];
    // All connections of a layer share one fan-in, so their mixes form a
    // single product V_k * prev with V_k stored row-major inside `v`.
    const std::size_t c0 = layer_first_[k];
    const std::size_t count = layer_first_[k + 1] - c0;
    const auto fan_in = static_cast<Eigen::Index>(net_.layer_size(k - 1));
    const auto cols = static_cast<Eigen::Index>(n);
    ConstMatrixMap vk(v.data() + net_.connection(c0).z_offset, static_cast<Eigen::Index>(count), fan_in);
    ConstMatrixMap prev(outputs_[k - 1].data(), fan_in, cols);
    MatrixMap mix(mix_.data() + c0 * n, static_cast<Eigen::Index>(count), cols);
    mix.noalias() = vk * prev;
    for (int i = 0; i < net_.layer_size(k); ++i) {
      const NodeId node{k, i};
      const std::size_t first = net_.first_connection(node);
      const int slots = net_.node_arity(node);
      double* o = out.data() + static_cast<std::size_t>(i) * n;
      double* dd = derivs_[k].data() + static_cast<std::size_t>(i) * n;
      const double* m0 = mix_.data() + first * n;
      const double w0 = w[first];
      if (k == net_.output_layer()) {
        for (std::size_t r = 0; r < n; ++r) o[r] = w0 * m0[r];
        continue;
      }
      const FunctionKind kind = net_.kind(node);
      const double* m1 = slots > 1 ? m0 + n : nullptr;
      const double w1 = slots > 1 ? w[first + 1] : 0.0;
      switch (kind) {
        case FunctionKind::add:
          for (std::size_t r = 0; r < n; ++r) o[r] = w0 * m0[r] + w1 * m1[r];
          break;
        case FunctionKind::sub:
          for (std::size_t r = 0; r < n; ++r) o[r] = w0 * m0[r] - w1 * m1[r];
          break;
        case FunctionKind::mul:
          for (std::size_t r = 0; r < n; ++r) o[r] = (w0 * m0[r]) * (w1 * m1[r]);
          break;
        case FunctionKind::div:
          for (std::size_t r = 0; r < n; ++r) {
            o[r] = (w0 * m0[r]) / autodiff::guard_denominator(w1 * m1[r]);
          }
          break;
        case FunctionKind::sin:
          for (std::size_t r = 0; r < n; ++r) o[r] = std::sin(w0 * m0[r]);
          break;
        case FunctionKind::cos:
          for (std::size_t r = 0; r < n; ++r) o[r] = std::cos(w0 * m0[r]);
          break;
        case FunctionKind::sqrt:
          for (std::size_t r = 0; r < n; ++r) {
            o[r] = std::sqrt(autodiff::guard_sqrt_argument(w0 * m0[r]));
          }
          break;
        case FunctionKind::sum_n: {
          for (std::size_t r = 0; r < n; ++r) o[r] = w0 * m0[r];
          for (int j = 1; j < slots; ++j) {
            const double wj = w[first + static_cast<std::size_t>(j)];
            const double* mj = m0 + static_cast<std::size_t>(j) * n;
            for (std::size_t r = 0; r < n; ++r) o[r] += wj * mj[r];
          }
          break;
        }
        default: {
          const int p = power_of(kind);
          for (std::size_t r = 0; r < n; ++r) {
            const double a = w0 * m0[r];
            const double lower = ipow(a, p - 1);
            o[r] = lower * a;
            dd[r] = p * lower;
          }
          break;
        }
      }
    }
  }
}

double BatchEvaluator::mae(std::span<const double> v, std::span<const double> w) {
  run_forward(v, w);
  const double* y = outputs_[net_.output_layer()].data();
  double total = 0.0;
  for (std::size_t r = 0; r < rows_; ++r) total += std::abs(targets_[r] - y[r]);
  return total / static_cast<double>(rows_);
}

std::span<const double> BatchEvaluator::predict(std::span<const double> v,
                                                std::span<const double> w) {
  run_forward(v, w);
  return outputs_[net_.output_layer()];
}

double BatchEvaluator::mae_and_gradient(std::span<const double> v, std::span<const double> w,
                                        double scale, std::span<const std::uint8_t> need_dv,
                                        std::span<double> dv, std::span<double> dw) {
  const double loss = mae(v, w);
  if (!std::isfinite(loss)) return loss;
  const std::size_t n = rows_;
  const bool want_w = !dw.empty();

  // Layers below `deepest` never need gradients.
  int deepest = net_.output_layer();
  if (want_w) {
    deepest = 1;
  } else {
    for (std::size_t c = 0; c < net_.connection_count(); ++c) {
      if (need_dv[c]) deepest = std::min(deepest, net_.connection(c).owner.layer);
    }
  }

  double* d_in = scratch_.data();  // one row block per input slot

  // Stores w_c * d_input in dmix_ row c and accumulates dw.
  const auto stage_connection = [&](std::size_t c, const double* d_input) {
    if (want_w) dw[c] += dot(d_input, mix_.data() + c * n, n);
    const double wc = w[c];
    double* row = dmix_.data() + c * n;
    for (std::size_t r = 0; r < n; ++r) row[r] = wc * d_input[r];
  };

  // dV_k = D_k * prev^T and d(prev) += V_k^T * D_k for the whole layer.
  const auto flush_layer = [&](int k) {
    const std::size_t c0 = layer_first_[k];
    const std::size_t count = layer_first_[k + 1] - c0;
    const auto rows = static_cast<Eigen::Index>(count);
    const auto fan_in = static_cast<Eigen::Index>(net_.layer_size(k - 1));
    const auto cols = static_cast<Eigen::Index>(n);
    ConstMatrixMap dk(dmix_.data() + c0 * n, rows, cols);
    ConstMatrixMap prev(outputs_[k - 1].data(), fan_in, cols);
    bool any_dv = false;
    if (!need_dv.empty()) {
      for (std::size_t c = c0; c < c0 + count; ++c) any_dv = any_dv || need_dv[c] != 0;
    }
    if (any_dv) {
      MatrixMap grad(dv_scratch_.data(), rows, fan_in);
      grad.noalias() = dk * prev.transpose();
      for (std::size_t c = c0; c < c0 + count; ++c) {
        if (!need_dv[c]) continue;
        const std::size_t zi = net_.connection(c).z_offset;
        const double* g = dv_scratch_.data() + (c - c0) * static_cast<std::size_t>(fan_in);
        for (Eigen::Index l = 0; l < fan_in; ++l) dv[zi + static_cast<std::size_t>(l)] += g[l];
      }
    }
    if (k - 1 >= deepest && k - 1 >= 1) {
      ConstMatrixMap vk(v.data() + net_.connection(c0).z_offset, rows, fan_in);
      MatrixMap gprev(output_grads_[k - 1].data(), fan_in, cols);
      // Layer k is the only consumer of layer k - 1.
      gprev.noalias() = vk.transpose() * dk;
    }
  };

  // Output connection.
  {
    const double* y = outputs_[net_.output_layer()].data();
    const double g = scale / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) {
      const double diff = y[r] - targets_[r];
      d_in[r] = diff > 0.0 ? g : (diff < 0.0 ? -g : 0.0);
    }
    stage_connection(net_.output_connection(), d_in);
    flush_layer(net_.output_layer());
  }

  for (int k = net_.output_layer() - 1; k >= deepest; --k) {
    for (int i = 0; i < net_.layer_size(k); ++i) {
      const NodeId node{k, i};
      const FunctionKind kind = net_.kind(node);
      const std::size_t first = net_.first_connection(node);
      const int slots = net_.node_arity(node);
      const double* gout = output_grads_[k].data() + static_cast<std::size_t>(i) * n;
      const double* out = outputs_[k].data() + static_cast<std::size_t>(i) * n;
      const double* dd = derivs_[k].data() + static_cast<std::size_t>(i) * n;
      const double* m0 = mix_.data() + first * n;
      const double w0 = w[first];
      double* d0 = d_in;
      double* d1 = d_in + n;
      switch (kind) {
        case FunctionKind::add:
          for (std::size_t r = 0; r < n; ++r) d0[r] = d1[r] = gout[r];
          break;
        case FunctionKind::sub:
          for (std::size_t r = 0; r < n; ++r) {
            d0[r] = gout[r];
            d1[r] = -gout[r];
          }
          break;
        case FunctionKind::mul: {
          const double* m1 = m0 + n;
          const double w1 = w[first + 1];
          for (std::size_t r = 0; r < n; ++r) {
            d0[r] = gout[r] * (w1 * m1[r]);
            d1[r] = gout[r] * (w0 * m0[r]);
          }
          break;
        }
        case FunctionKind::div: {
          const double* m1 = m0 + n;
          const double w1 = w[first + 1];
          for (std::size_t r = 0; r < n; ++r) {
            const double den = w1 * m1[r];
            const double gd = autodiff::guard_denominator(den);
            d0[r] = gout[r] / gd;
            d1[r] = std::abs(den) > autodiff::kDivisionGuard
                        ? -gout[r] * (w0 * m0[r]) / (gd * gd)
                        : 0.0;
          }
          break;
        }
        case FunctionKind::sin:
          for (std::size_t r = 0; r < n; ++r) d0[r] = gout[r] * std::cos(w0 * m0[r]);
          break;
        case FunctionKind::cos:
          for (std::size_t r = 0; r < n; ++r) d0[r] = -gout[r] * std::sin(w0 * m0[r]);
          break;
        case FunctionKind::sqrt:
          for (std::size_t r = 0; r < n; ++r) {
            d0[r] = w0 * m0[r] > autodiff::kSqrtGuard ? gout[r] * 0.5 / out[r] : 0.0;
          }
          break;
        case FunctionKind::sum_n:
          for (int j = 0; j < slots; ++j) {
            std::copy(gout, gout + n, d_in + static_cast<std::size_t>(j) * n);
          }
          break;
        default: {
          for (std::size_t r = 0; r < n; ++r) d0[r] = gout[r] * dd[r];
          break;
        }
      }
      for (int j = 0; j < slots; ++j) {
        stage_connection(first + static_cast<std::size_t>(j),
                         d_in + static_cast<std::size_t>(j) * n);
      }
    }
    flush_layer(k);
  }
  return loss;
}

}  // namespace gmeql
