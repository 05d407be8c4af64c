#pragma once

// Minimal reverse-mode autodiff over dense row-major matrices, plus the
// parameter store and Adam optimizer the two stage models are built on.
//
// A Graph records one forward pass (one training instance). Calling
// backward() accumulates gradients into the ParameterStore it was created
// with. Everything is templated on the scalar type: models train in float,
// gradient checks run in double.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "cfr/error.hpp"
#include "cfr/util.hpp"

namespace cfr::nn {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Parameters

template <class Scalar>
struct Parameter {
    std::string name;
    Matrix<Scalar> value;
    Matrix<Scalar> grad;
};

/// Index of a parameter inside its store; stays valid when the store (and
/// the model owning it) is copied.
using ParamId = std::size_t;

template <class Scalar>
class ParameterStore {
public:
    ParamId add_normal(std::string name, Eigen::Index rows, Eigen::Index cols, double stddev,
                       Rng& rng) {
        Matrix<Scalar> value(rows, cols);
        for (Eigen::Index i = 0; i < value.size(); ++i)
            value.data()[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
        return add(std::move(name), std::move(value));
    }

    ParamId add_constant(std::string name, Eigen::Index rows, Eigen::Index cols, Scalar fill) {
        return add(std::move(name), Matrix<Scalar>::Constant(rows, cols, fill));
    }

    ParamId add(std::string name, Matrix<Scalar> value) {
        Parameter<Scalar> p{std::move(name), std::move(value), {}};
        p.grad = Matrix<Scalar>::Zero(p.value.rows(), p.value.cols());
        params_.push_back(std::move(p));
        return params_.size() - 1;
    }

    Parameter<Scalar>& operator[](ParamId id) { return params_[id]; }
    const Parameter<Scalar>& operator[](ParamId id) const { return params_[id]; }
    std::size_t size() const { return params_.size(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.grad.setZero();
    }

    bool all_finite() const {
        for (const auto& p : params_)
            if (!p.value.allFinite()) return false;
        return true;
    }

    nlohmann::json to_json() const {
        auto out = nlohmann::json::array();
        for (const auto& p : params_) {
            nlohmann::json entry;
            entry["name"] = p.name;
            entry["rows"] = p.value.rows();
            entry["cols"] = p.value.cols();
            std::vector<double> data(p.value.data(), p.value.data() + p.value.size());
            entry["data"] = std::move(data);
            out.push_back(std::move(entry));
        }
        return out;
    }

    /// Loads values into an identically shaped store.
    void load_json(const nlohmann::json& entries) {
        if (!entries.is_array() || entries.size() != params_.size())
            fail(ErrorKind::parse, "checkpoint parameter count does not match the model");
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& entry = entries[i];
            auto& p = params_[i];
            if (entry.at("name").get<std::string>() != p.name ||
                entry.at("rows").get<Eigen::Index>() != p.value.rows() ||
                entry.at("cols").get<Eigen::Index>() != p.value.cols())
                fail(ErrorKind::parse, "checkpoint parameter '" + p.name + "' has the wrong shape");
            const auto data = entry.at("data").get<std::vector<double>>();
            if (data.size() != static_cast<std::size_t>(p.value.size()))
                fail(ErrorKind::parse, "checkpoint parameter '" + p.name + "' is truncated");
            for (std::size_t j = 0; j < data.size(); ++j)
                p.value.data()[j] = static_cast<Scalar>(data[j]);
        }
    }

private:
    std::vector<Parameter<Scalar>> params_;
};

// ---------------------------------------------------------------------------
// Graph

struct Var {
    std::size_t id;
};

template <class Scalar>
class Graph {
public:
    using Mat = Matrix<Scalar>;

    explicit Graph(ParameterStore<Scalar>& store) : store_(store) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    const Mat& value(Var v) const {
        const auto& n = nodes_[v.id];
        return n.external ? *n.external : n.value;
    }

    Scalar scalar(Var v) const { return value(v)(0, 0); }

    /// A constant input (no gradient is propagated into it).
    Var constant(Mat value) { return push(std::move(value), {}); }

    /// A parameter, referenced without copying.
    Var param(ParamId id) {
        Var out{nodes_.size()};
        Node n;
        n.external = &store_[id].value;
        n.param = id;
        nodes_.push_back(std::move(n));
        return out;
    }

    /// Rows of a parameter table (embedding lookup); gradients scatter back.
    Var embed(ParamId table, const std::vector<int>& rows) {
        const auto& w = store_[table].value;
        Mat out(static_cast<Eigen::Index>(rows.size()), w.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            require(rows[i] >= 0 && rows[i] < w.rows(), "embedding index out of range");
            out.row(static_cast<Eigen::Index>(i)) = w.row(rows[i]);
        }
        Var v = push(std::move(out), {});
        nodes_[v.id].backward = [this, v, table, rows] {
            const auto& g = nodes_[v.id].grad;
            auto& target = store_[table].grad;
            for (std::size_t i = 0; i < rows.size(); ++i)
                target.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
        };
        return v;
    }

    Var matmul(Var a, Var b) {
        Var v = push(value(a) * value(b), {});
        nodes_[v.id].backward = [this, a, b, v] {
            const auto& g = nodes_[v.id].grad;
            if (wants_grad(a)) grad(a).noalias() += g * value(b).transpose();
            if (wants_grad(b)) grad(b).noalias() += value(a).transpose() * g;
        };
        return v;
    }

    /// a * b^T
    Var matmul_nt(Var a, Var b) {
        Var v = push(value(a) * value(b).transpose(), {});
        nodes_[v.id].backward = [this, a, b, v] {
            const auto& g = nodes_[v.id].grad;
            if (wants_grad(a)) grad(a).noalias() += g * value(b);
            if (wants_grad(b)) grad(b).noalias() += g.transpose() * value(a);
        };
        return v;
    }

    Var add(Var a, Var b) {
        require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
                "add: shape mismatch");
        Var v = push(value(a) + value(b), {});
        nodes_[v.id].backward = [this, a, b, v] {
            const auto& g = nodes_[v.id].grad;
            if (wants_grad(a)) grad(a) += g;
            if (wants_grad(b)) grad(b) += g;
        };
        return v;
    }

    /// Adds a 1 x n row to every row of a.
    Var add_row(Var a, Var row) {
        require(value(row).rows() == 1 && value(row).cols() == value(a).cols(),
                "add_row: shape mismatch");
        Mat out = value(a);
        out.rowwise() += value(row).row(0);
        Var v = push(std::move(out), {});
        nodes_[v.id].backward = [this, a, row, v] {
            const auto& g = nodes_[v.id].grad;
            if (wants_grad(a)) grad(a) += g;
            if (wants_grad(row)) grad(row) += g.colwise().sum();
        };
        return v;
    }

    Var scale(Var a, Scalar s) {
        Var v = push(value(a) * s, {});
        nodes_[v.id].backward = [this, a, v, s] {
            if (wants_grad(a)) grad(a) += nodes_[v.id].grad * s;
        };
        return v;
    }

    /// tanh-approximated GELU.
    Var gelu(Var a) {
        const Mat& x = value(a);
        Mat out(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const Scalar z = x.data()[i];
            out.data()[i] = Scalar(0.5) * z * (Scalar(1) + std::tanh(gelu_inner(z)));
        }
        Var v = push(std::move(out), {});
        nodes_[v.id].backward = [this, a, v] {
            if (!wants_grad(a)) return;
            const Mat& x = value(a);
            const auto& g = nodes_[v.id].grad;
            auto& ga = grad(a);
            constexpr Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                const Scalar z = x.data()[i];
                const Scalar t = std::tanh(gelu_inner(z));
                const Scalar dinner = c * (Scalar(1) + Scalar(3 * 0.044715) * z * z);
                const Scalar d = Scalar(0.5) * (Scalar(1) + t) +
                                 Scalar(0.5) * z * (Scalar(1) - t * t) * dinner;
                ga.data()[i] += g.data()[i] * d;
            }
        };
        return v;
    }

    /// Row-wise layer normalization with 1 x n gain and bias.
    Var layer_norm(Var a, Var gain, Var bias, Scalar eps = Scalar(1e-5)) {
        const Mat& x = value(a);
        const Eigen::Index n = x.cols();
        Mat normalized(x.rows(), n);
        std::vector<Scalar> inv_std(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const Scalar mean = x.row(r).mean();
            const Scalar var = (x.row(r).array() - mean).square().mean();
            const Scalar is = Scalar(1) / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(r)] = is;
            normalized.row(r) = (x.row(r).array() - mean) * is;
        }
        Mat out = normalized;
        for (Eigen::Index r = 0; r < out.rows(); ++r)
            out.row(r) = normalized.row(r).cwiseProduct(value(gain).row(0)) + value(bias).row(0);
        Var v = push(std::move(out), {});
        nodes_[v.id].backward = [this, a, gain, bias, v, normalized = std::move(normalized),
                                 inv_std = std::move(inv_std), n] {
            const auto& g = nodes_[v.id].grad;
            if (wants_grad(gain)) grad(gain) += g.cwiseProduct(normalized).colwise().sum();
            if (wants_grad(bias)) grad(bias) += g.colwise().sum();
            if (!wants_grad(a)) return;
            auto& ga = grad(a);
            const auto& gamma = value(gain);
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                const auto dxhat = g.row(r).cwiseProduct(gamma.row(0)).eval();
                const Scalar mean_d = dxhat.mean();
                const Scalar mean_dx = dxhat.cwiseProduct(normalized.row(r)).mean();
                ga.row(r).array() += inv_std[static_cast<std::size_t>(r)] *
                                     (dxhat.array() - mean_d - normalized.row(r).array() * mean_dx);
            }
            (void)n;
        };
        return v;
    }

    /// Row softmax of (a * s); with `causal`, entry (i, j) for j > i is masked.
    Var softmax_rows(Var a, Scalar s, bool causal) {
        const Mat& x = value(a);
        Mat out = Mat::Zero(x.rows(), x.cols());
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const Eigen::Index width = causal ? std::min<Eigen::Index>(r + 1, x.cols()) : x.cols();
            const Scalar mx = (x.row(r).head(width) * s).maxCoeff();
            Scalar total = 0;
            for (Eigen::Index c = 0; c < width; ++c) {
                const Scalar e = std::exp(x(r, c) * s - mx);
                out(r, c) = e;
                total += e;
            }
            out.row(r).head(width) /= total;
        }
        Var v = push(std::move(out), {});
        nodes_[v.id].backward = [this, a, v, s] {
            if (!wants_grad(a)) return;
            const auto& p = nodes_[v.id].value;
            const auto& g = nodes_[v.id].grad;
            auto& ga = grad(a);
            for (Eigen::Index r = 0; r < p.rows(); ++r) {
                const Scalar dot = p.row(r).dot(g.row(r));
                ga.row(r).array() += s * p.row(r).array() * (g.row(r).array() - dot);
            }
        };
        return v;
    }

    Var cols(Var a, Eigen::Index start, Eigen::Index count) {
        Var v = push(value(a).middleCols(start, count), {});
        nodes_[v.id].backward = [this, a, v, start, count] {
            if (wants_grad(a)) grad(a).middleCols(start, count) += nodes_[v.id].grad;
        };
        return v;
    }

    Var rows(Var a, Eigen::Index start, Eigen::Index count) {
        Var v = push(value(a).middleRows(start, count), {});
        nodes_[v.id].backward = [this, a, v, start, count] {
            if (wants_grad(a)) grad(a).middleRows(start, count) += nodes_[v.id].grad;
        };
        return v;
    }

    Var concat_cols(const std::vector<Var>& parts) {
        require(!parts.empty(), "concat_cols: nothing to concatenate");
        Eigen::Index total = 0;
        for (auto p : parts) total += value(p).cols();
        Mat out(value(parts[0]).rows(), total);
        Eigen::Index offset = 0;
        for (auto p : parts) {
            out.middleCols(offset, value(p).cols()) = value(p);
            offset += value(p).cols();
        }
        Var v = push(std::move(out), {});
        nodes_[v.id].backward = [this, parts, v] {
            Eigen::Index offset = 0;
            for (auto p : parts) {
                const Eigen::Index width = value(p).cols();
                if (wants_grad(p)) grad(p) += nodes_[v.id].grad.middleCols(offset, width);
                offset += width;
            }
        };
        return v;
    }

    /// -sum_t weights[t] * log softmax(logits_t)[targets[t]], as a 1 x 1 node.
    Var weighted_nll(Var logits, const std::vector<int>& targets, const std::vector<Scalar>& weights) {
        const Mat& x = value(logits);
        require(static_cast<std::size_t>(x.rows()) == targets.size() && targets.size() == weights.size(),
                "weighted_nll: shape mismatch");
        Mat probs(x.rows(), x.cols());
        Scalar loss = 0;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const auto t = static_cast<std::size_t>(r);
            require(targets[t] >= 0 && targets[t] < x.cols(), "weighted_nll: target out of range");
            const Scalar mx = x.row(r).maxCoeff();
            const Scalar lse = mx + std::log((x.row(r).array() - mx).exp().sum());
            probs.row(r) = (x.row(r).array() - lse).exp();
            loss -= weights[t] * (x(r, targets[t]) - lse);
        }
        Var v = push(Mat::Constant(1, 1, loss), {});
        nodes_[v.id].backward = [this, logits, v, targets, weights, probs = std::move(probs)] {
            if (!wants_grad(logits)) return;
            const Scalar upstream = nodes_[v.id].grad(0, 0);
            auto& g = grad(logits);
            for (Eigen::Index r = 0; r < probs.rows(); ++r) {
                const auto t = static_cast<std::size_t>(r);
                if (weights[t] == Scalar(0)) continue;
                g.row(r) += upstream * weights[t] * probs.row(r);
                g(r, targets[t]) -= upstream * weights[t];
            }
        };
        return v;
    }

    /// Reverse sweep from a 1 x 1 node; parameter gradients are added to the store.
    void backward(Var loss) {
        require(value(loss).size() == 1, "backward needs a scalar node");
        grad(loss).setOnes();
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            auto& n = nodes_[i];
            if (n.grad.size() == 0) continue;
            if (n.backward) n.backward();
            if (n.param != kNoParam) store_[n.param].grad += n.grad;
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    static constexpr std::size_t kNoParam = static_cast<std::size_t>(-1);

    struct Node {
        Mat value;
        Mat grad;
        const Mat* external = nullptr;
        std::size_t param = kNoParam;
        std::function<void()> backward;
    };

    static Scalar gelu_inner(Scalar z) {
        return Scalar(0.7978845608028654) * (z + Scalar(0.044715) * z * z * z);
    }

    Var push(Mat value, std::function<void()> backward) {
        Node n;
        n.value = std::move(value);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    // Constants created with constant() carry no backward and no parameter;
    // gradients into them are skipped.
    bool wants_grad(Var v) const {
        const auto& n = nodes_[v.id];
        return n.param != kNoParam || static_cast<bool>(n.backward);
    }

    Mat& grad(Var v) {
        auto& n = nodes_[v.id];
        if (n.grad.size() == 0) {
            const auto& val = value(v);
            n.grad = Mat::Zero(val.rows(), val.cols());
        }
        return n.grad;
    }

    ParameterStore<Scalar>& store_;
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    double learning_rate = 1e-3;
    std::size_t warmup_steps = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Adam with linear warmup to the base rate, constant afterwards, and
/// optional global-norm gradient clipping.
template <class Scalar>
class Adam {
public:
    Adam(const ParameterStore<Scalar>& store, AdamConfig config) : config_(config) {
        for (const auto& p : store) {
            first_.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
            second_.push_back(Matrix<Scalar>::Zero(p.value.rows(), p.value.cols()));
        }
    }

    double current_rate() const {
        if (config_.warmup_steps == 0) return config_.learning_rate;
        const double progress = static_cast<double>(step_ + 1) / static_cast<double>(config_.warmup_steps);
        return config_.learning_rate * std::min(1.0, progress);
    }

    /// Applies grad / grad_scale, then zeroes the gradients.
    void step(ParameterStore<Scalar>& store, double grad_scale = 1.0) {
        const double rate = current_rate();
        double norm_sq = 0.0;
        for (const auto& p : store) norm_sq += static_cast<double>(p.grad.squaredNorm());
        double scale = 1.0 / grad_scale;
        const double norm = std::sqrt(norm_sq) * scale;
        if (config_.clip_norm > 0 && norm > config_.clip_norm) scale *= config_.clip_norm / norm;
        ++step_;
        const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
        const auto b1 = static_cast<Scalar>(config_.beta1);
        const auto b2 = static_cast<Scalar>(config_.beta2);
        const auto step_size = static_cast<Scalar>(rate / bc1);
        const auto eps = static_cast<Scalar>(config_.epsilon);
        const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
        const auto s = static_cast<Scalar>(scale);
        std::size_t i = 0;
        for (auto& p : store) {
            auto& m = first_[i];
            auto& v = second_[i];
            const auto g = (p.grad.array() * s).eval();
            m.array() = b1 * m.array() + (Scalar(1) - b1) * g;
            v.array() = b2 * v.array() + (Scalar(1) - b2) * g.square();
            p.value.array() -= step_size * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
            p.grad.setZero();
            ++i;
        }
    }

    std::size_t steps() const { return step_; }

private:
    AdamConfig config_;
    std::vector<Matrix<Scalar>> first_;
    std::vector<Matrix<Scalar>> second_;
    std::size_t step_ = 0;
};

}  // namespace cfr::nn
