#pragma once

// Small reverse-mode automatic differentiation over dense double matrices.
//
// Values are at most rank 2; a batch of samples is laid out one sample per
// row. Leaves created with Var::param accumulate gradients across backward()
// calls until zeroed; interior nodes are recomputed on every call.

#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

namespace camerapose::ag {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;  // empty until materialized
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  const char* op = "leaf";
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Var constant(Matrix value);
  static Var param(Matrix value);
  static Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  // Zero-filled when nothing has been accumulated yet.
  Matrix grad() const;
  void zero_grad() { node_->grad.setZero(node_->value.rows(), node_->value.cols()); }
  void clear_grad() { node_->grad.resize(0, 0); }

  // Same value, cut from the graph.
  Var detach() const { return constant(node_->value); }

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Forward ops. Shapes must agree exactly except where noted; violations throw
// ShapeMismatch naming both shapes.
Var add(const Var& a, const Var& b);  // b may be a 1 x n row broadcast over a's rows
Var sub(const Var& a, const Var& b);  // same broadcast rule as add
Var mul(const Var& a, const Var& b);  // elementwise
Var matmul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sum(const Var& a);   // 1 x 1
Var mean(const Var& a);  // 1 x 1
Var square(const Var& a);
Var sqrt(const Var& a);
Var exp(const Var& a);
Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);
// 1 / max(a, eps); the clamped region has zero gradient.
Var reciprocal(const Var& a, double eps);
Var concat(const std::vector<Var>& parts, int axis);  // axis 0 stacks rows, 1 stacks cols
Var slice(const Var& a, Eigen::Index row, Eigen::Index nrows, Eigen::Index col,
          Eigen::Index ncols);
// out(:, k) = a(:, idx[k]); indices may repeat (column broadcast).
Var gather_cols(const Var& a, const std::vector<int>& idx);
// Elementwise map with a caller-supplied derivative.
Var map(const Var& a, const std::function<double(double)>& f,
        const std::function<double(double)>& df, const char* name = "map");

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }

// Seeds d(root)/d(root) = 1 and propagates. Root must be 1 x 1.
void backward(const Var& root);

// Insertion-ordered named collection of trainable leaves.
class ParamSet {
 public:
  ParamSet() = default;
  // Copies are deep: the copy owns fresh leaves holding the same values.
  ParamSet(const ParamSet& other);
  ParamSet& operator=(const ParamSet& other);
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  Var& add(const std::string& name, Matrix value);
  const Var& get(const std::string& name) const;
  Var& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  size_t size() const { return entries_.size(); }
  Eigen::Index num_scalars() const;

  void zero_grad();
  double grad_norm() const;
  void clip_grad_norm(double max_norm);
  bool all_finite() const;

  // Copies values from another set with identical names and shapes.
  void assign(const ParamSet& other);

  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& j);

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::map<std::string, size_t> index_;
};

inline constexpr int kParamFormatVersion = 1;

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // optional L2 coefficient
  long long step = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments;

  nlohmann::json to_json() const;
  static AdamState from_json(const nlohmann::json& j);
};

// Standard Adam with bias correction. Throws MissingGradient if any parameter
// has no materialized gradient.
void adam_step(ParamSet& params, AdamState& state);

// Initializers, all seeded by the caller's engine.
Matrix kaiming_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);
Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng);

}  // namespace camerapose::ag
