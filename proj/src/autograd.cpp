#include "camerapose/autograd.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "camerapose/error.hpp"

namespace camerapose::ag {

namespace {

std::string shape_of(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

[[noreturn]] void mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw Error(ErrorCode::ShapeMismatch,
              std::string(op) + " got " + shape_of(a) + " and " + shape_of(b));
}

void accumulate(Node& node, const Matrix& g) {
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
  } else {
    node.grad += g;
  }
}

Var make(Matrix value, std::vector<std::shared_ptr<Node>> parents, const char* op,
         std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

bool row_broadcast(const Matrix& a, const Matrix& b) {
  return b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols();
}

Var add_impl(const Var& a, const Var& b, double sign, const char* op) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() == bv.rows() && av.cols() == bv.cols()) {
    return make(av + sign * bv, {a.node(), b.node()}, op, [sign](Node& self) {
      accumulate(*self.parents[0], self.grad);
      accumulate(*self.parents[1], sign * self.grad);
    });
  }
  if (row_broadcast(av, bv)) {
    Matrix out = av;
    out.rowwise() += sign * bv.row(0);
    return make(std::move(out), {a.node(), b.node()}, op, [sign](Node& self) {
      accumulate(*self.parents[0], self.grad);
      accumulate(*self.parents[1], sign * self.grad.colwise().sum());
    });
  }
  mismatch(op, av, bv);
}

}  // namespace

Var Var::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::param(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "item() on " + shape_of(value()));
  }
  return value()(0, 0);
}

Matrix Var::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

Var add(const Var& a, const Var& b) { return add_impl(a, b, 1.0, "add"); }
Var sub(const Var& a, const Var& b) { return add_impl(a, b, -1.0, "sub"); }

Var mul(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) mismatch("mul", a.value(), b.value());
  return make(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, "mul", [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) accumulate(pa, self.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) accumulate(pb, self.grad.cwiseProduct(pa.value));
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) mismatch("matmul", a.value(), b.value());
  return make(a.value() * b.value(), {a.node(), b.node()}, "matmul", [](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) accumulate(pa, self.grad * pb.value.transpose());
    if (pb.requires_grad) accumulate(pb, pa.value.transpose() * self.grad);
  });
}

Var scale(const Var& a, double s) {
  return make(s * a.value(), {a.node()}, "scale",
              [s](Node& self) { accumulate(*self.parents[0], s * self.grad); });
}

Var add_scalar(const Var& a, double s) {
  return make(a.value().array() + s, {a.node()}, "add_scalar",
              [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a.value().sum()), {a.node()}, "sum", [](Node& self) {
    auto& p = *self.parents[0];
    accumulate(p, Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw Error(ErrorCode::ShapeMismatch, "mean of empty matrix");
  return make(Matrix::Constant(1, 1, a.value().sum() / n), {a.node()}, "mean",
              [n](Node& self) {
                auto& p = *self.parents[0];
                accumulate(p,
                           Matrix::Constant(p.value.rows(), p.value.cols(), self.grad(0, 0) / n));
              });
}

Var square(const Var& a) {
  return make(a.value().array().square(), {a.node()}, "square", [](Node& self) {
    auto& p = *self.parents[0];
    accumulate(p, 2.0 * self.grad.cwiseProduct(p.value));
  });
}

Var sqrt(const Var& a) {
  return make(a.value().array().sqrt(), {a.node()}, "sqrt", [](Node& self) {
    accumulate(*self.parents[0], (0.5 * self.grad.array() / self.value.array()).matrix());
  });
}

Var exp(const Var& a) {
  return make(a.value().array().exp(), {a.node()}, "exp", [](Node& self) {
    accumulate(*self.parents[0], self.grad.cwiseProduct(self.value));
  });
}

Var relu(const Var& a) {
  return make(a.value().cwiseMax(0.0), {a.node()}, "relu", [](Node& self) {
    auto& p = *self.parents[0];
    accumulate(p, (p.value.array() > 0.0).select(self.grad.array(), 0.0).matrix());
  });
}

Var tanh(const Var& a) {
  return make(a.value().array().tanh(), {a.node()}, "tanh", [](Node& self) {
    accumulate(*self.parents[0],
               (self.grad.array() * (1.0 - self.value.array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make(std::move(out), {a.node()}, "sigmoid", [](Node& self) {
    accumulate(*self.parents[0],
               (self.grad.array() * self.value.array() * (1.0 - self.value.array())).matrix());
  });
}

Var softplus(const Var& a) {
  Matrix out = a.value().unaryExpr(
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return make(std::move(out), {a.node()}, "softplus", [](Node& self) {
    auto& p = *self.parents[0];
    Matrix sig = p.value.unaryExpr([](double x) {
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      const double e = std::exp(x);
      return e / (1.0 + e);
    });
    accumulate(p, self.grad.cwiseProduct(sig));
  });
}

Var reciprocal(const Var& a, double eps) {
  Matrix out = a.value().unaryExpr([eps](double x) { return 1.0 / std::max(x, eps); });
  return make(std::move(out), {a.node()}, "reciprocal", [eps](Node& self) {
    auto& p = *self.parents[0];
    Matrix g = (p.value.array() >= eps)
                   .select(-self.grad.array() * self.value.array().square(), 0.0)
                   .matrix();
    accumulate(p, g);
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Eigen::Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (p.cols() != parts[0].cols()) mismatch("concat", parts[0].value(), p.value());
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts[0].rows()) mismatch("concat", parts[0].value(), p.value());
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<std::shared_ptr<Node>> nodes;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      out.middleRows(offset, p.rows()) = p.value();
      offset += p.rows();
    } else {
      out.middleCols(offset, p.cols()) = p.value();
      offset += p.cols();
    }
    nodes.push_back(p.node());
  }
  return make(std::move(out), std::move(nodes), "concat", [axis](Node& self) {
    Eigen::Index off = 0;
    for (auto& p : self.parents) {
      if (axis == 0) {
        if (p->requires_grad) accumulate(*p, self.grad.middleRows(off, p->value.rows()));
        off += p->value.rows();
      } else {
        if (p->requires_grad) accumulate(*p, self.grad.middleCols(off, p->value.cols()));
        off += p->value.cols();
      }
    }
  });
}

Var slice(const Var& a, Eigen::Index row, Eigen::Index nrows, Eigen::Index col,
          Eigen::Index ncols) {
  if (row < 0 || col < 0 || nrows < 0 || ncols < 0 || row + nrows > a.rows() ||
      col + ncols > a.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "slice [" + std::to_string(row) + "+" +
                                              std::to_string(nrows) + ", " +
                                              std::to_string(col) + "+" + std::to_string(ncols) +
                                              "] out of " + shape_of(a.value()));
  }
  return make(a.value().block(row, col, nrows, ncols), {a.node()}, "slice",
              [row, col](Node& self) {
                auto& p = *self.parents[0];
                Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
                g.block(row, col, self.grad.rows(), self.grad.cols()) = self.grad;
                accumulate(p, g);
              });
}

Var gather_cols(const Var& a, const std::vector<int>& idx) {
  Matrix out(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= a.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "gather index " + std::to_string(idx[k]) +
                                                " out of " + shape_of(a.value()));
    }
    out.col(static_cast<Eigen::Index>(k)) = a.value().col(idx[k]);
  }
  return make(std::move(out), {a.node()}, "gather_cols", [idx](Node& self) {
    auto& p = *self.parents[0];
    Matrix g = Matrix::Zero(p.value.rows(), p.value.cols());
    for (size_t k = 0; k < idx.size(); ++k) g.col(idx[k]) += self.grad.col(static_cast<Eigen::Index>(k));
    accumulate(p, g);
  });
}

Var map(const Var& a, const std::function<double(double)>& f,
        const std::function<double(double)>& df, const char* name) {
  return make(a.value().unaryExpr(f), {a.node()}, name, [df](Node& self) {
    auto& p = *self.parents[0];
    accumulate(p, self.grad.cwiseProduct(p.value.unaryExpr(df)));
  });
}

void backward(const Var& root) {
  if (!root.defined() || root.rows() != 1 || root.cols() != 1) {
    throw Error(ErrorCode::NonScalarRoot,
                "backward needs a 1x1 root, got " + (root.defined() ? shape_of(root.value()) : "null"));
  }
  if (!root.requires_grad()) return;
  Node* r = root.node().get();
  if (!r->backward) {
    accumulate(*r, Matrix::Ones(1, 1));
    return;
  }

  // Iterative post-order DFS gives a topological order without recursion.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && parent->backward && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.setZero(n->value.rows(), n->value.cols());
  root.node()->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->backward(**it);
  // Interior gradients are scratch space; release them.
  for (Node* n : order) n->grad.resize(0, 0);
}

Var& ParamSet::add(const std::string& name, Matrix value) {
  if (contains(name)) throw Error(ErrorCode::InvariantViolation, "duplicate parameter " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, Var::param(std::move(value)));
  return entries_.back().second;
}

const Var& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::InvariantViolation, "no parameter " + name);
  return entries_[it->second].second;
}

Var& ParamSet::get(const std::string& name) {
  return const_cast<Var&>(static_cast<const ParamSet&>(*this).get(name));
}

Eigen::Index ParamSet::num_scalars() const {
  Eigen::Index n = 0;
  for (const auto& [name, v] : entries_) n += v.value().size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [name, v] : entries_) v.zero_grad();
}

double ParamSet::grad_norm() const {
  double sq = 0.0;
  for (const auto& [name, v] : entries_) {
    if (v.has_grad()) sq += v.node()->grad.squaredNorm();
  }
  return std::sqrt(sq);
}

void ParamSet::clip_grad_norm(double max_norm) {
  const double norm = grad_norm();
  if (norm <= max_norm || norm == 0.0) return;
  const double factor = max_norm / norm;
  for (auto& [name, v] : entries_) {
    if (v.has_grad()) v.node()->grad *= factor;
  }
}

bool ParamSet::all_finite() const {
  for (const auto& [name, v] : entries_) {
    if (!v.value().allFinite()) return false;
  }
  return true;
}

void ParamSet::assign(const ParamSet& other) {
  for (auto& [name, v] : entries_) {
    const Var& src = other.get(name);
    if (src.rows() != v.rows() || src.cols() != v.cols()) {
      mismatch("assign", v.value(), src.value());
    }
    v.mutable_value() = src.value();
  }
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data(static_cast<size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      data[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    }
  }
  return {{"shape", {m.rows(), m.cols()}}, {"data", data}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || static_cast<size_t>(shape[0] * shape[1]) != data.size()) {
    throw Error(ErrorCode::ParseError, "array shape does not match data length");
  }
  Matrix m(shape[0], shape[1]);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[static_cast<size_t>(r * m.cols() + c)];
  }
  return m;
}

}  // namespace

ParamSet::ParamSet(const ParamSet& other) : index_(other.index_) {
  entries_.reserve(other.entries_.size());
  for (const auto& [name, v] : other.entries_) entries_.emplace_back(name, Var::param(v.value()));
}

ParamSet& ParamSet::operator=(const ParamSet& other) {
  if (this != &other) {
    ParamSet copy(other);
    *this = std::move(copy);
  }
  return *this;
}

nlohmann::json ParamSet::to_json() const {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& [name, v] : entries_) {
    auto a = matrix_to_json(v.value());
    a["name"] = name;
    arrays.push_back(std::move(a));
  }
  return {{"format_version", kParamFormatVersion}, {"params", std::move(arrays)}};
}

void ParamSet::load_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kParamFormatVersion) {
    throw Error(ErrorCode::ParseError, "unsupported parameter format version");
  }
  const auto& arrays = j.at("params");
  if (arrays.size() != entries_.size()) {
    throw Error(ErrorCode::ParseError, "parameter count mismatch: file has " +
                                           std::to_string(arrays.size()) + ", model has " +
                                           std::to_string(entries_.size()));
  }
  for (const auto& a : arrays) {
    const auto name = a.at("name").get<std::string>();
    Matrix m = matrix_from_json(a);
    Var& v = get(name);
    if (m.rows() != v.rows() || m.cols() != v.cols()) mismatch(name.c_str(), v.value(), m);
    v.mutable_value() = std::move(m);
  }
}

nlohmann::json AdamState::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [name, mv] : moments) {
    m[name] = {{"m", matrix_to_json(mv.first)}, {"v", matrix_to_json(mv.second)}};
  }
  return {{"lr", lr},   {"beta1", beta1}, {"beta2", beta2},     {"eps", eps},
          {"weight_decay", weight_decay}, {"step", step}, {"moments", std::move(m)}};
}

AdamState AdamState::from_json(const nlohmann::json& j) {
  AdamState s;
  s.lr = j.at("lr").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.step = j.at("step").get<long long>();
  for (const auto& [name, mv] : j.at("moments").items()) {
    s.moments[name] = {matrix_from_json(mv.at("m")), matrix_from_json(mv.at("v"))};
  }
  return s;
}

void adam_step(ParamSet& params, AdamState& state) {
  for (const auto& [name, v] : params) {
    if (!v.has_grad()) throw Error(ErrorCode::MissingGradient, name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, v] : params) {
    Matrix g = v.node()->grad;
    if (state.weight_decay != 0.0) g += state.weight_decay * v.value();
    auto [it, fresh] = state.moments.try_emplace(name);
    auto& [m, s] = it->second;
    if (fresh) {
      m = Matrix::Zero(g.rows(), g.cols());
      s = Matrix::Zero(g.rows(), g.cols());
    }
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    s = state.beta2 * s + (1.0 - state.beta2) * g.cwiseAbs2();
    v.mutable_value().array() -=
        state.lr * (m.array() / c1) / ((s.array() / c2).sqrt() + state.eps);
  }
}

Matrix kaiming_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index r = 0; r < fan_in; ++r) {
    for (Eigen::Index c = 0; c < fan_out; ++c) w(r, c) = dist(rng);
  }
  return w;
}

Matrix xavier_uniform(Eigen::Index fan_in, Eigen::Index fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(fan_in, fan_out);
  for (Eigen::Index r = 0; r < fan_in; ++r) {
    for (Eigen::Index c = 0; c < fan_out; ++c) w(r, c) = dist(rng);
  }
  return w;
}

}  // namespace camerapose::ag
