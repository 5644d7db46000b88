#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// Batched quantities are stored column-wise: a (features x batch) matrix holds
// one sample per column. A Tape records every operation of a forward pass;
// Tape::backward walks it in reverse and accumulates into Parameter::grad.

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace physssm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace ad {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Eigen::Index size() const { return value.size(); }
};

/// Owns parameters at stable addresses; modules keep raw pointers into it.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& add(std::string name, Matrix init);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  Eigen::Index scalar_count() const;
  void zero_grad();

  /// Flat copies of all values, in registration order.
  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

 private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool needs_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  /// Leaf bound to a parameter. Repeated calls in one tape return the same node.
  Var param(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 and accumulates into every bound Parameter::grad.
  void backward(const Var& loss);

  // Used by op implementations.
  Var push(Matrix value, bool needs_grad, BackwardFn fn);
  const Matrix& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  void accumulate(int id, const Matrix& g);
  void accumulate_cols(int id, Eigen::Index first_col, const Matrix& g);
  void accumulate_rows(int id, Eigen::Index first_row, const Matrix& g);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    BackwardFn fn;
    Parameter* param = nullptr;
  };

  Matrix& grad_slot(int id);

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
};

/// True when any input carries gradient and the tape records.
bool any_needs_grad(std::initializer_list<Var> inputs);

// Elementary operations. Shapes follow Eigen semantics; mismatches throw ShapeError.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_bias(const Var& a, const Var& bias);  // bias: rows x 1, broadcast over columns
Var gelu(const Var& a);
Var exp(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var square(const Var& a);
Var sum(const Var& a);   // 1 x 1
Var mean(const Var& a);  // 1 x 1
Var colwise_sum(const Var& a);
Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var vcat(const std::vector<Var>& parts);
Var hcat(const std::vector<Var>& parts);
Var cols(const Var& a, Eigen::Index start, Eigen::Index count);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace ad
}  // namespace physssm
