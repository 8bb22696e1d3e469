#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "talkerlab/common.hpp"

namespace talkerlab::nn {

using Mat = Eigen::MatrixXd;

// A named, trainable matrix. Gradients accumulate here across a backward pass;
// the optimizer consumes and clears them.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Owns parameters in registration order, which fixes the serialization and
// optimizer-state layout.
class ParamStore {
 public:
  Param& add(const std::string& name, int rows, int cols);
  Param& add_init(const std::string& name, int rows, int cols, double stddev, Rng& rng);
  Param& add_zeros(const std::string& name, int rows, int cols);
  Param& add_ones(const std::string& name, int rows, int cols);

  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  Param* find(const std::string& name);

  size_t count() const { return params_.size(); }
  long long element_count() const;
  uint64_t value_hash() const;

  void zero_grads();
  void save(const fs::path& path) const;
  void load(const fs::path& path);

 private:
  std::deque<Param> params_;
};

// Adam with linear warmup then inverse-sqrt decay. State is laid out parallel
// to the stores' registration order so checkpoints restore bit-exactly.
class Adam {
 public:
  struct Options {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long warmup_steps = 1000;
  };

  explicit Adam(Options opt = {}) : opt_(opt) {}

  void step(const std::vector<Param*>& params);
  double current_lr() const;
  long long step_count() const { return t_; }

  void save(const fs::path& path) const;
  void load(const fs::path& path, const std::vector<Param*>& params);

 private:
  struct Slot {
    Mat m, v;
  };
  Options opt_;
  long long t_ = 0;
  std::vector<Slot> slots_;
};

// ---- reverse-mode tape ------------------------------------------------------
//
// Feed-forward graphs only: creation order is a valid topological order, and
// backward() walks it in reverse. Node values are matrices; scalars are 1x1.

class Tape {
 public:
  struct Node {
    Mat value;
    Mat grad;  // lazily allocated; empty means "no gradient reached this node"
    std::function<void(Tape&, Node&)> back;
  };

  int constant(Mat v);
  int param(Param& p);  // leaf whose backward accumulates into p.grad

  const Mat& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Mat& grad_of(int id);  // allocates zeros on first touch
  bool has_grad(int id) const;

  void backward(int loss_id);
  size_t size() const { return nodes_.size(); }

  // internal: used by op builders
  int emit(Mat value, std::function<void(Tape&, Node&)> back);
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }

 private:
  std::deque<Node> nodes_;
};

// elementwise / shape ops
int add(Tape& t, int a, int b);
int sub(Tape& t, int a, int b);
int mul(Tape& t, int a, int b);
int scale(Tape& t, int a, double s);
int add_scalar(Tape& t, int a, double s);
int add_row_broadcast(Tape& t, int a, int row);  // row: 1 x C added to every row of a
int matmul(Tape& t, int a, int b);
int matmul_nt(Tape& t, int a, int b);  // a * b^T
int transpose(Tape& t, int a);
int slice_cols(Tape& t, int a, int c0, int c1);
int slice_rows(Tape& t, int a, int r0, int r1);
int concat_cols(Tape& t, const std::vector<int>& parts);
int concat_rows(Tape& t, const std::vector<int>& parts);
int repeat_row(Tape& t, int a, int times);    // a: 1 x C -> times x C
int upsample_rows2(Tape& t, int a);           // each row duplicated, T -> 2T

// nonlinearities
int tanh_op(Tape& t, int a);
int sigmoid_op(Tape& t, int a);
int gelu(Tape& t, int a);
int relu(Tape& t, int a);
int softplus_op(Tape& t, int a);
int exp_op(Tape& t, int a);
int log_op(Tape& t, int a);
int square(Tape& t, int a);

// reductions
int sum_all(Tape& t, int a);   // 1x1
int mean_all(Tape& t, int a);  // 1x1
int mean_rows(Tape& t, int a); // 1 x C column means? no: returns 1 x C mean over rows
int row_last(Tape& t, int a);  // final row as 1 x C

// softmax over each row
int softmax_rows(Tape& t, int a);
// layer norm over each row with learnable gain/bias nodes (1 x C)
int layer_norm_rows(Tape& t, int a, int gamma, int beta, double eps = 1e-5);

// rows of an embedding node selected by ids; backward scatter-adds
int gather_rows(Tape& t, int table, const std::vector<int>& ids);

// identity in inference or p == 0; inverted dropout otherwise
int dropout(Tape& t, int a, double p, bool training, Rng& rng);

// value is q (constant); gradient passes through to x unchanged
int straight_through(Tape& t, int x, const Mat& q);
int stop_gradient(Tape& t, int a);

// losses (all return 1x1 nodes)
int mse_loss(Tape& t, int pred, int target);
int l1_loss(Tape& t, int pred, int target);
// mean token cross-entropy of row-logits against ids where mask[i] is true
int cross_entropy_rows(Tape& t, int logits, const std::vector<int>& targets,
                       const std::vector<bool>& mask);

// conv: x is T x Cin, weight (k*Cin) x Cout, bias 1 x Cout; stride 2 with
// symmetric zero padding so the output has ceil(T/2) rows.
int conv1d_s2(Tape& t, int x, int weight, int bias, int kernel);
// stride-1 variant, same length out
int conv1d_same(Tape& t, int x, int weight, int bias, int kernel);

// 2D conv over a C x (H*W) feature map, kernel 3, stride 2, pad 1.
// weight: Cout x (Cin*9), bias: 1 x Cout. Returns Cout x (H2*W2).
struct Conv2dShape {
  int c_in, h, w;
  int c_out;
  int h_out() const { return (h + 1) / 2; }
  int w_out() const { return (w + 1) / 2; }
};
int conv2d_s2(Tape& t, int x, int weight, int bias, const Conv2dShape& shape);

// Numerical gradient check: calls loss(true) once to populate analytic grads,
// then central finite differences on sampled parameter elements via
// loss(false). Returns the max relative error over checked elements.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
};
GradCheckResult check_gradients(const std::function<double(bool run_backward)>& loss,
                                std::vector<Param*> params, int samples, double h, Rng& rng);

}  // namespace talkerlab::nn
