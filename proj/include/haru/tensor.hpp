#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace haru {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

struct Node;

// Storage shared by every handle to the same tensor.
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // producer; null for leaves
};

// Backward callbacks read out.grad and add into the grads of their inputs.
using BackwardFn = std::function<void(const TensorData& out)>;

struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorData>> inputs;
  BackwardFn backward;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor(Shape{1}, v, requires_grad); }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t numel() const { return data_->values.size(); }

  std::span<double> values() { return data_->values; }
  std::span<const double> values() const { return data_->values; }
  std::span<double> grad() { return data_->grad; }
  std::span<const double> grad() const { return data_->grad; }

  double item() const;
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool on) { data_->requires_grad = on; }
  bool is_leaf() const { return data_->node == nullptr; }
  void zero_grad();

  // Copy of the values with no graph history.
  Tensor detach() const;

  const std::shared_ptr<TensorData>& data() const { return data_; }
  explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}

 private:
  std::shared_ptr<TensorData> data_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Builds an op result; attaches a node only if recording is on and some input needs grad.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward,
                   const char* op);

// Reverse-mode sweep from a scalar root. Leaf grads accumulate across calls.
void backward(const Tensor& loss);

// ---- forward ops ----

// w: [Cout, Cin, k, k]; b may be undefined for a bias-free convolution.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride = 1, std::size_t pad = 0,
              std::size_t dilation = 1);
// Ceil-mode pooling; partial windows at the border only see in-range values.
Tensor max_pool2d(const Tensor& x, std::size_t kernel = 2, std::size_t stride = 2);
// Half-pixel-center bilinear resampling to (out_h, out_w).
Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x: [N,C,H,W]; s: [N,C,1,1] or [N,1,H,W].
Tensor mul_broadcast(const Tensor& x, const Tensor& s);

Tensor concat_channels(const std::vector<Tensor>& xs);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);

enum class PoolMode { Avg, Max };
Tensor global_pool(const Tensor& x, PoolMode mode);
Tensor reduce_channels(const Tensor& x, PoolMode mode);

// x: [N, Cin]; w: [Cout, Cin]; b: [Cout] (may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
// training: normalise with batch statistics and update running stats; else use running stats.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training);

// ---- initialisation ----
void kaiming_uniform(Tensor& w, std::size_t fan_in, Rng& rng);
Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false);

// ---- verification ----
struct FiniteDiffOptions {
  double eps = 1e-5;
  std::size_t max_coords = 64;  // all coordinates when the tensor is smaller
  std::uint64_t seed = 0;
  double abs_floor = 1e-8;  // denominators below this are treated as absolute error
  // Drop coordinates where central differences at eps and eps/2 disagree by more than
  // kink_tolerance (relative): a ReLU or max-pool switch lies within eps, so f is not
  // differentiable on the probe interval. The test never consults the analytic gradient.
  bool skip_kinks = false;
  double kink_tolerance = 1e-5;
};
struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
};
FiniteDiffReport finite_diff_report(const std::function<Tensor()>& f, Tensor x, const FiniteDiffOptions& options = {});
// Maximum relative error between the analytic grad of f w.r.t. x and central differences.
double finite_diff_check(const std::function<Tensor()>& f, Tensor x, const FiniteDiffOptions& options = {});

}  // namespace haru
