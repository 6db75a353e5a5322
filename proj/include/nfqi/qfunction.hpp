#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nfqi/mdp.hpp"

namespace nfqi {

/// Which parameter partitions an update may touch.
struct ParamMask {
  bool shared = true;
  bool foreground = true;

  static ParamMask all() { return {true, true}; }
  static ParamMask none() { return {false, false}; }
  static ParamMask shared_only() { return {true, false}; }
  static ParamMask foreground_only() { return {false, true}; }
};

/// Z-score statistics for the state part of the input. Empty means identity.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  bool empty() const { return mean.empty(); }
  bool operator==(const NormStats&) const = default;
};

/// Model input layout: [state (state_dim) ; one-hot action (num_actions)].
/// State entries are normalised inside the model; the action block is not.
inline void encode_input(std::span<const double> state, int action, int num_actions, std::span<double> out) {
  if (action < 0 || action >= num_actions) throw Error("action id out of range");
  std::copy(state.begin(), state.end(), out.begin());
  std::fill(out.begin() + static_cast<std::ptrdiff_t>(state.size()), out.end(), 0.0);
  out[state.size() + static_cast<std::size_t>(action)] = 1.0;
}

inline std::vector<double> encode_input(std::span<const double> state, int action, int num_actions) {
  std::vector<double> x(state.size() + static_cast<std::size_t>(num_actions));
  encode_input(state, action, num_actions, x);
  return x;
}

namespace detail {

inline double normalised(const NormStats& norm, std::span<const double> x, std::size_t i, int state_dim) {
  if (norm.empty() || i >= static_cast<std::size_t>(state_dim)) return x[i];
  return (x[i] - norm.mean[i]) / norm.stddev[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Nested multilayer perceptron
//
//   trunk:   x -> Linear(10) -> ReLU -> Linear(5) -> ReLU          = h
//   shared:  h -> Linear(1)                                        = g_s
//   head:    h -> Linear(10) -> ReLU -> Linear(5) -> ReLU -> Linear(1) = g_f
//   output:  g_s + 1{z = 1} g_f
//
// theta_s is the trunk plus the shared output layer; theta_f is the head.
// ---------------------------------------------------------------------------

struct NestedArch {
  int state_dim = 4;
  int num_actions = 2;
  std::vector<int> trunk{10, 5};
  std::vector<int> head{10, 5};

  int input_dim() const { return state_dim + num_actions; }
  bool operator==(const NestedArch&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NestedArch, state_dim, num_actions, trunk, head)

class NestedQModel {
 public:
  static constexpr int kMaxWidth = 64;
  static constexpr std::size_t kMaxLayers = 8;

  NestedQModel() : NestedQModel(NestedArch{}) {}

  /// All parameters zero.
  explicit NestedQModel(NestedArch arch) : arch_(std::move(arch)) {
    if (arch_.state_dim < 1 || arch_.num_actions < 1) throw Error("invalid architecture dimensions");
    if (arch_.trunk.empty()) throw Error("trunk needs at least one hidden layer");
    if (arch_.trunk.size() + 1 > kMaxLayers || arch_.head.size() + 1 > kMaxLayers) {
      throw Error("too many layers");
    }
    if (arch_.input_dim() > kMaxWidth) throw Error("input too wide");
    std::size_t offset = 0;
    int in = arch_.input_dim();
    for (int w : arch_.trunk) {
      trunk_.push_back(make_layer(offset, in, w));
      in = w;
    }
    const int trunk_out = in;
    shared_out_ = make_layer(offset, trunk_out, 1);
    shared_size_ = offset;
    for (int w : arch_.head) {
      head_.push_back(make_layer(offset, in, w));
      in = w;
    }
    head_out_ = make_layer(offset, in, 1);
    params_.assign(offset, 0.0);
  }

  const NestedArch& arch() const { return arch_; }
  int state_dim() const { return arch_.state_dim; }
  int num_actions() const { return arch_.num_actions; }
  int input_dim() const { return arch_.input_dim(); }

  std::size_t size() const { return params_.size(); }
  std::size_t shared_size() const { return shared_size_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> shared_params() { return std::span<double>(params_).first(shared_size_); }
  std::span<const double> shared_params() const { return std::span<const double>(params_).first(shared_size_); }
  std::span<double> foreground_params() { return std::span<double>(params_).subspan(shared_size_); }
  std::span<const double> foreground_params() const { return std::span<const double>(params_).subspan(shared_size_); }

  /// Weight (row-major, out x in) and bias spans of every dense layer, trunk
  /// first, then the shared output, then the head, then the head output.
  struct LayerView {
    std::span<double> weights;
    std::span<double> bias;
    int in;
    int out;
  };
  std::vector<LayerView> layers() {
    std::vector<LayerView> out;
    auto view = [&](const Layer& l) {
      out.push_back({std::span<double>(params_).subspan(l.w, static_cast<std::size_t>(l.in * l.out)),
                     std::span<double>(params_).subspan(l.b, static_cast<std::size_t>(l.out)), l.in, l.out});
    };
    for (const auto& l : trunk_) view(l);
    view(shared_out_);
    for (const auto& l : head_) view(l);
    view(head_out_);
    return out;
  }

  NormStats norm;
  /// Provenance tag of the training stage that produced these parameters.
  std::string stage = "init";

  /// f(x, z) for a raw input x = [state ; one-hot action].
  double value(std::span<const double> x, Group z) const {
    Activations act;
    forward_pass(x, z, act);
    return z == Group::foreground ? act.shared_value + act.head_value : act.shared_value;
  }

  double shared_value(std::span<const double> x) const {
    Activations act;
    forward_pass(x, Group::background, act);
    return act.shared_value;
  }

  /// g_f alone.
  double foreground_value(std::span<const double> x) const {
    Activations act;
    forward_pass(x, Group::foreground, act);
    return act.head_value;
  }

  /// Adds weight * d/dtheta (f(x, z) - target)^2 into grad. Returns f(x, z).
  double add_loss_gradient(std::span<const double> x, Group z, double target, double weight,
                           std::span<double> grad) const {
    check_input(x);
    Activations act;
    forward_pass(x, z, act);
    const bool fg = z == Group::foreground;
    const double f = fg ? act.shared_value + act.head_value : act.shared_value;
    const double upstream = weight * 2.0 * (f - target);
    if (upstream == 0.0) return f;

    const std::size_t depth = trunk_.size();
    std::array<double, kMaxWidth> delta{};  // dL/d(trunk output)
    const auto& h = act.trunk[depth];
    accumulate_output(shared_out_, h, upstream, grad, delta);

    if (fg) {
      const std::size_t head_depth = head_.size();
      std::array<double, kMaxWidth> hd{};
      accumulate_output(head_out_, head_depth == 0 ? h : act.head[head_depth], upstream, grad, hd);
      for (std::size_t l = head_depth; l-- > 0;) {
        const auto& below = l == 0 ? h : act.head[l];
        backprop_dense(head_[l], below, act.head[l + 1], hd, grad);
      }
      for (int i = 0; i < trunk_out_width(); ++i) delta[i] += hd[i];
    }
    for (std::size_t l = depth; l-- > 0;) {
      backprop_dense(trunk_[l], act.trunk[l], act.trunk[l + 1], delta, grad);
    }
    return f;
  }

  bool operator==(const NestedQModel& o) const {
    return arch_ == o.arch_ && params_ == o.params_ && norm == o.norm && stage == o.stage;
  }

 private:
  struct Layer {
    std::size_t w = 0;
    std::size_t b = 0;
    int in = 0;
    int out = 0;
  };
  using Buffer = std::array<double, kMaxWidth>;
  struct Activations {
    std::array<Buffer, kMaxLayers> trunk;  // trunk[0] = normalised input
    std::array<Buffer, kMaxLayers> head;   // head[l] = output of head layer l (l >= 1)
    double shared_value = 0.0;
    double head_value = 0.0;
  };

  static Layer make_layer(std::size_t& offset, int in, int out) {
    if (out < 1 || out > kMaxWidth) throw Error("layer width out of range");
    Layer l{offset, offset + static_cast<std::size_t>(in * out), in, out};
    offset = l.b + static_cast<std::size_t>(out);
    return l;
  }

  int trunk_out_width() const { return trunk_.back().out; }

  void check_input(std::span<const double> x) const {
    if (x.size() != static_cast<std::size_t>(input_dim())) throw Error("input dimension mismatch");
  }

  void dense_relu(const Layer& l, const Buffer& in, Buffer& out) const {
    const double* w = params_.data() + l.w;
    const double* b = params_.data() + l.b;
    for (int o = 0; o < l.out; ++o) {
      double s = b[o];
      const double* row = w + static_cast<std::ptrdiff_t>(o) * l.in;
      for (int i = 0; i < l.in; ++i) s += row[i] * in[i];
      out[o] = s > 0.0 ? s : 0.0;
    }
  }

  double dense_scalar(const Layer& l, const Buffer& in) const {
    const double* w = params_.data() + l.w;
    double s = params_[l.b];
    for (int i = 0; i < l.in; ++i) s += w[i] * in[i];
    return s;
  }

  void forward_pass(std::span<const double> x, Group z, Activations& act) const {
    check_input(x);
    for (std::size_t i = 0; i < x.size(); ++i) act.trunk[0][i] = detail::normalised(norm, x, i, arch_.state_dim);
    for (std::size_t l = 0; l < trunk_.size(); ++l) dense_relu(trunk_[l], act.trunk[l], act.trunk[l + 1]);
    const Buffer& h = act.trunk[trunk_.size()];
    act.shared_value = dense_scalar(shared_out_, h);
    act.head_value = 0.0;
    if (z == Group::foreground) {
      const Buffer* in = &h;
      for (std::size_t l = 0; l < head_.size(); ++l) {
        dense_relu(head_[l], *in, act.head[l + 1]);
        in = &act.head[l + 1];
      }
      act.head_value = dense_scalar(head_out_, *in);
    }
  }

  // Scalar output layer: grads for its weights, and upstream * w into delta_in.
  void accumulate_output(const Layer& l, const Buffer& in, double upstream, std::span<double> grad,
                         Buffer& delta_in) const {
    for (int i = 0; i < l.in; ++i) {
      grad[l.w + static_cast<std::size_t>(i)] += upstream * in[i];
      delta_in[i] = upstream * params_[l.w + static_cast<std::size_t>(i)];
    }
    grad[l.b] += upstream;
  }

  // ReLU dense layer. `delta` holds dL/d(out) on entry and dL/d(in) on exit.
  void backprop_dense(const Layer& l, const Buffer& in, const Buffer& out, Buffer& delta,
                      std::span<double> grad) const {
    Buffer pre{};
    for (int o = 0; o < l.out; ++o) pre[o] = out[o] > 0.0 ? delta[o] : 0.0;
    Buffer next{};
    for (int o = 0; o < l.out; ++o) {
      if (pre[o] == 0.0) continue;
      const std::size_t row = l.w + static_cast<std::size_t>(o * l.in);
      for (int i = 0; i < l.in; ++i) {
        grad[row + static_cast<std::size_t>(i)] += pre[o] * in[i];
        next[i] += pre[o] * params_[row + static_cast<std::size_t>(i)];
      }
      grad[l.b + static_cast<std::size_t>(o)] += pre[o];
    }
    delta = next;
  }

  NestedArch arch_;
  std::vector<Layer> trunk_;
  Layer shared_out_;
  std::vector<Layer> head_;
  Layer head_out_;
  std::size_t shared_size_ = 0;
  std::vector<double> params_;
};

/// Weights uniform on +-1/sqrt(fan_in), biases zero.
inline NestedQModel init_params(const NestedArch& arch, std::uint64_t seed) {
  NestedQModel m(arch);
  SeedStream rng(seed);
  for (auto& layer : m.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in));
    for (auto& w : layer.weights) w = rng.uniform(-bound, bound);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Linear model: g_s = x.beta_s + beta_0s, g_f = x.beta_f + beta_0f, so
// f(x, 1) = x.(beta_s + beta_f) + beta_0s + beta_0f. Parameter layout is
// [beta_s, beta_0s | beta_f, beta_0f].
// ---------------------------------------------------------------------------

class LinearQModel {
 public:
  LinearQModel() : LinearQModel(4, 2) {}
  LinearQModel(int state_dim, int num_actions)
      : state_dim_(state_dim),
        num_actions_(num_actions),
        params_(2 * static_cast<std::size_t>(state_dim + num_actions + 1), 0.0) {
    if (state_dim < 1 || num_actions < 1) throw Error("invalid linear model dimensions");
  }

  int state_dim() const { return state_dim_; }
  int num_actions() const { return num_actions_; }
  int input_dim() const { return state_dim_ + num_actions_; }

  std::size_t size() const { return params_.size(); }
  std::size_t shared_size() const { return static_cast<std::size_t>(input_dim()) + 1; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::span<double> beta_shared() { return std::span<double>(params_).first(static_cast<std::size_t>(input_dim())); }
  double& intercept_shared() { return params_[static_cast<std::size_t>(input_dim())]; }
  std::span<double> beta_foreground() {
    return std::span<double>(params_).subspan(shared_size(), static_cast<std::size_t>(input_dim()));
  }
  double& intercept_foreground() { return params_.back(); }

  NormStats norm;
  std::string stage = "init";

  double value(std::span<const double> x, Group z) const {
    const double s = branch(x, 0);
    return z == Group::foreground ? s + branch(x, shared_size()) : s;
  }
  double shared_value(std::span<const double> x) const { return branch(x, 0); }
  double foreground_value(std::span<const double> x) const { return branch(x, shared_size()); }

  double add_loss_gradient(std::span<const double> x, Group z, double target, double weight,
                           std::span<double> grad) const {
    const double f = value(x, z);
    const double upstream = weight * 2.0 * (f - target);
    const std::size_t d = static_cast<std::size_t>(input_dim());
    const std::size_t branches = z == Group::foreground ? 2 : 1;
    for (std::size_t b = 0; b < branches; ++b) {
      const std::size_t off = b * shared_size();
      for (std::size_t i = 0; i < d; ++i) grad[off + i] += upstream * detail::normalised(norm, x, i, state_dim_);
      grad[off + d] += upstream;
    }
    return f;
  }

  bool operator==(const LinearQModel&) const = default;

 private:
  double branch(std::span<const double> x, std::size_t off) const {
    if (x.size() != static_cast<std::size_t>(input_dim())) throw Error("input dimension mismatch");
    const std::size_t d = x.size();
    double s = params_[off + d];
    for (std::size_t i = 0; i < d; ++i) s += params_[off + i] * detail::normalised(norm, x, i, state_dim_);
    return s;
  }

  int state_dim_;
  int num_actions_;
  std::vector<double> params_;
};

// ---------------------------------------------------------------------------
// Generic operations over both families.
// ---------------------------------------------------------------------------

template <class M>
concept QFunction = requires(M m, const M cm, std::span<const double> x, Group z, std::span<double> g) {
  { cm.value(x, z) } -> std::convertible_to<double>;
  { cm.shared_value(x) } -> std::convertible_to<double>;
  { cm.foreground_value(x) } -> std::convertible_to<double>;
  { cm.add_loss_gradient(x, z, 0.0, 1.0, g) } -> std::convertible_to<double>;
  { cm.state_dim() } -> std::convertible_to<int>;
  { cm.num_actions() } -> std::convertible_to<int>;
  { cm.size() } -> std::convertible_to<std::size_t>;
  { cm.shared_size() } -> std::convertible_to<std::size_t>;
  { m.params() } -> std::same_as<std::span<double>>;
  m.norm;
  m.stage;
};

template <QFunction M>
double forward(const M& model, std::span<const double> state, int action, Group z) {
  if (state.size() != static_cast<std::size_t>(model.state_dim())) throw Error("state dimension mismatch");
  std::array<double, NestedQModel::kMaxWidth> buf{};
  const std::size_t n = state.size() + static_cast<std::size_t>(model.num_actions());
  if (n > buf.size()) throw Error("input too wide");
  std::span<double> x(buf.data(), n);
  encode_input(state, action, model.num_actions(), x);
  return model.value(x, z);
}

/// Gradient of (target - f(s, a, z))^2; masked partitions are zero.
template <QFunction M>
std::vector<double> gradient(const M& model, std::span<const double> state, int action, Group z, double target,
                             ParamMask mask = ParamMask::all()) {
  if (state.size() != static_cast<std::size_t>(model.state_dim())) throw Error("state dimension mismatch");
  std::vector<double> grad(model.size(), 0.0);
  const auto x = encode_input(state, action, model.num_actions());
  model.add_loss_gradient(x, z, target, 1.0, grad);
  if (!mask.shared) std::fill_n(grad.begin(), model.shared_size(), 0.0);
  if (!mask.foreground) std::fill(grad.begin() + static_cast<std::ptrdiff_t>(model.shared_size()), grad.end(), 0.0);
  return grad;
}

/// theta <- theta - learning_rate * grad on unmasked partitions.
template <QFunction M>
void sgd_update(M& model, std::span<const double> grad, double learning_rate, ParamMask mask) {
  if (!(learning_rate >= 0.0)) throw Error("learning_rate must be non-negative");
  if (grad.size() != model.size()) throw Error("gradient size mismatch");
  auto p = model.params();
  const std::size_t split = model.shared_size();
  if (mask.shared) {
    for (std::size_t i = 0; i < split; ++i) p[i] -= learning_rate * grad[i];
  }
  if (mask.foreground) {
    for (std::size_t i = split; i < p.size(); ++i) p[i] -= learning_rate * grad[i];
  }
}

/// Population mean and standard deviation of every state dimension over
/// `transitions`; zero-variance dimensions get stddev 1.
inline NormStats compute_norm_stats(std::span<const Transition> transitions) {
  if (transitions.empty()) throw Error("cannot fit normalisation on empty input");
  const std::size_t d = transitions.front().state.size();
  NormStats n;
  n.mean.assign(d, 0.0);
  n.stddev.assign(d, 0.0);
  for (const auto& t : transitions) {
    if (t.state.size() != d) throw Error("state dimension mismatch");
    for (std::size_t i = 0; i < d; ++i) n.mean[i] += t.state[i];
  }
  const double count = static_cast<double>(transitions.size());
  for (auto& m : n.mean) m /= count;
  for (const auto& t : transitions) {
    for (std::size_t i = 0; i < d; ++i) {
      const double c = t.state[i] - n.mean[i];
      n.stddev[i] += c * c;
    }
  }
  for (auto& s : n.stddev) {
    s = std::sqrt(s / count);
    if (!(s > 1e-12)) s = 1.0;
  }
  return n;
}

template <QFunction M>
M fit_norm_stats(M model, std::span<const Transition> transitions) {
  NormStats n = compute_norm_stats(transitions);
  if (n.mean.size() != static_cast<std::size_t>(model.state_dim())) throw Error("state dimension mismatch");
  model.norm = std::move(n);
  return model;
}

/// Evaluates a nested model as plain FQI over the augmented state (s, z):
/// the group label is read from the last state coordinate.
template <QFunction M>
class AugmentedStateQ {
 public:
  explicit AugmentedStateQ(const M& model) : model_(&model) {}

  double operator()(std::span<const double> augmented_state, int action) const {
    if (augmented_state.size() != static_cast<std::size_t>(model_->state_dim()) + 1) {
      throw Error("augmented state dimension mismatch");
    }
    const Group z = augmented_state.back() == 1.0 ? Group::foreground : Group::background;
    return forward(*model_, augmented_state.first(augmented_state.size() - 1), action, z);
  }

 private:
  const M* model_;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline nlohmann::json norm_to_json(const NormStats& n) { return {{"mean", n.mean}, {"std", n.stddev}}; }

inline NormStats norm_from_json(const nlohmann::json& j) {
  NormStats n;
  n.mean = j.at("mean").get<std::vector<double>>();
  n.stddev = j.at("std").get<std::vector<double>>();
  if (n.mean.size() != n.stddev.size()) throw Error("malformed normalisation statistics");
  for (double s : n.stddev) {
    if (!(s > 0)) throw Error("normalisation stddev must be positive");
  }
  return n;
}

inline nlohmann::json to_json(const NestedQModel& m) {
  return {{"kind", "nested_mlp"},
          {"arch", m.arch()},
          {"shared_params", std::vector<double>(m.shared_params().begin(), m.shared_params().end())},
          {"foreground_params", std::vector<double>(m.foreground_params().begin(), m.foreground_params().end())},
          {"norm", norm_to_json(m.norm)},
          {"stage", m.stage}};
}

inline nlohmann::json to_json(const LinearQModel& m) {
  auto p = m.params();
  return {{"kind", "linear"},
          {"state_dim", m.state_dim()},
          {"num_actions", m.num_actions()},
          {"shared_params", std::vector<double>(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(m.shared_size()))},
          {"foreground_params", std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(m.shared_size()), p.end())},
          {"norm", norm_to_json(m.norm)},
          {"stage", m.stage}};
}

namespace detail {

template <QFunction M>
void load_params(M& m, const nlohmann::json& j) {
  const auto shared = j.at("shared_params").get<std::vector<double>>();
  const auto fg = j.at("foreground_params").get<std::vector<double>>();
  if (shared.size() != m.shared_size() || shared.size() + fg.size() != m.size()) {
    throw Error("checkpoint parameter count does not match architecture");
  }
  auto p = m.params();
  std::copy(shared.begin(), shared.end(), p.begin());
  std::copy(fg.begin(), fg.end(), p.begin() + static_cast<std::ptrdiff_t>(shared.size()));
  m.norm = norm_from_json(j.at("norm"));
  if (!m.norm.empty() && m.norm.mean.size() != static_cast<std::size_t>(m.state_dim())) {
    throw Error("normalisation dimension does not match architecture");
  }
  m.stage = j.value("stage", "unknown");
}

}  // namespace detail

inline NestedQModel nested_model_from_json(const nlohmann::json& j) {
  if (j.at("kind") != "nested_mlp") throw Error("checkpoint is not a nested_mlp model");
  NestedQModel m(j.at("arch").get<NestedArch>());
  detail::load_params(m, j);
  return m;
}

inline LinearQModel linear_model_from_json(const nlohmann::json& j) {
  if (j.at("kind") != "linear") throw Error("checkpoint is not a linear model");
  LinearQModel m(j.at("state_dim").get<int>(), j.at("num_actions").get<int>());
  detail::load_params(m, j);
  return m;
}

}  // namespace nfqi
