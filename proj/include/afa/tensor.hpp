#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace afa {

/// Thrown when tensor shapes are incompatible with an operation.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown when values (not shapes) violate an operation's contract.
class ValueError : public std::runtime_error {
 public:
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown on file-format and I/O failures.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown on invalid configuration input.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense rank-4 layout, batch x channel x height x width, row-major.
using Shape = std::array<int, 4>;

inline std::size_t numel(const Shape& s) {
  return static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3];
}

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," +
         std::to_string(s[2]) + "," + std::to_string(s[3]) + ")";
}

namespace detail {
inline std::atomic<std::int64_t> tensor_id_counter{1};
inline std::int64_t next_tensor_id() {
  return tensor_id_counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

/// Dense NCHW tensor. Copies share the id: the id names the logical value
/// a graph node saw at record time, so in-place mutation between recording
/// and backward is not allowed (see Graph).
template <typename T>
struct Tensor {
  Shape shape{0, 0, 0, 0};
  std::vector<T> data;
  bool requires_grad = false;
  std::int64_t id = detail::next_tensor_id();

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : shape{n, c, h, w}, data(numel(shape), fill) {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
      throw ShapeError("tensor dims must be non-negative, got " + afa::to_string(shape));
    }
  }

  static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w, T(0)); }
  static Tensor ones(int n, int c, int h, int w) { return Tensor(n, c, h, w, T(1)); }
  static Tensor full(int n, int c, int h, int w, T v) { return Tensor(n, c, h, w, v); }
  static Tensor from(Shape s, std::vector<T> values) {
    if (values.size() != numel(s)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + afa::to_string(s));
    }
    Tensor t;
    t.shape = s;
    t.data = std::move(values);
    return t;
  }

  int n() const { return shape[0]; }
  int c() const { return shape[1]; }
  int h() const { return shape[2]; }
  int w() const { return shape[3]; }
  std::size_t size() const { return data.size(); }

  T& at(int in, int ic, int ih, int iw) {
    return data[((static_cast<std::size_t>(in) * shape[1] + ic) * shape[2] + ih) * shape[3] + iw];
  }
  const T& at(int in, int ic, int ih, int iw) const {
    return data[((static_cast<std::size_t>(in) * shape[1] + ic) * shape[2] + ih) * shape[3] + iw];
  }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  bool is_scalar() const { return shape == Shape{1, 1, 1, 1}; }

  /// Value of a (1,1,1,1) tensor.
  T value() const {
    if (!is_scalar()) {
      throw ShapeError("value() requires scalar shape (1,1,1,1), got " + afa::to_string(shape));
    }
    return data[0];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace afa
