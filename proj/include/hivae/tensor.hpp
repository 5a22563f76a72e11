#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <new>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hivae/errors.hpp"

namespace hivae {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// 64-byte aligned allocator. Eigen's vectorized reductions peel a prefix that
// depends on the start address; fixed alignment keeps results bitwise
// reproducible across runs.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

// Dense row-major array of doubles. The plain value type used for data,
// latents and parameters outside of autograd graphs.
struct Array {
  Shape shape;
  Buffer data;

  Array() = default;
  explicit Array(Shape s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}
  Array(Shape s, Buffer d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw ConfigError("Array: data size " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  Array reshaped(Shape s) const {
    if (numel(s) != size())
      throw ConfigError("reshape " + shape_str(shape) + " -> " + shape_str(s));
    return Array(std::move(s), data);
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Array& a, const Array& b) {
    return a.shape == b.shape && a.data == b.data;
  }
};

inline double max_abs_diff(const Array& a, const Array& b) {
  if (a.shape != b.shape) throw ConfigError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sum_sq(const Array& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return s;
}

// Seeded random source. All stochastic operations take one explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  double normal() { return normal_(eng_); }
  std::uint64_t next_u64() { return eng_(); }
  int randint(int n) { return std::uniform_int_distribution<int>(0, n - 1)(eng_); }

  Array normal_array(const Shape& s, double stddev = 1.0) {
    Array a(s);
    for (double& v : a.data) v = stddev * normal();
    return a;
  }

  // Independent child stream; used to split seeds for parallel runs.
  Rng split() { return Rng(next_u64() ^ 0x9E3779B97F4A7C15ull); }

  std::mt19937_64& engine() { return eng_; }

  std::string state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
    normal_.reset();
  }

 private:
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Index helpers for rank-N row-major layouts.
inline std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[static_cast<std::size_t>(i)] = st[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(s[static_cast<std::size_t>(i) + 1]);
  return st;
}

// Source index for every element of permute(x, axes): out.dim(i) == in.dim(axes[i]).
inline std::vector<std::int32_t> permute_index(const Shape& in, const std::vector<int>& axes, Shape* out_shape = nullptr) {
  const std::size_t r = in.size();
  if (axes.size() != r) throw ConfigError("permute: axes rank mismatch");
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = in[static_cast<std::size_t>(axes[i])];
  auto in_st = strides_of(in);
  std::vector<std::int32_t> idx(numel(in));
  std::vector<int> pos(r, 0);
  for (std::size_t n = 0; n < idx.size(); ++n) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += static_cast<std::size_t>(pos[i]) * in_st[static_cast<std::size_t>(axes[i])];
    idx[n] = static_cast<std::int32_t>(src);
    for (int i = static_cast<int>(r) - 1; i >= 0; --i) {
      if (++pos[static_cast<std::size_t>(i)] < out[static_cast<std::size_t>(i)]) break;
      pos[static_cast<std::size_t>(i)] = 0;
    }
  }
  if (out_shape) *out_shape = out;
  return idx;
}

inline Array permute(const Array& a, const std::vector<int>& axes) {
  Shape out;
  auto idx = permute_index(a.shape, axes, &out);
  Array r(out);
  for (std::size_t i = 0; i < idx.size(); ++i) r[i] = a[static_cast<std::size_t>(idx[i])];
  return r;
}

// FNV-1a over the raw bytes; used for freeze and reproducibility checks.
inline std::uint64_t hash_bytes(const void* p, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  const auto* b = static_cast<const unsigned char*>(p);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace hivae
