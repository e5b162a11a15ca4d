#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <new>
#include <type_traits>
#include <utility>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vito::nn {

/// 64-byte aligned storage. Eigen's vectorized reductions peel differently
/// depending on the start address, so alignment must not vary between runs
/// for results to be bit-reproducible.
///
/// Elements are default-initialized: `AlignedVector<float> v(n)` is left
/// unfilled (scratch buffers are always overwritten). Use assign() to fill.
///
/// Blocks of kLargeBlock bytes or more are 2 MiB aligned and backed by
/// transparent huge pages where the kernel allows it. Training at 512^2
/// allocates and frees gigabytes per step; with 4 KiB pages the page faults
/// cost more than the arithmetic.
namespace detail {
inline constexpr std::size_t kLargeBlock = std::size_t{4} << 20;
void* allocate_large(std::size_t bytes);
void deallocate_large(void* p) noexcept;
}  // namespace detail

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = n * sizeof(T);
    if (bytes >= detail::kLargeBlock) return static_cast<T*>(detail::allocate_large(bytes));
    return static_cast<T*>(::operator new(bytes, kAlign));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    if (n * sizeof(T) >= detail::kLargeBlock) return detail::deallocate_large(p);
    ::operator delete(p, kAlign);
  }

  template <typename U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. Images are (N, C, H, W); token sequences are (N, L, D).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }

  /// Storage left unfilled; for outputs a kernel overwrites completely.
  static Tensor uninitialized(std::vector<int> shape) {
    Tensor t;
    t.data_ = AlignedVector<T>(count(shape));
    t.shape_ = std::move(shape);
    return t;
  }

  static std::size_t count(const std::vector<int>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  const std::vector<int>& shape() const noexcept { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  AlignedVector<T>& storage() noexcept { return data_; }
  const AlignedVector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Pointer to sample `n` (first axis).
  T* sample(int n) noexcept { return data_.data() + static_cast<std::size_t>(n) * (data_.size() / shape_[0]); }
  const T* sample(int n) const noexcept {
    return data_.data() + static_cast<std::size_t>(n) * (data_.size() / shape_[0]);
  }

  void reshape(std::vector<int> shape) {
    if (count(shape) != data_.size()) throw std::invalid_argument("reshape changes element count");
    shape_ = std::move(shape);
  }

  void zero() { std::fill(data_.begin(), data_.end(), T(0)); }

  Tensor& operator+=(const Tensor& o) {
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<int> shape_;
  AlignedVector<T> data_;
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// Named tensor with its gradient. Buffers (running statistics, normalizers)
/// are parameters with `trainable == false`.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, std::vector<int> shape, bool train = true)
      : name(std::move(n)), value(shape), grad(train ? Tensor<T>(shape) : Tensor<T>()), trainable(train) {}
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

}  // namespace vito::nn
