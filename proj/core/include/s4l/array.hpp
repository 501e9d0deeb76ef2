#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "s4l/errors.hpp"

namespace s4l {

// Dense row-major n-d array. The autograd engine and the network layers all
// operate on these; shape is dynamic, storage is flat.
template <class T>
struct Arr {
  std::vector<int64_t> shape;
  std::vector<T> v;

  Arr() = default;
  explicit Arr(std::vector<int64_t> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  Arr(std::vector<int64_t> s, std::vector<T> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel_of(shape))
      raise(ErrorKind::Shape, "array data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t ndim() const { return shape.size(); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  static Arr zeros(std::vector<int64_t> s) { return Arr(std::move(s)); }
  static Arr full(std::vector<int64_t> s, T value) {
    Arr a(std::move(s));
    std::fill(a.v.begin(), a.v.end(), value);
    return a;
  }
  static Arr scalar(T value) { return Arr({1}, {value}); }

  bool same_shape(const Arr& o) const { return shape == o.shape; }

  template <class U>
  Arr<U> cast() const {
    Arr<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i)
      os << shape[i] << (i + 1 < shape.size() ? "," : "");
    os << "]";
    return os.str();
  }
};

template <class T>
inline void check_shape(const Arr<T>& a, const std::vector<int64_t>& want,
                        const char* what) {
  if (a.shape != want)
    raise(ErrorKind::Shape, std::string(what) + ": got " + a.shape_str());
}

using Arrf = Arr<float>;
using Arrd = Arr<double>;

}  // namespace s4l
