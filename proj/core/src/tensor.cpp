#include "nnc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace nnc {

const char* dtype_name(DType dt) { return dt == DType::F32 ? "f32" : "f64"; }

int64_t element_count(const std::vector<int64_t>& dims) {
    int64_t n = 1;
    for (int64_t d : dims) n *= d;
    return n;
}

Tensor::Tensor(DType dt, std::vector<int64_t> dims) : dtype_(dt), dims_(std::move(dims)) {
    for (int64_t d : dims_) {
        if (d < 1) throw std::invalid_argument("Tensor: extents must be >= 1");
    }
    data_.assign(static_cast<size_t>(element_count(dims_)) * dtype_size(dt), 0);
}

Tensor Tensor::scalar(DType dt, double v) {
    Tensor t(dt, {});
    t.set(0, v);
    return t;
}

Tensor Tensor::from_f32(std::vector<int64_t> dims, std::vector<float> values) {
    Tensor t(DType::F32, std::move(dims));
    if (static_cast<int64_t>(values.size()) != t.elements())
        throw std::invalid_argument("Tensor::from_f32: value count mismatch");
    std::memcpy(t.data(), values.data(), values.size() * sizeof(float));
    return t;
}

Tensor Tensor::from_f64(std::vector<int64_t> dims, std::vector<double> values) {
    Tensor t(DType::F64, std::move(dims));
    if (static_cast<int64_t>(values.size()) != t.elements())
        throw std::invalid_argument("Tensor::from_f64: value count mismatch");
    std::memcpy(t.data(), values.data(), values.size() * sizeof(double));
    return t;
}

int64_t Tensor::elements() const { return element_count(dims_); }

const float* Tensor::f32() const {
    if (dtype_ != DType::F32) throw std::logic_error("Tensor: not f32");
    return reinterpret_cast<const float*>(data_.data());
}
float* Tensor::f32() {
    if (dtype_ != DType::F32) throw std::logic_error("Tensor: not f32");
    return reinterpret_cast<float*>(data_.data());
}
const double* Tensor::f64() const {
    if (dtype_ != DType::F64) throw std::logic_error("Tensor: not f64");
    return reinterpret_cast<const double*>(data_.data());
}
double* Tensor::f64() {
    if (dtype_ != DType::F64) throw std::logic_error("Tensor: not f64");
    return reinterpret_cast<double*>(data_.data());
}

double Tensor::get(int64_t i) const {
    return dtype_ == DType::F32 ? static_cast<double>(f32()[i]) : f64()[i];
}

void Tensor::set(int64_t i, double v) {
    if (dtype_ == DType::F32)
        f32()[i] = static_cast<float>(v);
    else
        f64()[i] = v;
}

Tensor Tensor::cast(DType dt) const {
    if (dt == dtype_) return *this;
    Tensor out(dt, dims_);
    for (int64_t i = 0; i < elements(); ++i) out.set(i, get(i));
    return out;
}

Tensor Tensor::reshaped(std::vector<int64_t> dims) const {
    if (element_count(dims) != elements())
        throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    Tensor out = *this;
    out.dims_ = std::move(dims);
    return out;
}

bool Tensor::same_values(const Tensor& other, double rel_tol) const {
    if (dims_ != other.dims_) return false;
    for (int64_t i = 0; i < elements(); ++i) {
        if (rel_diff(get(i), other.get(i)) > rel_tol) return false;
    }
    return true;
}

bool Tensor::bitwise_equal(const Tensor& other) const {
    return dtype_ == other.dtype_ && dims_ == other.dims_ && data_ == other.data_;
}

std::string dims_to_string(const std::vector<int64_t>& dims) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) os << ", ";
        os << dims[i];
    }
    os << ']';
    return os.str();
}

double rel_diff(double a, double b, double clamp) {
    double denom = std::max({std::abs(a), std::abs(b), clamp});
    return std::abs(a - b) / denom;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double clamp) {
    if (a.dims() != b.dims()) return std::numeric_limits<double>::infinity();
    double worst = 0;
    for (int64_t i = 0; i < a.elements(); ++i)
        worst = std::max(worst, rel_diff(a.get(i), b.get(i), clamp));
    return worst;
}

} // namespace nnc
