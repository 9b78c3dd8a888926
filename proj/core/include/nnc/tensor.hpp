#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace nnc {

enum class DType : uint8_t { F32 = 0, F64 = 1 };

inline size_t dtype_size(DType dt) { return dt == DType::F32 ? 4 : 8; }
const char* dtype_name(DType dt);

/// Dense host tensor. Storage is row-major, little-endian, owned.
/// Rank 0 denotes a scalar with one element.
class Tensor {
public:
    Tensor() = default;
    Tensor(DType dt, std::vector<int64_t> dims);

    static Tensor scalar(DType dt, double v);
    static Tensor from_f32(std::vector<int64_t> dims, std::vector<float> values);
    static Tensor from_f64(std::vector<int64_t> dims, std::vector<double> values);

    DType dtype() const { return dtype_; }
    const std::vector<int64_t>& dims() const { return dims_; }
    size_t rank() const { return dims_.size(); }
    int64_t elements() const;
    size_t byte_size() const { return data_.size(); }

    const uint8_t* data() const { return data_.data(); }
    uint8_t* data() { return data_.data(); }

    const float* f32() const;
    float* f32();
    const double* f64() const;
    double* f64();

    // Converting element access; index is the flat row-major offset.
    double get(int64_t i) const;
    void set(int64_t i, double v);

    Tensor cast(DType dt) const;
    Tensor reshaped(std::vector<int64_t> dims) const;

    bool same_values(const Tensor& other, double rel_tol) const;
    bool bitwise_equal(const Tensor& other) const;

private:
    DType dtype_ = DType::F32;
    std::vector<int64_t> dims_;
    std::vector<uint8_t> data_;
};

int64_t element_count(const std::vector<int64_t>& dims);
std::string dims_to_string(const std::vector<int64_t>& dims);

/// Relative difference with the denominator clamped away from zero.
double rel_diff(double a, double b, double clamp = 1e-12);
/// Max elementwise rel_diff across two equally shaped tensors.
double max_rel_diff(const Tensor& a, const Tensor& b, double clamp = 1e-12);

} // namespace nnc
