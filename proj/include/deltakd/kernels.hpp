// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major kernels for the tiny models. Rows are processed in blocks
// of four so every weight load feeds four accumulations; innermost loops stay
// contiguous. Reduction order is fixed, so results are reproducible.
#pragma once

#include <cstddef>

namespace deltakd::kernels {

/// y[rows x out] = x[rows x in] * W[in x out] (+ b).
template <class T>
void linear_forward(const T* x, std::size_t rows, std::size_t in, const T* w, const T* b, std::size_t out, T* y) {
  for (std::size_t i = 0; i < rows * out; ++i) y[i] = b ? b[i % out] : T(0);
  std::size_t i = 0;
  for (; i + 4 <= rows; i += 4) {
    T* y0 = y + i * out;
    T* y1 = y0 + out;
    T* y2 = y1 + out;
    T* y3 = y2 + out;
    const T* x0 = x + i * in;
    for (std::size_t k = 0; k < in; ++k) {
      const T a0 = x0[k], a1 = x0[in + k], a2 = x0[2 * in + k], a3 = x0[3 * in + k];
      const T* wk = w + k * out;
#pragma omp simd
      for (std::size_t j = 0; j < out; ++j) {
        const T wj = wk[j];
        y0[j] += a0 * wj;
        y1[j] += a1 * wj;
        y2[j] += a2 * wj;
        y3[j] += a3 * wj;
      }
    }
  }
  for (; i < rows; ++i) {
    T* yi = y + i * out;
    const T* xi = x + i * in;
    for (std::size_t k = 0; k < in; ++k) {
      const T xk = xi[k];
      const T* wk = w + k * out;
#pragma omp simd
      for (std::size_t j = 0; j < out; ++j) yi[j] += xk * wk[j];
    }
  }
}

/// Accumulates dW += x^T dy and db += colsum(dy); adds dy W^T into dx when
/// dx is non-null.
template <class T>
void linear_backward(const T* x, const T* dy, std::size_t rows, std::size_t in, const T* w, std::size_t out, T* dx,
                     T* dw, T* db) {
  std::size_t i = 0;
  for (; i + 4 <= rows; i += 4) {
    const T* x0 = x + i * in;
    const T* d0 = dy + i * out;
    const T* d1 = d0 + out;
    const T* d2 = d1 + out;
    const T* d3 = d2 + out;
    for (std::size_t k = 0; k < in; ++k) {
      const T a0 = x0[k], a1 = x0[in + k], a2 = x0[2 * in + k], a3 = x0[3 * in + k];
      T* dwk = dw + k * out;
#pragma omp simd
      for (std::size_t j = 0; j < out; ++j) dwk[j] += a0 * d0[j] + a1 * d1[j] + a2 * d2[j] + a3 * d3[j];
    }
  }
  for (; i < rows; ++i) {
    const T* xi = x + i * in;
    const T* dyi = dy + i * out;
    for (std::size_t k = 0; k < in; ++k) {
      const T xk = xi[k];
      T* dwk = dw + k * out;
#pragma omp simd
      for (std::size_t j = 0; j < out; ++j) dwk[j] += xk * dyi[j];
    }
  }
  if (db) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dyr = dy + r * out;
      for (std::size_t j = 0; j < out; ++j) db[j] += dyr[j];
    }
  }
  if (dx) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dyr = dy + r * out;
      T* dxr = dx + r * in;
      std::size_t k = 0;
      for (; k + 4 <= in; k += 4) {
        const T* w0 = w + k * out;
        const T* w1 = w0 + out;
        const T* w2 = w1 + out;
        const T* w3 = w2 + out;
        T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
#pragma omp simd reduction(+ : s0, s1, s2, s3)
        for (std::size_t j = 0; j < out; ++j) {
          const T g = dyr[j];
          s0 += g * w0[j];
          s1 += g * w1[j];
          s2 += g * w2[j];
          s3 += g * w3[j];
        }
        dxr[k] += s0;
        dxr[k + 1] += s1;
        dxr[k + 2] += s2;
        dxr[k + 3] += s3;
      }
      for (; k < in; ++k) {
        const T* wk = w + k * out;
        T acc = T(0);
#pragma omp simd reduction(+ : acc)
        for (std::size_t j = 0; j < out; ++j) acc += dyr[j] * wk[j];
        dxr[k] += acc;
      }
    }
  }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace deltakd::kernels
