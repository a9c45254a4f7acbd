#pragma once

// Forward and backward kernels for the layer primitives. All kernels are pure
// functions of their inputs. Backward kernels *accumulate* into the gradient
// buffers they are given (nullptr skips that gradient).
//
// Activations are (N, L, C) row-major.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ectnet/numerics/tensor.hpp"

namespace ectnet::kernels {

/// floor((length + 2*padding - kernel) / stride) + 1, or throws if not positive.
std::size_t output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                          std::size_t padding);

struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_size = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  void validate() const;
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
  Shape weight_shape() const { return {out_channels, in_per_group(), kernel_size}; }
  std::size_t output_length(std::size_t length) const {
    return kernels::output_length(length, kernel_size, stride, padding);
  }
};

// conv1d: x (N, L, Cin), weight (Cout, Cin/groups, K), bias (Cout) -> (N, L', Cout)
template <typename T>
Tensor<T> conv1d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                         const ConvGeometry& geom);
template <typename T>
void conv1d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                     const ConvGeometry& geom, Tensor<T>* dx, Tensor<T>* dweight,
                     Tensor<T>* dbias);

// maxpool1d: padding acts as -inf; argmax holds the winning input position per output.
template <typename T>
struct MaxPoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;
};
template <typename T>
MaxPoolResult<T> maxpool1d_forward(const Tensor<T>& x, std::size_t kernel, std::size_t stride,
                                   std::size_t padding);
template <typename T>
void maxpool1d_backward(const Tensor<T>& dy, std::span<const std::uint32_t> argmax,
                        std::size_t input_length, Tensor<T>& dx);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);
template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

// Batch normalisation over the N*L axis, per channel (last axis).
template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;         // x-hat
  std::vector<T> mean;          // per channel
  std::vector<T> variance;      // population variance of the batch
  std::vector<T> inv_std;       // 1 / sqrt(var + eps)
};
template <typename T>
Tensor<T> batchnorm_train_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                  const Tensor<T>& beta, T epsilon, BatchNormCache<T>& cache);
template <typename T>
void batchnorm_train_backward(const Tensor<T>& dy, const Tensor<T>& gamma,
                              const BatchNormCache<T>& cache, Tensor<T>* dx, Tensor<T>* dgamma,
                              Tensor<T>* dbeta);
template <typename T>
Tensor<T> batchnorm_infer_forward(const Tensor<T>& x, const Tensor<T>& gamma,
                                  const Tensor<T>& beta, const Tensor<T>& running_mean,
                                  const Tensor<T>& running_var, T epsilon);
template <typename T>
void batchnorm_infer_backward(const Tensor<T>& x, const Tensor<T>& dy, const Tensor<T>& gamma,
                              const Tensor<T>& running_mean, const Tensor<T>& running_var,
                              T epsilon, Tensor<T>* dx, Tensor<T>* dgamma, Tensor<T>* dbeta);

// (N, L, C) -> (N, C)
template <typename T>
Tensor<T> global_avg_pool_forward(const Tensor<T>& x);
template <typename T>
void global_avg_pool_backward(const Tensor<T>& dy, std::size_t length, Tensor<T>& dx);

// x (N, Din) * W (Din, Dout) + b (Dout)
template <typename T>
Tensor<T> fully_connected_forward(const Tensor<T>& x, const Tensor<T>& weight,
                                  const Tensor<T>& bias);
template <typename T>
void fully_connected_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                              Tensor<T>* dx, Tensor<T>* dweight, Tensor<T>* dbias);

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

template <typename T>
struct SoftmaxCrossEntropy {
  double loss = 0.0;   // mean over the batch
  Tensor<T> probs;     // (N, K)
};
/// smoothing = 0 gives plain one-hot targets.
template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy_forward(const Tensor<T>& logits,
                                                     std::span<const int> labels,
                                                     double smoothing = 0.0);
/// d(mean loss)/d logits = (probs - target) / N, scaled by upstream.
template <typename T>
void softmax_cross_entropy_backward(const Tensor<T>& probs, std::span<const int> labels,
                                    double upstream, double smoothing, Tensor<T>& dlogits);

}  // namespace ectnet::kernels
