#pragma once

#include <cstddef>

#include "tinyalign/nn/batchnorm.hpp"
#include "tinyalign/nn/conv.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign::nn {

/// Weights of one conv layer. `bias` is present in exported (folded) models;
/// `bn` is present while training.
template <class T>
struct ConvWeights {
  Tensor<T> weight;
  Tensor<T> bias;
  BatchNormParams<T> bn;
};

/// conv -> optional batch norm -> the ConvSpec activation.
template <class T>
Tensor<T> conv_unit(const Tensor<T>& x, const ConvSpec& spec, ConvWeights<T>& w, bool training) {
  Tensor<T> y = conv2d(x, w.weight, w.bias, spec);
  if (w.bn.defined()) y = batch_norm(y, w.bn, training);
  if (spec.activation == Activation::relu6) y = relu6(y);
  return y;
}

struct InvertedResidualSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t expansion = 6;
  std::size_t stride = 1;

  std::size_t hidden_channels() const { return in_channels * expansion; }
  bool residual() const { return stride == 1 && in_channels == out_channels; }
  bool has_expand() const { return expansion != 1; }

  ConvSpec expand() const { return {in_channels, hidden_channels(), 1, 1, 0, 1, false, Activation::relu6}; }
  ConvSpec depthwise() const {
    return {hidden_channels(), hidden_channels(), 3, stride, 1, hidden_channels(), false, Activation::relu6};
  }
  ConvSpec project() const { return {hidden_channels(), out_channels, 1, 1, 0, 1, false, Activation::none}; }
};

template <class T>
struct InvertedResidualWeights {
  ConvWeights<T> expand;  // unused when expansion == 1
  ConvWeights<T> depthwise;
  ConvWeights<T> project;
};

// 1x1 expand + relu6 -> 3x3 depthwise + relu6 -> 1x1 linear projection, with
// an identity skip when stride is 1 and the channel count is unchanged.
template <class T>
Tensor<T> inverted_residual(const Tensor<T>& x, const InvertedResidualSpec& spec, InvertedResidualWeights<T>& w,
                            bool training) {
  Tensor<T> h = spec.has_expand() ? conv_unit(x, spec.expand(), w.expand, training) : x;
  h = conv_unit(h, spec.depthwise(), w.depthwise, training);
  h = conv_unit(h, spec.project(), w.project, training);
  return spec.residual() ? add(x, h) : h;
}

}  // namespace tinyalign::nn
