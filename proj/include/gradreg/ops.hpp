#pragma once

#include "gradreg/tape.hpp"

namespace gradreg {

/// Kernel tensors for conv3d are (out*in) channels over a k^3 grid; channel
/// index is out_channel * in_channels + in_channel.
Shape kernel_shape(int out_channels, int in_channels, int k);

/// Output extent of a "same"-padded conv: ceil(n / stride) per axis.
Dims conv_output_dims(Dims in, int stride);

/// Zero-padded cross-correlation with odd cubic kernel. Output channel count
/// is taken from `bias`.
Var conv3d(Tape& tape, Var input, Var weights, Var bias, int stride);

Var upsample_nearest2x(Tape& tape, Var input);

enum class Activation { kLeakyRelu, kSigmoid };

inline constexpr double kLeakySlope = 0.2;

Var activation(Tape& tape, Var input, Activation kind);
inline Var leaky_relu(Tape& tape, Var input) { return activation(tape, input, Activation::kLeakyRelu); }
inline Var sigmoid(Tape& tape, Var input) { return activation(tape, input, Activation::kSigmoid); }

/// Channels of `a` followed by channels of `b`.
Var concat_channels(Tape& tape, Var a, Var b);
Var slice_channels(Tape& tape, Var input, int begin, int count);

enum class Elementwise { kMul, kAdd };

Var elementwise(Tape& tape, Var a, Var b, Elementwise kind);
inline Var mul(Tape& tape, Var a, Var b) { return elementwise(tape, a, b, Elementwise::kMul); }
inline Var add(Tape& tape, Var a, Var b) { return elementwise(tape, a, b, Elementwise::kAdd); }

Var scale(Tape& tape, Var input, double factor);

/// Sum of all elements, as a scalar node.
Var sum(Tape& tape, Var input);

double sigmoid_value(double x);

}  // namespace gradreg
