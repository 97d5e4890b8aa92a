// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.
//
// The registration generator (residual CNN emitting a bounded dense
// displacement field; the registered image is always produced by warping,
// never painted) and the pair discriminator (8 strided conv layers with
// doubling widths, two dense layers, sigmoid).

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reggan/image.hpp"
#include "reggan/tape.hpp"

namespace reggan::nets {

using imaging::DeformationField;
using imaging::Image;

enum class NetKind { Generator, Discriminator };

struct Descriptor {
  NetKind kind = NetKind::Generator;
  int channels = 32;       // generator width (two conv layers of this width per block)
  int blocks = 4;          // residual blocks
  double max_disp = 10.0;  // tanh output scaling, pixels
  int disc_channels = 8;   // discriminator base width c; conv widths c,c,2c,2c,4c,4c,8c,8c
  int input_h = 64;        // discriminator input size (the dense head pins it)
  int input_w = 64;
  std::uint64_t seed = 0;

  std::string serialize() const;
  static Descriptor parse(const std::string& text);
  std::vector<int> disc_conv_channels() const;
  std::vector<int> disc_conv_strides() const;
};

template <class T>
struct ParamBlock {
  std::string name;
  tape::Tensor<T> value;
  bool learnable = true;  // false for batch-norm running statistics
};

template <class T>
struct NetParamsT {
  Descriptor desc;
  std::vector<ParamBlock<T>> blocks;

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += b.value.numel();
    return n;
  }
  bool all_finite() const {
    for (const auto& b : blocks)
      if (!b.value.all_finite()) return false;
    return true;
  }
};

using NetParams = NetParamsT<float>;

// Shape layout shared by construction, checkpoint I/O and graph binding.
struct BlockSpec {
  std::string name;
  std::vector<int> shape;
  bool learnable;
};
std::vector<BlockSpec> layout(const Descriptor& desc);

template <class T>
NetParamsT<T> build_network_t(const Descriptor& desc);

NetParams build_generator(int channels = 32, int blocks = 4, std::uint64_t seed = 0,
                          double max_disp = 10.0);
NetParams build_discriminator(int base_channels, int input_w, int input_h,
                              std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Graph binding: learnable blocks become leaf nodes, running statistics stay
// pointers into the parameter set (mutated by training-mode batch norm).
// Binding the same params twice in one graph reuses node ids, so gradients
// from multiple forward passes accumulate correctly.
// ---------------------------------------------------------------------------
template <class T>
struct Binding {
  NetParamsT<T>* params = nullptr;
  std::vector<int> ids;  // node id per block; -1 for buffers
};

template <class T>
Binding<T> bind(tape::Graph<T>& g, NetParamsT<T>& params, bool trainable);

struct GenNodes {
  int field = -1;  // [N,2,H,W], bounded by max_disp
  int trans = -1;  // [N,1,H,W], warp of the floating input by the field
};

template <class T>
GenNodes generator_forward_graph(tape::Graph<T>& g, const Binding<T>& b, int flt, int ref,
                                 bool training);

// Returns the probability node [N,1].
template <class T>
int discriminator_forward_graph(tape::Graph<T>& g, const Binding<T>& b, int candidate,
                                int reference);

// ---------------------------------------------------------------------------
// Image-level API (evaluation mode, frozen statistics).
// ---------------------------------------------------------------------------
struct GeneratorOutput {
  DeformationField field;
  Image trans;  // == imaging::warp(flt, field), bit-exactly
};

GeneratorOutput generator_forward(const NetParams& params, const Image& ref, const Image& flt);
double discriminator_forward(const NetParams& params, const Image& img, const Image& ref);

// ---------------------------------------------------------------------------
// Checkpoints: "RGPT", version byte, length-prefixed descriptor text, then
// the parameter blocks as little-endian float arrays in layout order.
// ---------------------------------------------------------------------------
void save_checkpoint(const NetParams& params, const std::string& path);
NetParams load_checkpoint(const std::string& path);

}  // namespace reggan::nets
