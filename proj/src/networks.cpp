// Copyright (c) 2026 the reggan authors.
// Distributed under the Apache License, Version 2.0; see the LICENSE file.

#include "reggan/networks.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "reggan/rng.hpp"

namespace reggan::nets {

using tape::Graph;
using tape::Tensor;

// ---------------------------------------------------------------------------
// descriptor
// ---------------------------------------------------------------------------

std::vector<int> Descriptor::disc_conv_channels() const {
  const int c = disc_channels;
  return {c, c, 2 * c, 2 * c, 4 * c, 4 * c, 8 * c, 8 * c};
}

std::vector<int> Descriptor::disc_conv_strides() const {
  // strided convolutions reduce the image dimension after each width doubling
  return {1, 2, 1, 2, 1, 2, 1, 2};
}

std::string Descriptor::serialize() const {
  std::ostringstream out;
  out << "kind=" << (kind == NetKind::Generator ? "generator" : "discriminator") << "\n";
  out << "channels=" << channels << "\n";
  out << "blocks=" << blocks << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", max_disp);
  out << "max_disp=" << buf << "\n";
  out << "disc_channels=" << disc_channels << "\n";
  out << "input_h=" << input_h << "\n";
  out << "input_w=" << input_w << "\n";
  out << "seed=" << seed << "\n";
  return out.str();
}

Descriptor Descriptor::parse(const std::string& text) {
  Descriptor d;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed descriptor line: " + line);
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    if (key == "kind") {
      if (val == "generator")
        d.kind = NetKind::Generator;
      else if (val == "discriminator")
        d.kind = NetKind::Discriminator;
      else
        throw FormatError("unknown network kind: " + val);
    } else if (key == "channels") {
      d.channels = std::stoi(val);
    } else if (key == "blocks") {
      d.blocks = std::stoi(val);
    } else if (key == "max_disp") {
      d.max_disp = std::stod(val);
    } else if (key == "disc_channels") {
      d.disc_channels = std::stoi(val);
    } else if (key == "input_h") {
      d.input_h = std::stoi(val);
    } else if (key == "input_w") {
      d.input_w = std::stoi(val);
    } else if (key == "seed") {
      d.seed = std::stoull(val);
    } else {
      throw FormatError("unknown descriptor key: " + key);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// layout
// ---------------------------------------------------------------------------

namespace {

int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

void validate(const Descriptor& d) {
  if (d.kind == NetKind::Generator) {
    if (d.channels < 8) throw std::invalid_argument("generator channels must be >= 8");
    if (d.blocks < 1) throw std::invalid_argument("generator needs at least one residual block");
    if (!(d.max_disp > 0)) throw std::invalid_argument("max_disp must be positive");
  } else {
    if (d.disc_channels < 2) throw std::invalid_argument("discriminator base width must be >= 2");
    if (d.input_h < 16 || d.input_w < 16)
      throw std::invalid_argument("discriminator input must be at least 16x16");
  }
}

}  // namespace

std::vector<BlockSpec> layout(const Descriptor& d) {
  validate(d);
  std::vector<BlockSpec> out;
  if (d.kind == NetKind::Generator) {
    const int C = d.channels;
    out.push_back({"head.w", {C, 2, 3, 3}, true});
    out.push_back({"head.b", {C}, true});
    for (int i = 0; i < d.blocks; ++i) {
      std::string p = "block" + std::to_string(i) + ".";
      for (int half = 1; half <= 2; ++half) {
        std::string q = p + "conv" + std::to_string(half) + ".";
        out.push_back({q + "w", {C, C, 3, 3}, true});
        out.push_back({q + "b", {C}, true});
        std::string r = p + "bn" + std::to_string(half) + ".";
        out.push_back({r + "gamma", {C}, true});
        out.push_back({r + "beta", {C}, true});
        out.push_back({r + "mean", {C}, false});
        out.push_back({r + "var", {C}, false});
      }
    }
    out.push_back({"out.w", {2, C, 3, 3}, true});
    out.push_back({"out.b", {2}, true});
  } else {
    const std::vector<int> ch = d.disc_conv_channels();
    const std::vector<int> st = d.disc_conv_strides();
    int cin = 2;
    int h = d.input_h, w = d.input_w;
    for (std::size_t i = 0; i < ch.size(); ++i) {
      std::string p = "conv" + std::to_string(i) + ".";
      out.push_back({p + "w", {ch[i], cin, 3, 3}, true});
      out.push_back({p + "b", {ch[i]}, true});
      cin = ch[i];
      h = conv_out_size(h, 3, st[i], 1);
      w = conv_out_size(w, 3, st[i], 1);
      if (h <= 0 || w <= 0) throw std::invalid_argument("discriminator input too small");
    }
    const int flat = cin * h * w;
    out.push_back({"fc1.w", {128, flat}, true});
    out.push_back({"fc1.b", {128}, true});
    out.push_back({"fc2.w", {1, 128}, true});
    out.push_back({"fc2.b", {1}, true});
  }
  return out;
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

template <class T>
NetParamsT<T> build_network_t(const Descriptor& desc) {
  NetParamsT<T> p;
  p.desc = desc;
  std::vector<BlockSpec> specs = layout(desc);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const BlockSpec& s = specs[i];
    ParamBlock<T> blk;
    blk.name = s.name;
    blk.learnable = s.learnable;
    blk.value = Tensor<T>(s.shape);
    const bool is_kernel = s.shape.size() == 4;
    const bool is_dense = s.shape.size() == 2;
    if (s.name == "out.w" || s.name == "out.b") {
      // zero-initialized flow head: a fresh generator is the identity warp
    } else if (is_kernel || is_dense) {
      Rng rng(derive_seed(desc.seed, 0x1417ULL, i));
      const std::size_t fan_in =
          is_kernel ? std::size_t(s.shape[1]) * s.shape[2] * s.shape[3] : std::size_t(s.shape[1]);
      const double stddev = std::sqrt(2.0 / double(fan_in));
      for (auto& v : blk.value.data) v = T(rng.normal(0.0, stddev));
    } else if (s.name.ends_with("gamma") || s.name.ends_with("var")) {
      for (auto& v : blk.value.data) v = T(1);
    }
    // biases, beta and running means stay zero
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

template NetParamsT<float> build_network_t<float>(const Descriptor&);
template NetParamsT<double> build_network_t<double>(const Descriptor&);

NetParams build_generator(int channels, int blocks, std::uint64_t seed, double max_disp) {
  Descriptor d;
  d.kind = NetKind::Generator;
  d.channels = channels;
  d.blocks = blocks;
  d.max_disp = max_disp;
  d.seed = seed;
  return build_network_t<float>(d);
}

NetParams build_discriminator(int base_channels, int input_w, int input_h, std::uint64_t seed) {
  Descriptor d;
  d.kind = NetKind::Discriminator;
  d.disc_channels = base_channels;
  d.input_w = input_w;
  d.input_h = input_h;
  d.seed = seed;
  return build_network_t<float>(d);
}

// ---------------------------------------------------------------------------
// binding + forward
// ---------------------------------------------------------------------------

template <class T>
Binding<T> bind(tape::Graph<T>& g, NetParamsT<T>& params, bool trainable) {
  Binding<T> b;
  b.params = &params;
  b.ids.reserve(params.blocks.size());
  for (auto& blk : params.blocks)
    b.ids.push_back(blk.learnable ? g.leaf(blk.value, trainable) : -1);
  return b;
}

template Binding<float> bind<float>(tape::Graph<float>&, NetParamsT<float>&, bool);
template Binding<double> bind<double>(tape::Graph<double>&, NetParamsT<double>&, bool);

namespace {

// walks the binding in layout order
template <class T>
struct Cursor {
  const Binding<T>& b;
  std::size_t next = 0;
  int id() { return b.ids[next++]; }
  tape::Tensor<T>* buffer() { return &b.params->blocks[next++].value; }
};

}  // namespace

template <class T>
GenNodes generator_forward_graph(tape::Graph<T>& g, const Binding<T>& b, int flt, int ref,
                                 bool training) {
  const Descriptor& d = b.params->desc;
  if (d.kind != NetKind::Generator) throw std::invalid_argument("params are not a generator");
  Cursor<T> cur{b};
  int x = g.concat_c(flt, ref);
  // note: cursor reads are sequenced as statements (argument evaluation
  // order would not be)
  int head_w = cur.id();
  int head_b = cur.id();
  int h = g.relu(g.conv2d(x, head_w, head_b, 1, 1));
  for (int i = 0; i < d.blocks; ++i) {
    int w1 = cur.id();
    int b1 = cur.id();
    int g1 = cur.id();
    int be1 = cur.id();
    auto m1 = cur.buffer();
    auto v1 = cur.buffer();
    int t = g.relu(
        g.batchnorm(g.conv2d(h, w1, b1, 1, 1), g1, be1, m1, v1, training, T(0.1), T(1e-5)));
    int w2 = cur.id();
    int b2 = cur.id();
    int g2 = cur.id();
    int be2 = cur.id();
    auto m2 = cur.buffer();
    auto v2 = cur.buffer();
    t = g.batchnorm(g.conv2d(t, w2, b2, 1, 1), g2, be2, m2, v2, training, T(0.1), T(1e-5));
    h = g.add(h, t);
  }
  int out_w = cur.id();
  int out_b = cur.id();
  int raw = g.conv2d(h, out_w, out_b, 1, 1);
  GenNodes out;
  out.field = g.scale(g.tanh_op(raw), T(d.max_disp));
  out.trans = g.warp_nchw(flt, out.field);
  return out;
}

template GenNodes generator_forward_graph<float>(tape::Graph<float>&, const Binding<float>&, int,
                                                 int, bool);
template GenNodes generator_forward_graph<double>(tape::Graph<double>&, const Binding<double>&,
                                                  int, int, bool);

template <class T>
int discriminator_forward_graph(tape::Graph<T>& g, const Binding<T>& b, int candidate,
                                int reference) {
  const Descriptor& d = b.params->desc;
  if (d.kind != NetKind::Discriminator)
    throw std::invalid_argument("params are not a discriminator");
  const auto& I = g.val(candidate);
  if (I.shape.size() != 4 || I.dim(2) != d.input_h || I.dim(3) != d.input_w)
    throw DimensionError("discriminator: input size does not match the architecture");
  Cursor<T> cur{b};
  int x = g.concat_c(candidate, reference);
  const std::vector<int> strides = d.disc_conv_strides();
  for (std::size_t i = 0; i < strides.size(); ++i) {
    int w = cur.id();
    int bias = cur.id();
    x = g.leaky_relu(g.conv2d(x, w, bias, strides[i], 1), T(0.2));
  }
  const auto shape = g.val(x).shape;
  const int flat = shape[1] * shape[2] * shape[3];
  x = g.reshape(x, {shape[0], flat});
  int fc1_w = cur.id();
  int fc1_b = cur.id();
  x = g.leaky_relu(g.dense(x, fc1_w, fc1_b), T(0.2));
  int fc2_w = cur.id();
  int fc2_b = cur.id();
  x = g.dense(x, fc2_w, fc2_b);
  return g.sigmoid_op(x);
}

template int discriminator_forward_graph<float>(tape::Graph<float>&, const Binding<float>&, int,
                                                int);
template int discriminator_forward_graph<double>(tape::Graph<double>&, const Binding<double>&,
                                                 int, int);

// ---------------------------------------------------------------------------
// image-level API
// ---------------------------------------------------------------------------

namespace {

tape::Tensor<float> image_tensor(const Image& img) {
  tape::Tensor<float> t({1, 1, img.height(), img.width()});
  std::copy(img.data().begin(), img.data().end(), t.data.begin());
  return t;
}

}  // namespace

GeneratorOutput generator_forward(const NetParams& params, const Image& ref, const Image& flt) {
  if (!ref.same_size(flt)) throw DimensionError("generator_forward: image dimensions differ");
  Graph<float> g;
  // evaluation mode never mutates the statistics, but binding needs mutability
  auto& p = const_cast<NetParams&>(params);
  Binding<float> b = bind(g, p, false);
  int nflt = g.leaf(image_tensor(flt), false);
  int nref = g.leaf(image_tensor(ref), false);
  GenNodes nodes = generator_forward_graph(g, b, nflt, nref, false);
  const auto& ft = g.val(nodes.field);
  const std::size_t n = flt.size();
  std::vector<float> dx(ft.data.begin(), ft.data.begin() + long(n));
  std::vector<float> dy(ft.data.begin() + long(n), ft.data.end());
  DeformationField field(flt.width(), flt.height(), std::move(dx), std::move(dy));
  Image trans = imaging::warp(flt, field);
  return GeneratorOutput{std::move(field), std::move(trans)};
}

double discriminator_forward(const NetParams& params, const Image& img, const Image& ref) {
  if (!img.same_size(ref)) throw DimensionError("discriminator_forward: image dimensions differ");
  Graph<float> g;
  auto& p = const_cast<NetParams&>(params);
  Binding<float> b = bind(g, p, false);
  int ni = g.leaf(image_tensor(img), false);
  int nr = g.leaf(image_tensor(ref), false);
  int prob = discriminator_forward_graph(g, b, ni, nr);
  return double(g.val(prob).data[0]);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

}  // namespace

void save_checkpoint(const NetParams& params, const std::string& path) {
  std::string out = "RGPT";
  out.push_back(char(1));  // format version
  std::string desc = params.desc.serialize();
  put_u32le(out, std::uint32_t(desc.size()));
  out += desc;
  for (const auto& blk : params.blocks)
    for (float v : blk.value.data) put_u32le(out, std::bit_cast<std::uint32_t>(v));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open checkpoint for writing: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f.good()) throw IoError("checkpoint write failure: " + path);
}

NetParams load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 9 || bytes.compare(0, 4, "RGPT") != 0)
    throw FormatError("not an RGPT checkpoint: " + path);
  if (bytes[4] != char(1)) throw FormatError("unsupported checkpoint version: " + path);
  auto u32 = [&](std::size_t off) {
    return std::uint32_t(std::uint8_t(bytes[off])) |
           (std::uint32_t(std::uint8_t(bytes[off + 1])) << 8) |
           (std::uint32_t(std::uint8_t(bytes[off + 2])) << 16) |
           (std::uint32_t(std::uint8_t(bytes[off + 3])) << 24);
  };
  std::uint32_t dlen = u32(5);
  if (bytes.size() < 9 + std::size_t(dlen))
    throw FormatError("truncated checkpoint descriptor: " + path);
  Descriptor desc = Descriptor::parse(bytes.substr(9, dlen));
  NetParams params = build_network_t<float>(desc);
  std::size_t off = 9 + dlen;
  const std::size_t expect = params.total_scalars() * 4;
  if (bytes.size() - off != expect) throw FormatError("truncated checkpoint payload: " + path);
  for (auto& blk : params.blocks)
    for (auto& v : blk.value.data) {
      v = std::bit_cast<float>(u32(off));
      off += 4;
    }
  return params;
}

}  // namespace reggan::nets
