#pragma once

// Attentive feature aggregation: learned spatial and channel gates that blend
// feature maps, either pairwise (binary fusion) or as a back-to-front
// composite over an ordered list (multiple feature fusion).

#include <cmath>
#include <string>
#include <vector>

#include "afa/conv.hpp"
#include "afa/graph.hpp"
#include "afa/ops.hpp"
#include "afa/rng.hpp"
#include "afa/tensor.hpp"

namespace afa {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T>* tensor;
};

namespace detail {

/// He-style init: gaussian scaled by sqrt(2 / fan_in), biases untouched.
template <typename T>
void he_fill(Tensor<T>& w, SplitMix64& rng) {
  const double fan_in = static_cast<double>(w.c()) * w.h() * w.w();
  const double s = std::sqrt(2.0 / fan_in);
  for (auto& v : w.data) v = static_cast<T>(s * rng.gaussian());
}

}  // namespace detail

/// Two 3x3 convolutions producing a one-channel gate map. The second
/// convolution starts zeroed so the gate opens at exactly 0.5.
template <typename T>
struct SpatialAttentionParams {
  Tensor<T> conv1_w, conv1_b;  // (mid, C, 3, 3)
  Tensor<T> conv2_w, conv2_b;  // (1, mid, 3, 3)

  static SpatialAttentionParams init(int channels, int mid, SplitMix64& rng,
                                     bool zero_gate = true) {
    SpatialAttentionParams p;
    p.conv1_w = Tensor<T>(mid, channels, 3, 3);
    p.conv1_b = Tensor<T>::zeros(1, mid, 1, 1);
    p.conv2_w = Tensor<T>(1, mid, 3, 3);
    p.conv2_b = Tensor<T>::zeros(1, 1, 1, 1);
    detail::he_fill(p.conv1_w, rng);
    if (!zero_gate) detail::he_fill(p.conv2_w, rng);
    return p;
  }

  /// Default interior width, max(C/4, 1).
  static int default_mid(int channels) { return channels >= 4 ? channels / 4 : 1; }

  int channels() const { return conv1_w.c(); }

  void set_requires_grad(bool on) {
    conv1_w.requires_grad = conv1_b.requires_grad = on;
    conv2_w.requires_grad = conv2_b.requires_grad = on;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".conv1.weight", &conv1_w});
    out.push_back({prefix + ".conv1.bias", &conv1_b});
    out.push_back({prefix + ".conv2.weight", &conv2_w});
    out.push_back({prefix + ".conv2.bias", &conv2_b});
  }
};

/// Bottleneck pair of 1x1 convolutions shared by the avg- and max-pool
/// branches; restores the channel count on the way out.
template <typename T>
struct ChannelAttentionParams {
  Tensor<T> fc1_w, fc1_b;  // (C/r, C, 1, 1)
  Tensor<T> fc2_w, fc2_b;  // (C, C/r, 1, 1)

  static ChannelAttentionParams init(int channels, int reduction, SplitMix64& rng,
                                     bool zero_gate = true) {
    const int q = channels >= reduction ? channels / reduction : 1;
    ChannelAttentionParams p;
    p.fc1_w = Tensor<T>(q, channels, 1, 1);
    p.fc1_b = Tensor<T>::zeros(1, q, 1, 1);
    p.fc2_w = Tensor<T>(channels, q, 1, 1);
    p.fc2_b = Tensor<T>::zeros(1, channels, 1, 1);
    detail::he_fill(p.fc1_w, rng);
    if (!zero_gate) detail::he_fill(p.fc2_w, rng);
    return p;
  }

  int channels() const { return fc1_w.c(); }

  void set_requires_grad(bool on) {
    fc1_w.requires_grad = fc1_b.requires_grad = on;
    fc2_w.requires_grad = fc2_b.requires_grad = on;
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    out.push_back({prefix + ".fc1.weight", &fc1_w});
    out.push_back({prefix + ".fc1.bias", &fc1_b});
    out.push_back({prefix + ".fc2.weight", &fc2_w});
    out.push_back({prefix + ".fc2.bias", &fc2_b});
  }
};

template <typename T>
struct AttentionParams {
  SpatialAttentionParams<T> spatial;
  ChannelAttentionParams<T> channel;

  static AttentionParams init(int channels, SplitMix64& rng, int mid = 0, int reduction = 4,
                              bool zero_gate = true) {
    AttentionParams p;
    p.spatial = SpatialAttentionParams<T>::init(
        channels, mid > 0 ? mid : SpatialAttentionParams<T>::default_mid(channels), rng, zero_gate);
    p.channel = ChannelAttentionParams<T>::init(channels, reduction, rng, zero_gate);
    return p;
  }

  void set_requires_grad(bool on) {
    spatial.set_requires_grad(on);
    channel.set_requires_grad(on);
  }

  void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) {
    spatial.collect(prefix + ".sa", out);
    channel.collect(prefix + ".ca", out);
  }
};

/// a_s: one-channel per-pixel gate in (0,1), shape (N,1,H,W).
template <typename T>
Tensor<T> spatial_attention(Graph<T>& g, const Tensor<T>& f, const SpatialAttentionParams<T>& p) {
  if (f.c() != p.channels()) {
    throw ShapeError("spatial_attention: input C=" + std::to_string(f.c()) +
                     " does not match parameter C=" + std::to_string(p.channels()));
  }
  auto hidden = relu(g, conv2d(g, f, p.conv1_w, p.conv1_b, 1, 1));
  auto logits = conv2d(g, hidden, p.conv2_w, p.conv2_b, 1, 1);
  return sigmoid(g, logits);
}

/// a_c: per-channel gate in (0,1), shape (N,C,1,1). The same bottleneck
/// weights transform the avg- and max-pooled vectors; the two branches are
/// summed with equal weighting before the sigmoid.
template <typename T>
Tensor<T> channel_attention(Graph<T>& g, const Tensor<T>& f, const ChannelAttentionParams<T>& p) {
  if (f.c() != p.channels()) {
    throw ShapeError("channel_attention: input C=" + std::to_string(f.c()) +
                     " does not match parameter C=" + std::to_string(p.channels()));
  }
  auto bottleneck = [&](const Tensor<T>& v) {
    return conv2d(g, relu(g, conv2d(g, v, p.fc1_w, p.fc1_b, 1, 0)), p.fc2_w, p.fc2_b, 1, 0);
  };
  auto avg = global_avg_pool(g, f);
  auto mx = global_max_pool(g, f);
  auto logits = add(g, bottleneck(avg), bottleneck(mx));
  return sigmoid(g, logits);
}

template <typename T>
struct BinaryFusion {
  Tensor<T> out;
  Tensor<T> a_s;  // (N,1,H,W), computed from the shallow input
  Tensor<T> a_c;  // (N,C,1,1), computed from the deep input
};

/// F_agg = a_s (1 - a_c) F_s + (1 - a_s) a_c F_d. The roles are asymmetric:
/// the shallow feature drives the spatial gate, the deep one the channel gate.
template <typename T>
BinaryFusion<T> binary_fuse_full(Graph<T>& g, const Tensor<T>& f_s, const Tensor<T>& f_d,
                                 const SpatialAttentionParams<T>& sp,
                                 const ChannelAttentionParams<T>& cp) {
  if (f_s.shape != f_d.shape) {
    throw ShapeError("binary_fuse: inputs must share a shape, got " + to_string(f_s.shape) +
                     " vs " + to_string(f_d.shape));
  }
  BinaryFusion<T> r;
  r.a_s = spatial_attention(g, f_s, sp);
  r.a_c = channel_attention(g, f_d, cp);
  auto keep_shallow = mul(g, r.a_s, one_minus(g, r.a_c));
  auto keep_deep = mul(g, one_minus(g, r.a_s), r.a_c);
  r.out = add(g, mul(g, keep_shallow, f_s), mul(g, keep_deep, f_d));
  return r;
}

template <typename T>
Tensor<T> binary_fuse(Graph<T>& g, const Tensor<T>& f_s, const Tensor<T>& f_d,
                      const SpatialAttentionParams<T>& sp, const ChannelAttentionParams<T>& cp) {
  return binary_fuse_full(g, f_s, f_d, sp, cp).out;
}

/// a_i: broadcast product of the spatial and channel gates, shape (N,C,H,W).
template <typename T>
Tensor<T> combined_attention(Graph<T>& g, const Tensor<T>& f, const SpatialAttentionParams<T>& sp,
                             const ChannelAttentionParams<T>& cp) {
  return mul(g, spatial_attention(g, f, sp), channel_attention(g, f, cp));
}

/// Ordered fusion inputs. The caller supplies the order; by convention a
/// feature that went through more aggregation steps gets a higher index.
template <typename T>
struct FusionInputs {
  std::vector<const Tensor<T>*> features;
  std::vector<const AttentionParams<T>*> attention;
};

template <typename T>
struct MultiFusion {
  Tensor<T> out;
  std::vector<Tensor<T>> combined;  // a_i per input
  std::vector<Tensor<T>> spatial;   // SA(F_i) per input
};

/// F_final = sum_i a_i * F_i * prod_{j>i} (1 - a_j), evaluated back to front
/// with suffix products.
template <typename T>
MultiFusion<T> multi_fuse_full(Graph<T>& g, const FusionInputs<T>& in) {
  const std::size_t k = in.features.size();
  if (k == 0) throw ShapeError("multi_fuse: empty input list");
  if (in.attention.size() != k) {
    throw ShapeError("multi_fuse: " + std::to_string(k) + " features but " +
                     std::to_string(in.attention.size()) + " attention parameter sets");
  }
  for (std::size_t i = 1; i < k; ++i) {
    if (in.features[i]->shape != in.features[0]->shape) {
      throw ShapeError("multi_fuse: feature " + std::to_string(i) + " has shape " +
                       to_string(in.features[i]->shape) + ", expected " +
                       to_string(in.features[0]->shape));
    }
  }
  MultiFusion<T> r;
  r.combined.resize(k);
  r.spatial.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    r.spatial[i] = spatial_attention(g, *in.features[i], in.attention[i]->spatial);
    auto ca = channel_attention(g, *in.features[i], in.attention[i]->channel);
    r.combined[i] = mul(g, r.spatial[i], ca);
  }
  // back to front: term_k has an empty suffix product
  Tensor<T> acc = mul(g, r.combined[k - 1], *in.features[k - 1]);
  if (k > 1) {
    Tensor<T> suffix = one_minus(g, r.combined[k - 1]);
    for (std::size_t i = k - 1; i-- > 0;) {
      acc = add(g, acc, mul(g, mul(g, r.combined[i], *in.features[i]), suffix));
      if (i > 0) suffix = mul(g, suffix, one_minus(g, r.combined[i]));
    }
  }
  r.out = std::move(acc);
  return r;
}

template <typename T>
Tensor<T> multi_fuse(Graph<T>& g, const FusionInputs<T>& in) {
  return multi_fuse_full(g, in).out;
}

}  // namespace afa
