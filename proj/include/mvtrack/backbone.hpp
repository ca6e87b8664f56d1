#pragma once

#include <random>
#include <string>
#include <vector>

#include "mvtrack/nn_ops.hpp"
#include "mvtrack/tensor.hpp"

// Per-view feature extraction (a tiny strided-conv stand-in for a real
// backbone), per-view FPN to single-scale view features, the per-view center
// heatmap head, and the post-lift convolutional ground fusion.
namespace mvtrack {

template <typename T>
struct ViewFeaturePackT {
  std::vector<TensorT<T>> per_scale;  // strides 4, 8, 16 relative to the image
  TensorT<T> fused;                   // stride 4, view_dim channels
  TensorT<T> view_heatmap;            // [H/4 x W/4], sigmoid outputs
};

using ViewFeaturePack = ViewFeaturePackT<float>;

template <typename T>
struct BackboneParamsT {
  // three stages of two 3x3 convs; the first stage downsamples twice
  // (stride 4), later stages once each (strides 8, 16)
  Conv2dParamsT<T> s0a, s0b, s1a, s1b, s2a, s2b;
  Conv2dParamsT<T> lat0, lat1, lat2, smooth;  // FPN to stride 4
  Conv2dParamsT<T> heat;                      // 1x1 -> 1 channel

  BackboneParamsT() = default;
  BackboneParamsT(int64_t c0, int64_t c1, int64_t c2, int64_t view_dim, std::mt19937_64& rng)
      : s0a(3, 3, c0, rng),
        s0b(3, c0, c0, rng),
        s1a(3, c0, c1, rng),
        s1b(3, c1, c1, rng),
        s2a(3, c1, c2, rng),
        s2b(3, c2, c2, rng),
        lat0(1, c0, view_dim, rng),
        lat1(1, c1, view_dim, rng),
        lat2(1, c2, view_dim, rng),
        smooth(3, view_dim, view_dim, rng),
        heat(1, view_dim, 1, rng) {}

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    s0a.visit(prefix + ".s0a", fn);
    s0b.visit(prefix + ".s0b", fn);
    s1a.visit(prefix + ".s1a", fn);
    s1b.visit(prefix + ".s1b", fn);
    s2a.visit(prefix + ".s2a", fn);
    s2b.visit(prefix + ".s2b", fn);
    lat0.visit(prefix + ".lat0", fn);
    lat1.visit(prefix + ".lat1", fn);
    lat2.visit(prefix + ".lat2", fn);
    smooth.visit(prefix + ".smooth", fn);
    heat.visit(prefix + ".heat", fn);
  }
};

template <typename T>
ViewFeaturePackT<T> extract_view_features(const TensorT<T>& image, BackboneParamsT<T>& p) {
  check_shape(image.rank() == 3 && image.dim(2) == p.s0a.weight.dim(2),
              "extract_view_features: [H x W x C] image expected");
  check_shape(image.dim(0) % 16 == 0 && image.dim(1) % 16 == 0,
              "extract_view_features: image size must be divisible by 16");
  ViewFeaturePackT<T> out;
  auto x = relu(conv2d(image, p.s0a.weight, p.s0a.bias, 2, 1));
  x = relu(conv2d(x, p.s0b.weight, p.s0b.bias, 2, 1));
  out.per_scale.push_back(x);  // stride 4
  x = relu(conv2d(x, p.s1a.weight, p.s1a.bias, 2, 1));
  x = relu(conv2d(x, p.s1b.weight, p.s1b.bias, 1, 1));
  out.per_scale.push_back(x);  // stride 8
  x = relu(conv2d(x, p.s2a.weight, p.s2a.bias, 2, 1));
  x = relu(conv2d(x, p.s2b.weight, p.s2b.bias, 1, 1));
  out.per_scale.push_back(x);  // stride 16

  auto p2 = conv2d(out.per_scale[2], p.lat2.weight, p.lat2.bias, 1, 0);
  auto p1 = add(conv2d(out.per_scale[1], p.lat1.weight, p.lat1.bias, 1, 0), upsample_nearest2(p2));
  auto p0 = add(conv2d(out.per_scale[0], p.lat0.weight, p.lat0.bias, 1, 0), upsample_nearest2(p1));
  out.fused = conv2d(p0, p.smooth.weight, p.smooth.bias, 1, 1);

  auto logits = conv2d(out.fused, p.heat.weight, p.heat.bias, 1, 0);
  out.view_heatmap = sigmoid(reshape(logits, {logits.dim(0), logits.dim(1)}));
  return out;
}

template <typename T>
struct GroundFeaturePackT {
  std::vector<TensorT<T>> per_scale;  // [cy_l x cx_l x D], ground strides 1, 2, 4
};

using GroundFeaturePack = GroundFeaturePackT<float>;

template <typename T>
struct GroundFuseParamsT {
  std::vector<Conv2dParamsT<T>> scales;  // one 3x3 fuse conv per ground scale

  GroundFuseParamsT() = default;
  GroundFuseParamsT(int levels, int64_t in_ch, int64_t d, std::mt19937_64& rng) {
    for (int l = 0; l < levels; ++l) scales.emplace_back(3, in_ch, d, rng);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (size_t l = 0; l < scales.size(); ++l)
      scales[l].visit(prefix + ".scale" + std::to_string(l), fn);
  }
};

// One collapsed (heights*C channel) tensor per ground scale in, D channels out.
template <typename T>
GroundFeaturePackT<T> fuse_ground(const std::vector<TensorT<T>>& collapsed,
                                  GroundFuseParamsT<T>& p) {
  check_shape(collapsed.size() == p.scales.size(), "fuse_ground: one tensor per scale expected");
  GroundFeaturePackT<T> out;
  for (size_t l = 0; l < collapsed.size(); ++l)
    out.per_scale.push_back(
        conv2d(collapsed[l], p.scales[l].weight, p.scales[l].bias, 1, 1));
  return out;
}

}  // namespace mvtrack
