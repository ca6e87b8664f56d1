#pragma once

#include <random>
#include <string>
#include <vector>

#include "mvtrack/encoder.hpp"
#include "mvtrack/nn_ops.hpp"

// The two parallel decoding branches: deformable offset decoding against the
// current-frame ground encoding, and the FPN + conv heatmap head.
namespace mvtrack {

template <typename T>
struct OffsetPredictionT {
  TensorT<T> offsets;  // [K x 2], (dx, dy) in finest ground cells
  std::vector<int64_t> track_ids;
};

using OffsetPrediction = OffsetPredictionT<float>;

template <typename T>
struct OffsetDecoderParamsT {
  std::vector<EncoderLayerParamsT<T>> layers;  // msda + ffn per layer
  MlpHeadParamsT<T> head;                      // D -> 2
  MlpHeadParamsT<T> coord_head;                // D -> 2, coordinate-supervision mode only
  bool has_coord_head = false;

  OffsetDecoderParamsT() = default;
  OffsetDecoderParamsT(const MsdaConfig& cfg, int64_t ffn_dim, int num_layers,
                       std::mt19937_64& rng, bool with_coord_head = false)
      : head(cfg.embed_dim, 2, rng), has_coord_head(with_coord_head) {
    for (int i = 0; i < num_layers; ++i) layers.emplace_back(cfg, ffn_dim, rng);
    if (with_coord_head) coord_head = MlpHeadParamsT<T>(cfg.embed_dim, 2, rng);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
    head.visit(prefix + ".head", fn);
    if (has_coord_head) coord_head.visit(prefix + ".coord_head", fn);
  }
};

template <typename T>
struct DecodedTracksT {
  TensorT<T> refined;  // [K x D] decoded track queries
  std::vector<T> reference_points;  // [K*2] normalized, reused by heads
};

// Runs the deformable decoder layers with the tracks' previous positions as
// fixed reference points over the current frame's encoding.
template <typename T>
DecodedTracksT<T> decode_track_queries(const TrackQuerySetT<T>& track,
                                       const EncodedGroundT<T>& current,
                                       OffsetDecoderParamsT<T>& p, const MsdaConfig& cfg) {
  const auto& [h0, w0] = current.level_shapes.at(0);
  DecodedTracksT<T> out;
  int64_t k = track.queries.defined() ? track.queries.dim(0) : 0;
  out.reference_points.reserve(static_cast<size_t>(k * 2));
  for (const auto& pxy : track.positions) {
    if (!(pxy[0] >= 0 && pxy[0] <= double(w0 - 1) && pxy[1] >= 0 && pxy[1] <= double(h0 - 1)))
      throw PositionOutOfGridError("track reference point outside the ground grid");
    out.reference_points.push_back(T((pxy[0] + 0.5) / double(w0)));
    out.reference_points.push_back(T((pxy[1] + 0.5) / double(h0)));
  }
  auto q = track.queries;
  for (auto& layer : p.layers) {
    q = msda_forward(q, TensorT<T>(), out.reference_points, current.flattened,
                     current.level_shapes, cfg, layer.msda);
    q = ffn_forward(q, layer.ffn);
  }
  out.refined = q;
  return out;
}

template <typename T>
OffsetPredictionT<T> offset_decode(const TrackQuerySetT<T>& track,
                                   const EncodedGroundT<T>& current,
                                   OffsetDecoderParamsT<T>& p, const MsdaConfig& cfg) {
  auto decoded = decode_track_queries(track, current, p, cfg);
  OffsetPredictionT<T> out;
  out.track_ids = track.track_ids;
  out.offsets = mlp_head_forward(decoded.refined, p.head);
  return out;
}

template <typename T>
struct HeatmapDecoderParamsT {
  Conv2dParamsT<T> lat0, lat1, lat2;  // 1x1 laterals
  Conv2dParamsT<T> smooth;            // 3x3
  Conv2dParamsT<T> head;              // 3x3 -> 1

  HeatmapDecoderParamsT() = default;
  HeatmapDecoderParamsT(int64_t d, std::mt19937_64& rng)
      : lat0(1, d, d, rng), lat1(1, d, d, rng), lat2(1, d, d, rng), smooth(3, d, d, rng),
        head(3, d, 1, rng) {}

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    lat0.visit(prefix + ".lat0", fn);
    lat1.visit(prefix + ".lat1", fn);
    lat2.visit(prefix + ".lat2", fn);
    smooth.visit(prefix + ".smooth", fn);
    head.visit(prefix + ".head", fn);
  }
};

// Top-down FPN over the encoded scales to the finest one, then a conv head
// and sigmoid. Output is [cells_y x cells_x] strictly inside (0,1).
template <typename T>
TensorT<T> heatmap_decode(const EncodedGroundT<T>& current, HeatmapDecoderParamsT<T>& p) {
  check_shape(current.per_scale.size() == 3, "heatmap_decode: three scales expected");
  auto p2 = conv2d(current.per_scale[2], p.lat2.weight, p.lat2.bias, 1, 0);
  auto p1 = add(conv2d(current.per_scale[1], p.lat1.weight, p.lat1.bias, 1, 0),
                upsample_nearest2(p2));
  auto p0 = add(conv2d(current.per_scale[0], p.lat0.weight, p.lat0.bias, 1, 0),
                upsample_nearest2(p1));
  auto s = conv2d(p0, p.smooth.weight, p.smooth.bias, 1, 1);
  auto logits = conv2d(s, p.head.weight, p.head.bias, 1, 1);
  return sigmoid(reshape(logits, {logits.dim(0), logits.dim(1)}));
}

// Coordinate-supervision ablation: per-query normalized position regression.
template <typename T>
TensorT<T> coordinate_decode(const TrackQuerySetT<T>& track, const EncodedGroundT<T>& current,
                             OffsetDecoderParamsT<T>& p, const MsdaConfig& cfg) {
  check_shape(p.has_coord_head, "coordinate_decode: decoder built without a coordinate head");
  auto decoded = decode_track_queries(track, current, p, cfg);
  return sigmoid(mlp_head_forward(decoded.refined, p.coord_head));  // [K x 2] in (0,1)
}

}  // namespace mvtrack
