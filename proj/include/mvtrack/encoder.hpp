#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mvtrack/backbone.hpp"
#include "mvtrack/geometry.hpp"
#include "mvtrack/nn_ops.hpp"

// Deformable encoding of the ground features, track/view query sampling and
// the view-ground interaction step.
namespace mvtrack {

template <typename T>
struct EncodedGroundT {
  std::vector<TensorT<T>> per_scale;                   // encoded maps, same shapes as input
  TensorT<T> flattened;                                // [sum H_l*W_l x D], level order
  std::vector<std::pair<int64_t, int64_t>> level_shapes;  // (H_l, W_l)
};

using EncodedGround = EncodedGroundT<float>;

// Fixed 2-d sincos positional table over normalized cell centers, one row per
// flattened token. D must be divisible by 4 (sin/cos pairs on two axes).
template <typename T>
std::vector<T> sincos_position_table(const std::vector<std::pair<int64_t, int64_t>>& level_shapes,
                                     int64_t d) {
  check_shape(d % 4 == 0, "position table: embed dim must be divisible by 4");
  int64_t half = d / 2;
  std::vector<T> freqs(static_cast<size_t>(half / 2));
  for (int64_t i = 0; i < half / 2; ++i)
    freqs[static_cast<size_t>(i)] = T(2.0 * M_PI / std::pow(10000.0, 2.0 * double(i) / double(half)));
  std::vector<T> out;
  for (auto& [h, w] : level_shapes) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t x = 0; x < w; ++x) {
        T ny = T((double(y) + 0.5) / double(h));
        T nx = T((double(x) + 0.5) / double(w));
        for (int64_t i = 0; i < half / 2; ++i) {
          out.push_back(std::sin(ny * freqs[static_cast<size_t>(i)]));
          out.push_back(std::cos(ny * freqs[static_cast<size_t>(i)]));
        }
        for (int64_t i = 0; i < half / 2; ++i) {
          out.push_back(std::sin(nx * freqs[static_cast<size_t>(i)]));
          out.push_back(std::cos(nx * freqs[static_cast<size_t>(i)]));
        }
      }
    }
  }
  return out;
}

// Normalized own-coordinates of every token, the encoder's self reference
// points.
template <typename T>
std::vector<T> self_reference_points(const std::vector<std::pair<int64_t, int64_t>>& level_shapes) {
  std::vector<T> ref;
  for (auto& [h, w] : level_shapes)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        ref.push_back(T((double(x) + 0.5) / double(w)));
        ref.push_back(T((double(y) + 0.5) / double(h)));
      }
  return ref;
}

template <typename T>
struct EncoderLayerParamsT {
  MsdaParamsT<T> msda;
  FfnParamsT<T> ffn;

  EncoderLayerParamsT() = default;
  EncoderLayerParamsT(const MsdaConfig& cfg, int64_t ffn_dim, std::mt19937_64& rng)
      : msda(cfg, rng), ffn(cfg.embed_dim, ffn_dim, rng) {}

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    msda.visit(prefix + ".msda", fn);
    ffn.visit(prefix + ".ffn", fn);
  }
};

template <typename T>
struct EncoderParamsT {
  TensorT<T> level_embed;  // [L x D], learned, added to the positional table
  std::vector<EncoderLayerParamsT<T>> layers;

  EncoderParamsT() = default;
  EncoderParamsT(const MsdaConfig& cfg, int64_t ffn_dim, int num_layers, std::mt19937_64& rng) {
    level_embed = TensorT<T>({cfg.num_levels, cfg.embed_dim}, true);
    init_uniform(level_embed, rng, T(0.1));
    for (int i = 0; i < num_layers; ++i) layers.emplace_back(cfg, ffn_dim, rng);
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".level_embed", level_embed);
    for (size_t i = 0; i < layers.size(); ++i)
      layers[i].visit(prefix + ".layer" + std::to_string(i), fn);
  }
};

// Deformable self-attention over the flattened multi-scale ground map. Both
// frames are encoded by calling this with the same parameter set; the
// function is stateless so the order of frames cannot matter.
template <typename T>
EncodedGroundT<T> encode_ground(const GroundFeaturePackT<T>& features, EncoderParamsT<T>& p,
                                const MsdaConfig& cfg) {
  check_shape(static_cast<int>(features.per_scale.size()) == cfg.num_levels,
              "encode_ground: level count mismatch");
  EncodedGroundT<T> out;
  std::vector<TensorT<T>> flat_parts;
  std::vector<int64_t> counts;
  for (const auto& f : features.per_scale) {
    check_shape(f.rank() == 3 && f.dim(2) == cfg.embed_dim, "encode_ground: feature shape");
    out.level_shapes.emplace_back(f.dim(0), f.dim(1));
    counts.push_back(f.dim(0) * f.dim(1));
    flat_parts.push_back(reshape(f, {f.dim(0) * f.dim(1), f.dim(2)}));
  }
  auto x = concat_rows(flat_parts);
  auto sincos = sincos_position_table<T>(out.level_shapes, cfg.embed_dim);
  auto pos = add_const(embed_rows(p.level_embed, counts), sincos);
  auto ref = self_reference_points<T>(out.level_shapes);
  for (auto& layer : p.layers) {
    x = msda_forward(x, pos, ref, x, out.level_shapes, cfg, layer.msda);
    x = ffn_forward(x, layer.ffn);
  }
  out.flattened = x;
  int64_t begin = 0;
  for (auto& [h, w] : out.level_shapes) {
    out.per_scale.push_back(reshape(slice_rows(x, begin, h * w), {h, w, cfg.embed_dim}));
    begin += h * w;
  }
  return out;
}

template <typename T>
struct TrackQuerySetT {
  TensorT<T> queries;                            // [K x D]
  std::vector<std::array<double, 2>> positions;  // finest-grid cells (x, y)
  std::vector<int64_t> track_ids;
};

using TrackQuerySet = TrackQuerySetT<float>;

// Bilinear sampling of the finest encoded scale at continuous cell positions.
template <typename T>
TrackQuerySetT<T> sample_track_queries(const EncodedGroundT<T>& encoded,
                                       const std::vector<std::array<double, 2>>& positions,
                                       const std::vector<int64_t>& ids) {
  check_shape(positions.size() == ids.size(), "sample_track_queries: ids/positions mismatch");
  const TensorT<T>& finest = encoded.per_scale.at(0);
  int64_t w = finest.dim(1), h = finest.dim(0);
  TrackQuerySetT<T> out;
  out.positions = positions;
  out.track_ids = ids;
  int64_t k = static_cast<int64_t>(positions.size());
  TensorT<T> uv({k, 2});
  for (int64_t i = 0; i < k; ++i) {
    const auto& pxy = positions[static_cast<size_t>(i)];
    if (!(pxy[0] >= 0 && pxy[0] <= double(w - 1) && pxy[1] >= 0 && pxy[1] <= double(h - 1)))
      throw PositionOutOfGridError("track position outside the ground grid");
    uv.data()[i * 2] = T(pxy[0]);
    uv.data()[i * 2 + 1] = T(pxy[1]);
  }
  out.queries = k > 0 ? grid_bilinear(finest, uv) : TensorT<T>({0, finest.dim(2)});
  return out;
}

template <typename T>
struct ViewQuerySetT {
  TensorT<T> queries;          // [K*n x Dv], invalid rows are zero
  std::vector<uint8_t> valid;  // [K*n]
  int num_cameras = 0;
};

using ViewQuerySet = ViewQuerySetT<float>;

// Lifts each track's ground point to sample_height meters, projects it into
// every camera and samples the fused view feature map there. Behind-camera or
// out-of-map projections are masked, not errors.
template <typename T>
ViewQuerySetT<T> sample_view_queries(const std::vector<ViewFeaturePackT<T>>& view_packs,
                                     const std::vector<CameraCalibration>& calibs,
                                     const std::vector<std::array<double, 2>>& positions,
                                     const GroundGrid& grid, double sample_height,
                                     double feature_stride) {
  check_shape(view_packs.size() == calibs.size(), "sample_view_queries: cams/packs mismatch");
  int n = static_cast<int>(calibs.size());
  int64_t k = static_cast<int64_t>(positions.size());
  ViewQuerySetT<T> out;
  out.num_cameras = n;
  out.valid.assign(static_cast<size_t>(k * n), 0);
  if (k == 0 || n == 0) {
    out.queries = TensorT<T>({0, n > 0 ? view_packs[0].fused.dim(2) : 0});
    return out;
  }
  int64_t dv = view_packs[0].fused.dim(2);
  // per-camera sample positions; invalid ones are parked out of range so the
  // bilinear op masks them to zero
  std::vector<TensorT<T>> percam;
  for (int cam = 0; cam < n; ++cam) {
    const auto& fused = view_packs[static_cast<size_t>(cam)].fused;
    TensorT<T> uv({k, 2});
    for (int64_t i = 0; i < k; ++i) {
      const auto& pxy = positions[static_cast<size_t>(i)];
      if (!grid.cell_in_bounds(pxy[0], pxy[1]))
        throw PositionOutOfGridError("view-query position outside the ground grid");
      double wx = grid.cell_to_world_x(pxy[0]);
      double wy = grid.cell_to_world_y(pxy[1]);
      Projection pr = try_project(calibs[static_cast<size_t>(cam)], wx, wy, sample_height);
      double u = -1, v = -1;  // out of range -> masked
      if (pr.ok) {
        u = pr.u / feature_stride;
        v = pr.v / feature_stride;
        if (u >= 0 && u <= double(fused.dim(1) - 1) && v >= 0 && v <= double(fused.dim(0) - 1))
          out.valid[static_cast<size_t>(i * n + cam)] = 1;
        else
          u = -1;
      }
      uv.data()[i * 2] = T(u);
      uv.data()[i * 2 + 1] = T(v);
    }
    percam.push_back(grid_bilinear(fused, uv));  // [K x Dv]
  }
  // interleave to [K*n x Dv] with camera-major rows per track
  std::vector<TensorT<T>> rows;
  rows.reserve(static_cast<size_t>(k * n));
  for (int64_t i = 0; i < k; ++i)
    for (int cam = 0; cam < n; ++cam) rows.push_back(slice_rows(percam[static_cast<size_t>(cam)], i, 1));
  out.queries = concat_rows(rows);
  (void)dv;
  return out;
}

enum class InteractionMode { kCross, kSelf, kOff };

template <typename T>
struct InteractionParamsT {
  FfnParamsT<T> track_ffn;     // at D
  FfnParamsT<T> view_ffn;      // at Dv
  LinearParamsT<T> view_in;    // Dv -> D
  AttnParamsT<T> attn;         // at D
  int heads = 4;

  InteractionParamsT() = default;
  InteractionParamsT(int64_t d, int64_t dv, int64_t ffn_dim, int num_heads, std::mt19937_64& rng)
      : track_ffn(d, ffn_dim, rng),
        view_ffn(dv, ffn_dim, rng),
        view_in(dv, d, rng),
        attn(d, rng),
        heads(num_heads) {}

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    track_ffn.visit(prefix + ".track_ffn", fn);
    view_ffn.visit(prefix + ".view_ffn", fn);
    view_in.visit(prefix + ".view_in", fn);
    attn.visit(prefix + ".attn", fn);
  }
};

// Refines each track query with its own cameras' view queries. Both inputs
// pass independent FFNs first; mode kCross cross-attends each track over its
// n view queries under the validity mask, mode kSelf runs self-attention over
// the (track + views) token set and keeps the track token. Tracks with zero
// valid views pass through unchanged.
template <typename T>
TrackQuerySetT<T> view_ground_interaction(const TrackQuerySetT<T>& track,
                                          const ViewQuerySetT<T>& view,
                                          InteractionParamsT<T>& p, InteractionMode mode) {
  int64_t k = track.queries.dim(0);
  int n = view.num_cameras;
  check_shape(n == 0 || view.queries.dim(0) == k * n,
              "view_ground_interaction: track/view count mismatch");
  TrackQuerySetT<T> out = track;
  if (k == 0 || n == 0 || mode == InteractionMode::kOff) return out;

  std::vector<T> has_view(static_cast<size_t>(k), T(0));
  for (int64_t i = 0; i < k; ++i)
    for (int cam = 0; cam < n; ++cam)
      if (view.valid[static_cast<size_t>(i * n + cam)]) has_view[static_cast<size_t>(i)] = T(1);

  auto t = ffn_forward(track.queries, p.track_ffn);
  auto vq = ffn_forward(view.queries, p.view_ffn);
  vq = linear(vq, p.view_in.weight, p.view_in.bias);

  TensorT<T> refined;
  if (mode == InteractionMode::kCross) {
    // block-diagonal mask: track i may only see its own cameras' queries
    std::vector<uint8_t> mask(static_cast<size_t>(k * k * n), 0);
    for (int64_t i = 0; i < k; ++i)
      for (int cam = 0; cam < n; ++cam)
        mask[static_cast<size_t>(i * k * n + i * n + cam)] =
            view.valid[static_cast<size_t>(i * n + cam)];
    refined = cross_attention(t, vq, &mask, p.attn, p.heads);
  } else {
    // per-track self-attention over the (track, view_0..view_n-1) token set
    std::vector<TensorT<T>> rows;
    for (int64_t i = 0; i < k; ++i) {
      auto tokens = concat_rows<T>({slice_rows(t, i, 1), slice_rows(vq, i * n, n)});
      std::vector<uint8_t> mask(static_cast<size_t>((n + 1) * (n + 1)), 0);
      for (int64_t qi = 0; qi <= n; ++qi) {
        mask[static_cast<size_t>(qi * (n + 1))] = 1;  // the track token is always visible
        for (int cam = 0; cam < n; ++cam)
          mask[static_cast<size_t>(qi * (n + 1) + 1 + cam)] =
              view.valid[static_cast<size_t>(i * n + cam)];
      }
      auto sa = cross_attention(tokens, tokens, &mask, p.attn, p.heads);
      rows.push_back(slice_rows(sa, 0, 1));
    }
    refined = concat_rows(rows);
  }

  // zero-view tracks keep their original query
  std::vector<T> inv(has_view);
  for (auto& v : inv) v = T(1) - v;
  out.queries = add(scale_rows(refined, has_view), scale_rows(track.queries, inv));
  return out;
}

}  // namespace mvtrack
