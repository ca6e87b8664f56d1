#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mvtrack/backbone.hpp"
#include "mvtrack/decoder.hpp"
#include "mvtrack/encoder.hpp"
#include "mvtrack/geometry.hpp"
#include "mvtrack/tensor.hpp"

// The assembled pipeline: shared per-view backbone, multi-scale lift and
// fusion, ground encoder, view-ground interaction and the two decoding
// branches, plus the parameter registry and the checkpoint format.
namespace mvtrack {

enum class SupervisionMode { kHeatmap, kCoordinate };

struct ModelConfig {
  MsdaConfig msda{2, 2, 3, 32};  // heads, points, levels, embed dim
  int64_t ffn_dim = 64;
  int enc_layers = 1;
  int dec_layers = 1;
  std::vector<double> heights = {0.0, 0.9};  // lift sample heights, meters
  int64_t backbone_c0 = 8, backbone_c1 = 16, backbone_c2 = 32;
  int64_t view_dim = 16;
  GroundGrid grid;  // finest ground scale
  double heatmap_sigma_cells = 2.0;
  double image_sigma_cells = 2.0;
  double view_sample_height = 0.9;  // meters, where view queries are sampled
  double ground_loss_weight = 10.0;
  int interaction_heads = 2;
  InteractionMode interaction = InteractionMode::kCross;
  SupervisionMode supervision = SupervisionMode::kHeatmap;
  double feature_stride = 4.0;

  void validate() const {
    msda.validate();
    grid.validate();
    if (msda.num_levels != 3) throw ConfigInvalidError("model: three ground scales expected");
    if (msda.embed_dim % 4 != 0)
      throw ConfigInvalidError("model: embed dim must be divisible by 4");
    if (grid.cells_x % 4 != 0 || grid.cells_y % 4 != 0)
      throw ConfigInvalidError("model: grid cells must be divisible by 4");
    if (heights.empty()) throw ConfigInvalidError("model: need at least one lift height");
    for (size_t i = 0; i < heights.size(); ++i) {
      if (heights[i] < 0) throw ConfigInvalidError("model: negative lift height");
      if (i > 0 && heights[i] <= heights[i - 1])
        throw ConfigInvalidError("model: lift heights must be strictly increasing");
    }
    if (enc_layers < 1 || dec_layers < 1) throw ConfigInvalidError("model: need >= 1 layers");
  }

  // Grid covering [0, world_x] x [0, world_y] with the given cell size, cell
  // counts rounded up to a multiple of 4.
  static GroundGrid grid_for_world(double world_x, double world_y, double meters_per_cell) {
    GroundGrid g;
    auto round4 = [](double cells) {
      auto n = static_cast<int64_t>(std::ceil(cells));
      return (n + 3) / 4 * 4;
    };
    g.meters_per_cell = meters_per_cell;
    g.cells_x = round4(world_x / meters_per_cell);
    g.cells_y = round4(world_y / meters_per_cell);
    g.origin_x = meters_per_cell / 2.0;
    g.origin_y = meters_per_cell / 2.0;
    return g;
  }
};

struct Model {
  ModelConfig cfg;
  BackboneParamsT<float> backbone;
  GroundFuseParamsT<float> groundfuse;
  EncoderParamsT<float> encoder;
  InteractionParamsT<float> interaction;  // absent in mode kOff
  OffsetDecoderParamsT<float> offset_decoder;
  HeatmapDecoderParamsT<float> heatmap_decoder;  // absent in coordinate mode
  Tensor sigma_c, sigma_t;

  // name -> parameter handle, in registration order; rebuilt by the ctor
  std::vector<std::pair<std::string, Tensor*>> params;

  Model(const ModelConfig& config, uint64_t seed);

  struct FrameEncoding {
    std::vector<ViewFeaturePack> views;
    EncodedGround encoded;
  };

  FrameEncoding encode_frame(const std::vector<Tensor>& images,
                             const std::vector<CameraCalibration>& calibs);

  struct PairOutput {
    TrackQuerySet track;       // refined track queries
    OffsetPrediction offsets;  // [K x 2] finest cells
    Tensor heatmap;            // heatmap mode: [cells_y x cells_x]
    Tensor coords;             // coordinate mode: [K x 2] normalized
  };

  PairOutput decode_pair(const FrameEncoding& prev, const FrameEncoding& cur,
                         const std::vector<CameraCalibration>& calibs,
                         const std::vector<std::array<double, 2>>& track_positions_cells,
                         const std::vector<int64_t>& track_ids);

 private:
  void register_params();
};

// Binary checkpoint: magic "MVTT", u32 version = 1, u32 parameter count, then
// per parameter u16 name length + name, u8 rank, u32 dims, raw f32 data.
// Little-endian throughout. Loading verifies names and shapes against the
// constructed model.
void save_checkpoint(const std::string& path, const Model& model);
void load_checkpoint(const std::string& path, Model& model);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text, const std::string& context);

}  // namespace mvtrack
