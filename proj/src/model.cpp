#include "mvtrack/model.hpp"

#include <cstring>
#include <fstream>
#include <random>

#include "json.hpp"

using nlohmann::json;

namespace mvtrack {

Model::Model(const ModelConfig& config, uint64_t seed) : cfg(config) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  int64_t collapsed_ch = static_cast<int64_t>(cfg.heights.size()) * cfg.view_dim;
  backbone = BackboneParamsT<float>(cfg.backbone_c0, cfg.backbone_c1, cfg.backbone_c2,
                                    cfg.view_dim, rng);
  groundfuse = GroundFuseParamsT<float>(cfg.msda.num_levels, collapsed_ch, cfg.msda.embed_dim, rng);
  encoder = EncoderParamsT<float>(cfg.msda, cfg.ffn_dim, cfg.enc_layers, rng);
  if (cfg.interaction != InteractionMode::kOff)
    interaction = InteractionParamsT<float>(cfg.msda.embed_dim, cfg.view_dim, cfg.ffn_dim,
                                            cfg.interaction_heads, rng);
  offset_decoder = OffsetDecoderParamsT<float>(
      cfg.msda, cfg.ffn_dim, cfg.dec_layers, rng,
      /*with_coord_head=*/cfg.supervision == SupervisionMode::kCoordinate);
  if (cfg.supervision == SupervisionMode::kHeatmap)
    heatmap_decoder = HeatmapDecoderParamsT<float>(cfg.msda.embed_dim, rng);
  sigma_c = Tensor::scalar(0.0f, true);
  sigma_t = Tensor::scalar(0.0f, true);
  register_params();
}

void Model::register_params() {
  params.clear();
  auto reg = [this](const std::string& name, Tensor& t) { params.emplace_back(name, &t); };
  backbone.visit("backbone", reg);
  groundfuse.visit("groundfuse", reg);
  encoder.visit("encoder", reg);
  if (cfg.interaction != InteractionMode::kOff) interaction.visit("interaction", reg);
  offset_decoder.visit("decoder", reg);
  if (cfg.supervision == SupervisionMode::kHeatmap) heatmap_decoder.visit("heatmap", reg);
  reg("loss.sigma_c", sigma_c);
  reg("loss.sigma_t", sigma_t);
}

Model::FrameEncoding Model::encode_frame(const std::vector<Tensor>& images,
                                         const std::vector<CameraCalibration>& calibs) {
  if (images.size() != calibs.size())
    throw ShapeMismatchError("encode_frame: image/calibration count mismatch");
  FrameEncoding out;
  std::vector<Tensor> fused;
  for (const auto& img : images) {
    out.views.push_back(extract_view_features(img, backbone));
    fused.push_back(out.views.back().fused);
  }
  std::vector<Tensor> collapsed;
  for (int l = 0; l < cfg.msda.num_levels; ++l) {
    VoxelGridT<float> vg;
    vg.ground = cfg.grid.scaled(1 << l);
    vg.heights = cfg.heights;
    lift_to_voxels(fused, calibs, vg, cfg.feature_stride);
    collapsed.push_back(collapse_height(vg));
  }
  auto ground = fuse_ground(collapsed, groundfuse);
  out.encoded = encode_ground(ground, encoder, cfg.msda);
  return out;
}

Model::PairOutput Model::decode_pair(const FrameEncoding& prev, const FrameEncoding& cur,
                                     const std::vector<CameraCalibration>& calibs,
                                     const std::vector<std::array<double, 2>>& track_positions,
                                     const std::vector<int64_t>& track_ids) {
  PairOutput out;
  out.track = sample_track_queries(prev.encoded, track_positions, track_ids);
  if (cfg.interaction != InteractionMode::kOff && !track_positions.empty()) {
    auto view = sample_view_queries(prev.views, calibs, track_positions, cfg.grid,
                                    cfg.view_sample_height, cfg.feature_stride);
    out.track = view_ground_interaction(out.track, view, interaction, cfg.interaction);
  }
  out.offsets = offset_decode(out.track, cur.encoded, offset_decoder, cfg.msda);
  if (cfg.supervision == SupervisionMode::kHeatmap)
    out.heatmap = heatmap_decode(cur.encoded, heatmap_decoder);
  else
    out.coords = coordinate_decode(out.track, cur.encoded, offset_decoder, cfg.msda);
  return out;
}

// --- checkpoint io ----------------------------------------------------------

namespace {

template <typename T>
void put_raw(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(const std::string& in, size_t& off, const std::string& path) {
  if (off + sizeof(T) > in.size()) throw FormatError(path + ": truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::string out = "MVTT";
  put_raw<uint32_t>(out, 1);
  put_raw<uint32_t>(out, static_cast<uint32_t>(model.params.size()));
  for (const auto& [name, tensor] : model.params) {
    if (name.size() > 0xffff) throw ConfigInvalidError("parameter name too long");
    put_raw<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out += name;
    put_raw<uint8_t>(out, static_cast<uint8_t>(tensor->rank()));
    for (int i = 0; i < tensor->rank(); ++i)
      put_raw<uint32_t>(out, static_cast<uint32_t>(tensor->dim(i)));
    out.append(reinterpret_cast<const char*>(tensor->data().data()),
               tensor->data().size() * sizeof(float));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

void load_checkpoint(const std::string& path, Model& model) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open checkpoint");
  std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  size_t off = 0;
  if (in.size() < 4 || in.substr(0, 4) != "MVTT")
    throw FormatError(path + ": bad checkpoint magic");
  off = 4;
  uint32_t version = get_raw<uint32_t>(in, off, path);
  if (version != 1) throw FormatError(path + ": unsupported checkpoint version");
  uint32_t count = get_raw<uint32_t>(in, off, path);
  if (count != model.params.size())
    throw FormatError(path + ": checkpoint has " + std::to_string(count) +
                      " parameters, model expects " + std::to_string(model.params.size()));
  for (uint32_t i = 0; i < count; ++i) {
    uint16_t len = get_raw<uint16_t>(in, off, path);
    if (off + len > in.size()) throw FormatError(path + ": truncated name");
    std::string name = in.substr(off, len);
    off += len;
    auto& [want_name, tensor] = model.params[i];
    if (name != want_name)
      throw FormatError(path + ": parameter '" + name + "' where '" + want_name +
                        "' was expected");
    uint8_t rank = get_raw<uint8_t>(in, off, path);
    if (rank != tensor->rank())
      throw FormatError(path + ": rank mismatch for '" + name + "'");
    for (int d = 0; d < rank; ++d) {
      uint32_t dim = get_raw<uint32_t>(in, off, path);
      if (static_cast<int64_t>(dim) != tensor->dim(d))
        throw FormatError(path + ": shape mismatch for '" + name + "'");
    }
    size_t bytes = tensor->data().size() * sizeof(float);
    if (off + bytes > in.size()) throw FormatError(path + ": truncated data for '" + name + "'");
    std::memcpy(tensor->data().data(), in.data() + off, bytes);
    off += bytes;
  }
  if (off != in.size()) throw FormatError(path + ": trailing bytes after parameters");
}

// --- model config json --------------------------------------------------------

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["embed_dim"] = cfg.msda.embed_dim;
  j["heads"] = cfg.msda.num_heads;
  j["points"] = cfg.msda.num_points;
  j["levels"] = cfg.msda.num_levels;
  j["ffn_dim"] = cfg.ffn_dim;
  j["enc_layers"] = cfg.enc_layers;
  j["dec_layers"] = cfg.dec_layers;
  j["heights"] = cfg.heights;
  j["backbone_channels"] = {cfg.backbone_c0, cfg.backbone_c1, cfg.backbone_c2};
  j["view_dim"] = cfg.view_dim;
  j["grid_cells_x"] = cfg.grid.cells_x;
  j["grid_cells_y"] = cfg.grid.cells_y;
  j["grid_meters_per_cell"] = cfg.grid.meters_per_cell;
  j["grid_origin_x"] = cfg.grid.origin_x;
  j["grid_origin_y"] = cfg.grid.origin_y;
  j["heatmap_sigma_cells"] = cfg.heatmap_sigma_cells;
  j["image_sigma_cells"] = cfg.image_sigma_cells;
  j["view_sample_height"] = cfg.view_sample_height;
  j["ground_loss_weight"] = cfg.ground_loss_weight;
  j["interaction_heads"] = cfg.interaction_heads;
  j["interaction"] = cfg.interaction == InteractionMode::kCross  ? "cross"
                     : cfg.interaction == InteractionMode::kSelf ? "self"
                                                                 : "off";
  j["supervision"] = cfg.supervision == SupervisionMode::kHeatmap ? "heatmap" : "coordinate";
  j["feature_stride"] = cfg.feature_stride;
  return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& text, const std::string& context) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(context + ": " + e.what());
  }
  static const std::vector<std::string> allowed = {
      "embed_dim",      "heads",        "points",          "levels",
      "ffn_dim",        "enc_layers",   "dec_layers",      "heights",
      "backbone_channels", "view_dim",  "grid_cells_x",    "grid_cells_y",
      "grid_meters_per_cell", "grid_origin_x", "grid_origin_y", "heatmap_sigma_cells",
      "image_sigma_cells", "view_sample_height", "ground_loss_weight", "interaction_heads",
      "interaction",    "supervision",  "feature_stride"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || it.key() == k;
    if (!ok) throw FormatError(context + ": unknown key '" + it.key() + "'");
  }
  ModelConfig cfg;
  try {
    if (j.contains("embed_dim")) cfg.msda.embed_dim = j["embed_dim"].get<int>();
    if (j.contains("heads")) cfg.msda.num_heads = j["heads"].get<int>();
    if (j.contains("points")) cfg.msda.num_points = j["points"].get<int>();
    if (j.contains("levels")) cfg.msda.num_levels = j["levels"].get<int>();
    if (j.contains("ffn_dim")) cfg.ffn_dim = j["ffn_dim"].get<int64_t>();
    if (j.contains("enc_layers")) cfg.enc_layers = j["enc_layers"].get<int>();
    if (j.contains("dec_layers")) cfg.dec_layers = j["dec_layers"].get<int>();
    if (j.contains("heights")) cfg.heights = j["heights"].get<std::vector<double>>();
    if (j.contains("backbone_channels")) {
      auto ch = j["backbone_channels"].get<std::vector<int64_t>>();
      if (ch.size() != 3) throw FormatError(context + ": backbone_channels needs 3 entries");
      cfg.backbone_c0 = ch[0];
      cfg.backbone_c1 = ch[1];
      cfg.backbone_c2 = ch[2];
    }
    if (j.contains("view_dim")) cfg.view_dim = j["view_dim"].get<int64_t>();
    if (j.contains("grid_cells_x")) cfg.grid.cells_x = j["grid_cells_x"].get<int64_t>();
    if (j.contains("grid_cells_y")) cfg.grid.cells_y = j["grid_cells_y"].get<int64_t>();
    if (j.contains("grid_meters_per_cell"))
      cfg.grid.meters_per_cell = j["grid_meters_per_cell"].get<double>();
    if (j.contains("grid_origin_x")) cfg.grid.origin_x = j["grid_origin_x"].get<double>();
    if (j.contains("grid_origin_y")) cfg.grid.origin_y = j["grid_origin_y"].get<double>();
    if (j.contains("heatmap_sigma_cells"))
      cfg.heatmap_sigma_cells = j["heatmap_sigma_cells"].get<double>();
    if (j.contains("image_sigma_cells"))
      cfg.image_sigma_cells = j["image_sigma_cells"].get<double>();
    if (j.contains("view_sample_height"))
      cfg.view_sample_height = j["view_sample_height"].get<double>();
    if (j.contains("ground_loss_weight"))
      cfg.ground_loss_weight = j["ground_loss_weight"].get<double>();
    if (j.contains("interaction_heads"))
      cfg.interaction_heads = j["interaction_heads"].get<int>();
    if (j.contains("interaction")) {
      auto mode = j["interaction"].get<std::string>();
      if (mode == "cross")
        cfg.interaction = InteractionMode::kCross;
      else if (mode == "self")
        cfg.interaction = InteractionMode::kSelf;
      else if (mode == "off")
        cfg.interaction = InteractionMode::kOff;
      else
        throw FormatError(context + ": interaction must be cross|self|off");
    }
    if (j.contains("supervision")) {
      auto mode = j["supervision"].get<std::string>();
      if (mode == "heatmap")
        cfg.supervision = SupervisionMode::kHeatmap;
      else if (mode == "coordinate")
        cfg.supervision = SupervisionMode::kCoordinate;
      else
        throw FormatError(context + ": supervision must be heatmap|coordinate");
    }
    if (j.contains("feature_stride")) cfg.feature_stride = j["feature_stride"].get<double>();
  } catch (const json::exception& e) {
    throw FormatError(context + ": " + e.what());
  }
  return cfg;
}

}  // namespace mvtrack
