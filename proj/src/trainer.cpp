#include "mvtrack/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

using nlohmann::json;

namespace mvtrack {

// --- config ------------------------------------------------------------------

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["epochs"] = cfg.epochs;
  j["learning_rate"] = cfg.learning_rate;
  j["optimizer"] = cfg.optimizer;
  j["seed"] = cfg.seed;
  if (!cfg.loss_log.empty()) j["loss_log"] = cfg.loss_log;
  j["frame_begin"] = cfg.frame_begin;
  j["frame_end"] = cfg.frame_end;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["model"] = json::parse(model_config_to_json(cfg.model));
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text, const std::string& context) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(context + ": " + e.what());
  }
  static const std::vector<std::string> allowed = {
      "epochs",     "learning_rate", "optimizer",  "seed",      "loss_log", "frame_begin",
      "frame_end",  "adam_beta1",    "adam_beta2", "adam_eps",  "model"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || it.key() == k;
    if (!ok) throw FormatError(context + ": unknown key '" + it.key() + "'");
  }
  TrainConfig cfg;
  try {
    if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
    if (j.contains("learning_rate")) cfg.learning_rate = j["learning_rate"].get<double>();
    if (j.contains("optimizer")) cfg.optimizer = j["optimizer"].get<std::string>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
    if (j.contains("loss_log")) cfg.loss_log = j["loss_log"].get<std::string>();
    if (j.contains("frame_begin")) cfg.frame_begin = j["frame_begin"].get<int>();
    if (j.contains("frame_end")) cfg.frame_end = j["frame_end"].get<int>();
    if (j.contains("adam_beta1")) cfg.adam_beta1 = j["adam_beta1"].get<double>();
    if (j.contains("adam_beta2")) cfg.adam_beta2 = j["adam_beta2"].get<double>();
    if (j.contains("adam_eps")) cfg.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("model"))
      cfg.model = model_config_from_json(j["model"].dump(), context + " (model)");
  } catch (const json::exception& e) {
    throw FormatError(context + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

void finalize_model_config(ModelConfig& cfg, const SceneConfig& scene) {
  if (cfg.grid.cells_x == 0 || cfg.grid.cells_y == 0)
    cfg.grid = ModelConfig::grid_for_world(scene.world_x, scene.world_y,
                                           cfg.grid.meters_per_cell);
  cfg.validate();
}

// --- optimizer ------------------------------------------------------------------

Adam::Adam(const std::vector<std::pair<std::string, Tensor*>>& params, double lr_, double b1,
           double b2, double eps_)
    : lr(lr_), beta1(b1), beta2(b2), eps(eps_) {
  for (const auto& [name, t] : params) {
    m.emplace_back(t->data().size(), 0.0f);
    v.emplace_back(t->data().size(), 0.0f);
  }
}

void Adam::step(std::vector<std::pair<std::string, Tensor*>>& params) {
  if (params.size() != m.size()) throw ShapeMismatchError("adam: parameter count changed");
  t += 1;
  const float bc1 = 1.0f - std::pow(float(beta1), float(t));
  const float bc2 = 1.0f - std::pow(float(beta2), float(t));
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k].second;
    if (!p.has_grad()) continue;
    auto& grad = p.grad();
    for (size_t i = 0; i < grad.size(); ++i) {
      float g = grad[i];
      m[k][i] = float(beta1) * m[k][i] + (1.0f - float(beta1)) * g;
      v[k][i] = float(beta2) * v[k][i] + (1.0f - float(beta2)) * g * g;
      float mhat = m[k][i] / bc1;
      float vhat = v[k][i] / bc2;
      p.data()[i] -= float(lr) * mhat / (std::sqrt(vhat) + float(eps));
    }
  }
}

// --- one training step -----------------------------------------------------------

namespace {

std::array<double, 2> world_to_cells(const GroundGrid& g, double x_m, double y_m) {
  double cx = std::clamp(g.world_to_cell_x(x_m), 0.0, double(g.cells_x - 1));
  double cy = std::clamp(g.world_to_cell_y(y_m), 0.0, double(g.cells_y - 1));
  return {cx, cy};
}

// image-plane center heatmap targets at the fused stride, one per camera
std::vector<std::vector<float>> view_targets(const AnnotationFrame& ann, int num_cams,
                                             int64_t fw, int64_t fh, double stride,
                                             double sigma) {
  std::vector<std::vector<float>> out;
  for (int cam = 0; cam < num_cams; ++cam) {
    std::vector<std::array<double, 2>> centers;
    for (const auto& p : ann.persons) {
      for (const auto& obs : p.views) {
        if (obs.cam != cam || !obs.visible) continue;
        double u = obs.u / stride, v = obs.v / stride;
        if (u < -0.499 || u > double(fw) - 0.5 || v < -0.499 || v > double(fh) - 0.5) continue;
        centers.push_back({std::clamp(u, 0.0, double(fw - 1)), std::clamp(v, 0.0, double(fh - 1))});
      }
    }
    out.push_back(build_gt_heatmap<float>(centers, fw, fh, sigma).first);
  }
  return out;
}

}  // namespace

LossBreakdown train_step(Model& model, Adam& opt, const LoadedFrame& prev, const LoadedFrame& cur,
                         const std::vector<CameraCalibration>& calibs, const ModelConfig& cfg) {
  // teacher forcing: track queries sit at the ground-truth previous positions
  std::vector<std::array<double, 2>> positions;
  std::vector<int64_t> ids;
  for (const auto& p : prev.ann.persons) {
    positions.push_back(world_to_cells(cfg.grid, p.x_m, p.y_m));
    ids.push_back(p.id);
  }

  auto enc_prev = model.encode_frame(prev.images, calibs);
  auto enc_cur = model.encode_frame(cur.images, calibs);
  auto out = model.decode_pair(enc_prev, enc_cur, calibs, positions, ids);

  // --- targets
  std::map<int64_t, std::array<double, 2>> cur_cells;
  for (const auto& p : cur.ann.persons) cur_cells[p.id] = world_to_cells(cfg.grid, p.x_m, p.y_m);
  auto [offset_targets, offset_valid] = build_offset_targets<float>(ids, positions, cur_cells);

  Tensor l_ground;
  if (cfg.supervision == SupervisionMode::kHeatmap) {
    std::vector<std::array<double, 2>> centers;
    for (const auto& p : cur.ann.persons) centers.push_back(world_to_cells(cfg.grid, p.x_m, p.y_m));
    auto [heat_target, center_mask] =
        build_gt_heatmap<float>(centers, cfg.grid.cells_x, cfg.grid.cells_y,
                                cfg.heatmap_sigma_cells);
    l_ground = focal_loss(out.heatmap, heat_target);
  } else {
    // coordinate supervision: normalized current positions of surviving ids
    std::vector<std::array<float, 2>> coord_targets(ids.size(), {0.0f, 0.0f});
    for (size_t i = 0; i < ids.size(); ++i) {
      auto it = cur_cells.find(ids[i]);
      if (it == cur_cells.end()) continue;
      coord_targets[i] = {float((it->second[0] + 0.5) / double(cfg.grid.cells_x)),
                          float((it->second[1] + 0.5) / double(cfg.grid.cells_y))};
    }
    l_ground = offset_l1_loss(out.coords, coord_targets, offset_valid);
  }

  Tensor l_track = offset_l1_loss(out.offsets.offsets, offset_targets, offset_valid);

  // image supervision over both frames' view heatmaps
  std::vector<Tensor> img_losses;
  const auto& packs_prev = enc_prev.views;
  const auto& packs_cur = enc_cur.views;
  int64_t fh = packs_prev.at(0).view_heatmap.dim(0);
  int64_t fw = packs_prev.at(0).view_heatmap.dim(1);
  auto tprev = view_targets(prev.ann, int(calibs.size()), fw, fh, cfg.feature_stride,
                            cfg.image_sigma_cells);
  auto tcur = view_targets(cur.ann, int(calibs.size()), fw, fh, cfg.feature_stride,
                           cfg.image_sigma_cells);
  for (size_t cam = 0; cam < calibs.size(); ++cam) {
    img_losses.push_back(focal_loss(packs_prev[cam].view_heatmap, tprev[cam]));
    img_losses.push_back(focal_loss(packs_cur[cam].view_heatmap, tcur[cam]));
  }
  Tensor l_img = img_losses[0];
  for (size_t i = 1; i < img_losses.size(); ++i) l_img = add(l_img, img_losses[i]);
  l_img = scale(l_img, 1.0f / float(img_losses.size()));

  Tensor total = total_loss(l_ground, l_track, l_img, model.sigma_c, model.sigma_t,
                            float(cfg.ground_loss_weight));
  if (!std::isfinite(double(total.item()))) throw NaNDetectedError("training loss not finite");

  LossBreakdown lb;
  lb.l_ground = double(l_ground.item());
  lb.l_track = double(l_track.item());
  lb.l_img = double(l_img.item());
  lb.sigma_c = double(model.sigma_c.item());
  lb.sigma_t = double(model.sigma_t.item());
  lb.total = double(total.item());
  lb.teacher_forced = true;
  lb.num_tracks = static_cast<int>(ids.size());

  for (auto& [name, t] : model.params) t->zero_grad();
  backward(total);
  opt.step(model.params);
  release_graph(total);
  return lb;
}

// --- crc + optimizer sidecar -------------------------------------------------------

uint32_t crc32(const std::string& bytes) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  uint32_t c = 0xffffffffu;
  for (unsigned char ch : bytes) c = table[(c ^ ch) & 0xff] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

namespace {

std::string slurp_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void save_opt_state(const std::string& path, const Adam& opt, int epochs_done,
                    uint32_t ckpt_crc) {
  std::string out = "MVTO";
  auto put = [&](const void* p, size_t n) { out.append(reinterpret_cast<const char*>(p), n); };
  uint32_t version = 1;
  put(&version, 4);
  put(&ckpt_crc, 4);
  int64_t t = opt.t;
  put(&t, 8);
  int32_t epochs = epochs_done;
  put(&epochs, 4);
  uint32_t nparams = static_cast<uint32_t>(opt.m.size());
  put(&nparams, 4);
  for (size_t k = 0; k < opt.m.size(); ++k) {
    uint64_t n = opt.m[k].size();
    put(&n, 8);
    put(opt.m[k].data(), opt.m[k].size() * 4);
    put(opt.v[k].data(), opt.v[k].size() * 4);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError(path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

int load_opt_state(const std::string& path, Adam& opt, uint32_t want_crc) {
  std::string in = slurp_file(path);
  size_t off = 0;
  auto get = [&](void* p, size_t n) {
    if (off + n > in.size()) throw FormatError(path + ": truncated optimizer state");
    std::memcpy(p, in.data() + off, n);
    off += n;
  };
  if (in.size() < 4 || in.substr(0, 4) != "MVTO")
    throw FormatError(path + ": bad optimizer-state magic");
  off = 4;
  uint32_t version;
  get(&version, 4);
  if (version != 1) throw FormatError(path + ": unsupported optimizer-state version");
  uint32_t crc;
  get(&crc, 4);
  if (crc != want_crc)
    throw ChecksumMismatchError(path + ": optimizer state does not belong to this checkpoint");
  get(&opt.t, 8);
  int32_t epochs;
  get(&epochs, 4);
  uint32_t nparams;
  get(&nparams, 4);
  if (nparams != opt.m.size()) throw FormatError(path + ": parameter count mismatch");
  for (size_t k = 0; k < opt.m.size(); ++k) {
    uint64_t n;
    get(&n, 8);
    if (n != opt.m[k].size()) throw FormatError(path + ": moment size mismatch");
    get(opt.m[k].data(), opt.m[k].size() * 4);
    get(opt.v[k].data(), opt.v[k].size() * 4);
  }
  return epochs;
}

}  // namespace

TrainRunResult train_run(const Dataset& data, const TrainConfig& cfg,
                         const std::string& checkpoint_out, const std::string& resume_from) {
  cfg.validate();
  cfg.model.validate();
  Model model(cfg.model, cfg.seed);
  Adam opt(model.params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

  int epochs_done = 0;
  if (!resume_from.empty()) {
    load_checkpoint(resume_from, model);
    epochs_done = load_opt_state(resume_from + ".opt", opt, crc32(slurp_file(resume_from)));
  }

  int end = cfg.frame_end < 0 ? int(data.frames.size()) : cfg.frame_end;
  if (end > int(data.frames.size())) throw ConfigInvalidError("train: frame_end beyond dataset");
  if (end - cfg.frame_begin < 2) throw ConfigInvalidError("train: need at least one frame pair");
  std::vector<int> pairs;
  for (int t = cfg.frame_begin; t + 1 < end; ++t) pairs.push_back(t);

  TrainRunResult result;
  std::ofstream log;
  if (!cfg.loss_log.empty()) {
    log.open(cfg.loss_log, epochs_done == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw FormatError(cfg.loss_log + ": cannot open loss log");
    if (epochs_done == 0) log << "step,l_ground,l_track,l_img,sigma_c,sigma_t,total\n";
  }

  int64_t step_index = int64_t(epochs_done) * int64_t(pairs.size());
  for (int epoch = epochs_done; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(pairs);
    std::mt19937_64 shuffle_rng(cfg.seed * 0x9e3779b97f4a7c15ull + uint64_t(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (int t : order) {
      LossBreakdown lb;
      try {
        lb = train_step(model, opt, data.frames[size_t(t)], data.frames[size_t(t) + 1],
                        data.calibs, cfg.model);
      } catch (const NaNDetectedError& e) {
        throw NaNDetectedError(std::string(e.what()) + " at step " +
                               std::to_string(step_index));
      }
      result.steps.push_back(lb);
      if (log.is_open()) {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      static_cast<long long>(step_index), lb.l_ground, lb.l_track, lb.l_img,
                      lb.sigma_c, lb.sigma_t, lb.total);
        log << buf;
      }
      ++step_index;
    }
    result.epochs_done = epoch + 1;
  }

  if (!checkpoint_out.empty()) {
    save_checkpoint(checkpoint_out, model);
    save_opt_state(checkpoint_out + ".opt", opt, result.epochs_done == 0 ? epochs_done
                                                                         : result.epochs_done,
                   crc32(slurp_file(checkpoint_out)));
    std::ofstream cfgout(checkpoint_out + ".json", std::ios::binary);
    cfgout << model_config_to_json(cfg.model);
  }
  return result;
}

// --- gradient checks ---------------------------------------------------------------

namespace {

using TD = TensorT<double>;

double fd_check(const std::function<TD()>& make_loss, std::vector<TD*> wrt, double h = 1e-4,
                const std::function<void(TD&)>& corrupt = nullptr) {
  for (auto* t : wrt) t->zero_grad();
  auto loss = make_loss();
  backward(loss);
  if (corrupt && !wrt.empty()) corrupt(*wrt.front());
  double worst = 0;
  for (auto* t : wrt) {
    std::vector<double> analytic = t->has_grad() ? t->grad()
                                                 : std::vector<double>(t->data().size(), 0.0);
    for (size_t i = 0; i < t->data().size(); ++i) {
      double keep = t->data()[i];
      t->data()[i] = keep + h;
      double lp = make_loss().item();
      t->data()[i] = keep - h;
      double lm = make_loss().item();
      t->data()[i] = keep;
      double num = (lp - lm) / (2 * h);
      double denom = std::max({std::abs(analytic[i]), std::abs(num), 1e-5});
      worst = std::max(worst, std::abs(analytic[i] - num) / denom);
    }
  }
  return worst;
}

TD rand_t(std::mt19937_64& rng, std::vector<int64_t> shape, double lo = -1, double hi = 1) {
  TD t(std::move(shape), true);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

GradCheckReport gradcheck_all(uint64_t seed, const GradCheckOptions& options) {
  auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report;
  std::mt19937_64 rng(seed);
  auto add = [&](const std::string& name, double err) {
    report.entries.push_back({name, err, err <= 1e-3});
  };

  {
    auto x = rand_t(rng, {5, 6});
    auto w = rand_t(rng, {4, 6});
    auto b = rand_t(rng, {4});
    add("linear", fd_check([&] { auto y = linear(x, w, b); return sum(mul(y, y)); },
                           {&x, &w, &b}));
  }
  {
    auto x = rand_t(rng, {4, 8});
    auto g = rand_t(rng, {8}, 0.5, 1.5);
    auto b = rand_t(rng, {8});
    add("layer_norm", fd_check([&] { auto y = layer_norm(x, g, b); return sum(mul(y, y)); },
                               {&x, &g, &b}));
  }
  {
    auto x = rand_t(rng, {3, 12}, -2, 2);
    auto probe = rand_t(rng, {3, 12});
    probe.set_requires_grad(false);
    add("softmax_blocks",
        fd_check([&] { return sum(mul(softmax_blocks(x, 4), mul(probe, softmax_blocks(x, 4)))); },
                 {&x}));
  }
  {
    auto x = rand_t(rng, {3, 7});
    add("relu_sigmoid_exp", fd_check(
                                [&] {
                                  auto y = sigmoid(relu(x));
                                  return sum(mul(y, exp_op(scale(y, -0.5))));
                                },
                                {&x}));
  }
  {
    auto x = rand_t(rng, {6, 5, 2});
    auto k = rand_t(rng, {3, 3, 2, 3});
    auto b = rand_t(rng, {3});
    add("conv2d_s1_same",
        fd_check([&] { auto y = conv2d(x, k, b, 1, 1); return sum(mul(y, y)); }, {&x, &k, &b}));
    add("conv2d_s2_valid",
        fd_check([&] { auto y = conv2d(x, k, b, 2, 0); return sum(mul(y, y)); }, {&x, &k, &b}));
  }
  {
    auto x = rand_t(rng, {3, 4, 2});
    add("upsample_nearest2",
        fd_check([&] { auto y = upsample_nearest2(x); return sum(mul(y, y)); }, {&x}));
  }
  {
    auto map = rand_t(rng, {6, 7, 3});
    auto uv = rand_t(rng, {5, 2}, 0.6, 4.3);
    add("grid_bilinear",
        fd_check([&] { auto y = grid_bilinear(map, uv); return sum(mul(y, y)); }, {&map, &uv}));
  }
  {
    auto q = rand_t(rng, {4, 8});
    auto k = rand_t(rng, {6, 8});
    auto v = rand_t(rng, {6, 8});
    std::vector<uint8_t> mask(24, 1);
    mask[3] = mask[10] = 0;
    add("mha_core", fd_check(
                        [&] {
                          auto y = mha_core(q, k, v, &mask, 2);
                          return sum(mul(y, y));
                        },
                        {&q, &k, &v}));
  }
  {
    // msda_core: values per level + offsets + weights (post-softmax path via
    // softmax_blocks to keep weights on the simplex)
    auto v0 = rand_t(rng, {4, 4, 8});
    auto v1 = rand_t(rng, {2, 2, 8});
    auto off = rand_t(rng, {3, 2 * 2 * 2 * 2}, -0.7, 0.7);
    auto wraw = rand_t(rng, {3, 2 * 2 * 2});
    std::vector<double> ref = {0.31, 0.42, 0.63, 0.55, 0.47, 0.52};
    auto corrupt = options.corrupt_msda_backward
                       ? std::function<void(TD&)>([](TD& t) {
                           if (!t.grad().empty()) t.grad()[0] += 0.5;
                         })
                       : std::function<void(TD&)>();
    add("msda_core", fd_check(
                         [&] {
                           std::vector<TD> values = {v0, v1};
                           auto w = softmax_blocks(wraw, 4);
                           auto y = msda_core(values, off, w, ref, 2, 2);
                           return sum(mul(y, y));
                         },
                         {&v0, &v1, &off, &wraw}, 1e-4, corrupt));
  }
  {
    std::mt19937_64 prng(seed ^ 0xabcdef);
    FfnParamsT<double> p(8, 12, prng);
    auto x = rand_t(rng, {4, 8});
    add("ffn_forward",
        fd_check([&] { auto y = ffn_forward(x, p); return sum(mul(y, y)); },
                 {&x, &p.fc1.weight, &p.fc1.bias, &p.fc2.weight, &p.fc2.bias, &p.norm.gamma,
                  &p.norm.beta}));
  }
  {
    std::mt19937_64 prng(seed ^ 0x123456);
    AttnParamsT<double> p(8, prng);
    auto q = rand_t(rng, {3, 8});
    auto kv = rand_t(rng, {5, 8});
    add("cross_attention",
        fd_check([&] { auto y = cross_attention(q, kv, nullptr, p, 2); return sum(mul(y, y)); },
                 {&q, &kv, &p.q.weight, &p.k.weight, &p.v.weight, &p.out.weight, &p.norm.gamma}));
  }
  {
    std::mt19937_64 prng(seed ^ 0x777);
    MsdaConfig cfg{2, 2, 2, 8};
    MsdaParamsT<double> p(cfg, prng);
    init_uniform(p.offset_net.weight, prng, 0.25);
    init_uniform(p.weight_net.weight, prng, 0.25);
    // nudge the ring biases off the integer lattice
    for (auto& b : p.offset_net.bias.data()) b += 0.137;
    auto q = rand_t(rng, {3, 8});
    auto values = rand_t(rng, {4 * 4 + 2 * 2, 8});
    std::vector<double> ref = {0.33, 0.41, 0.58, 0.52, 0.46, 0.61};
    std::vector<std::pair<int64_t, int64_t>> shapes = {{4, 4}, {2, 2}};
    add("msda_forward",
        fd_check(
            [&] {
              auto y = msda_forward(q, TD(), ref, values, shapes, cfg, p);
              return sum(mul(y, y));
            },
            {&q, &values, &p.value_proj.weight, &p.offset_net.weight, &p.offset_net.bias,
             &p.weight_net.weight, &p.out_proj.weight, &p.norm.gamma}));
  }
  {
    std::mt19937_64 prng(seed ^ 0x999);
    MlpHeadParamsT<double> p(8, 2, prng);
    auto x = rand_t(rng, {5, 8});
    add("mlp_head",
        fd_check([&] { auto y = mlp_head_forward(x, p); return sum(mul(y, y)); },
                 {&x, &p.fc1.weight, &p.fc1.bias, &p.fc2.weight, &p.fc2.bias}));
  }
  {
    auto emb = rand_t(rng, {3, 6});
    add("embed_rows",
        fd_check([&] { auto y = embed_rows(emb, {2, 3, 1}); return sum(mul(y, y)); }, {&emb}));
  }
  {
    // focal loss over a random prediction map away from the clamp boundaries
    std::uniform_real_distribution<double> up(0.1, 0.9);
    TD pred({5, 5}, true);
    std::vector<double> target(25);
    for (auto& v : pred.data()) v = up(rng);
    for (auto& v : target) v = up(rng);
    target[7] = 1.0;
    target[18] = 1.0;
    add("focal_loss", fd_check([&] { return focal_loss(pred, target); }, {&pred}));
  }
  {
    auto pred = rand_t(rng, {5, 2});
    std::vector<std::array<double, 2>> target(5, {0.3, -0.2});
    std::vector<uint8_t> valid = {1, 0, 1, 1, 0};
    add("offset_l1_loss", fd_check([&] { return offset_l1_loss(pred, target, valid); }, {&pred}));
  }
  {
    auto lg = TD::scalar(0.37, false);
    auto lt = TD::scalar(0.21, false);
    auto li = TD::scalar(0.11, false);
    auto sc = TD::scalar(0.4, true);
    auto st = TD::scalar(-0.3, true);
    add("total_loss", fd_check([&] { return total_loss(lg, lt, li, sc, st); }, {&sc, &st}));
  }
  {
    // composed pipeline: msda then ffn, gradients through both
    std::mt19937_64 prng(seed ^ 0x4242);
    MsdaConfig cfg{2, 2, 2, 8};
    MsdaParamsT<double> mp(cfg, prng);
    init_uniform(mp.offset_net.weight, prng, 0.25);
    for (auto& b : mp.offset_net.bias.data()) b += 0.211;
    FfnParamsT<double> fp(8, 12, prng);
    auto q = rand_t(rng, {3, 8});
    auto values = rand_t(rng, {4 * 4 + 2 * 2, 8});
    std::vector<double> ref = {0.36, 0.44, 0.55, 0.49, 0.52, 0.58};
    std::vector<std::pair<int64_t, int64_t>> shapes = {{4, 4}, {2, 2}};
    add("ffn_of_msda",
        fd_check(
            [&] {
              auto y = ffn_forward(msda_forward(q, TD(), ref, values, shapes, cfg, mp), fp);
              return sum(mul(y, y));
            },
            {&q, &values, &mp.value_proj.weight, &mp.offset_net.weight, &mp.weight_net.weight,
             &mp.out_proj.weight, &fp.fc1.weight, &fp.fc2.weight}));
  }

  report.all_pass = true;
  for (const auto& e : report.entries) report.all_pass = report.all_pass && e.pass;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace mvtrack
