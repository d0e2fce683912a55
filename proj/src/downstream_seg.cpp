#include "satsynth/downstream_seg.hpp"

#include "satsynth/archive.hpp"
#include "satsynth/rng.hpp"
#include "satsynth/synthesis.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace satsynth {

void SegConfig::validate() const {
  if (in_channels != 3 && in_channels != 4) throw std::invalid_argument("in_channels must be 3 or 4");
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (!(adam.lr > 0.0)) throw std::invalid_argument("downstream lr must be > 0");
  if (early_stop_patience < 1) throw std::invalid_argument("early_stop_patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("downstream batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (depth < 0 || base_width < 1) throw std::invalid_argument("bad U-Net shape");
  const Index unit = Index{1} << depth;
  if (patch.size % unit != 0 || eval_window % unit != 0) {
    throw std::invalid_argument("patch and eval window must be divisible by 2^depth");
  }
  if (steps_per_epoch < 0) throw std::invalid_argument("steps_per_epoch must be >= 0");
}

UNet::DoubleConv UNet::make_double(const std::string& name, Index in, Index out) {
  return {Conv2d<float>(params_, name + ".conv_a", in, out, 3, 1, 1),
          Conv2d<float>(params_, name + ".conv_b", out, out, 3, 1, 1)};
}

Var<float> UNet::run(const DoubleConv& d, const Var<float>& x) {
  return relu(d.b(relu(d.a(x))));
}

UNet::UNet(Index in_channels, Index num_classes, Index depth, Index base_width)
    : in_channels_(in_channels), num_classes_(num_classes), depth_(depth),
      base_width_(base_width) {
  auto width = [&](Index level) { return base_width << level; };
  Index in = in_channels;
  for (Index l = 0; l < depth; ++l) {
    down_.push_back(make_double("down" + std::to_string(l), in, width(l)));
    in = width(l);
  }
  bottom_ = make_double("bottom", in, width(depth));
  up_convs_.resize(static_cast<std::size_t>(depth));
  up_.resize(static_cast<std::size_t>(depth));
  for (Index l = depth - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    up_convs_[i] = Conv2d<float>(params_, "up" + std::to_string(l) + ".reduce", width(l + 1),
                                 width(l), 3, 1, 1);
    up_[i] = make_double("up" + std::to_string(l), 2 * width(l), width(l));
  }
  head_ = Conv2d<float>(params_, "head", width(0), num_classes, 1, 1, 0);
}

Var<float> UNet::operator()(const Var<float>& x) const {
  if (x.shape().size() != 4 || x.dim(1) != in_channels_) {
    throw std::invalid_argument("unet: expected [N, " + std::to_string(in_channels_) +
                                ", H, W], got " + shape_to_string(x.shape()));
  }
  const Index unit = Index{1} << depth_;
  if (x.dim(2) % unit != 0 || x.dim(3) % unit != 0) {
    throw std::invalid_argument("unet: spatial size " + std::to_string(x.dim(2)) + "x" +
                                std::to_string(x.dim(3)) + " not divisible by " +
                                std::to_string(unit));
  }
  std::vector<Var<float>> skips;
  Var<float> h = x;
  for (const auto& d : down_) {
    skips.push_back(run(d, h));
    h = max_pool2(skips.back());
  }
  h = run(bottom_, h);
  for (Index l = depth_ - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    h = relu(up_convs_[i](upsample_nearest2x(h)));
    h = run(up_[i], concat_channels(h, skips[i]));
  }
  return head_(h);
}

ClassArray UNet::predict(const TensorF& image) const {
  NoGradGuard guard;
  const Var<float> logits = (*this)(Var<float>(stack_images({&image})));
  const Index k = num_classes_, h = image.dim(1), w = image.dim(2);
  ClassArray out(h, w);
  const float* p = logits.value().ptr();
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      Index best = 0;
      for (Index c = 1; c < k; ++c) {
        if (p[(c * h + y) * w + x] > p[(best * h + y) * w + x]) best = c;
      }
      out(y, x) = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

namespace {
constexpr int kUnetFormat = 1;
}

void save_unet(const UNet& net, const fs::path& path) {
  Archive ar;
  nlohmann::json cfg{{"format_version", kUnetFormat},
                     {"in_channels", net.in_channels()},
                     {"num_classes", net.num_classes()},
                     {"depth", net.depth()},
                     {"base_width", net.base_width()}};
  ar.put("config.json", cfg.dump(2));
  for (const auto& [name, p] : net.params().params()) {
    ar.put("param/" + name,
           encode_le<float>(p.value().ptr(), static_cast<std::size_t>(p.value().size())));
  }
  ar.save(path);
}

std::unique_ptr<UNet> load_unet(const fs::path& path) {
  const Archive ar = Archive::load(path);
  const auto cfg = nlohmann::json::parse(ar.get("config.json"));
  if (cfg.value("format_version", 0) != kUnetFormat) {
    throw std::runtime_error("unsupported segmentation checkpoint version in " + path.string());
  }
  auto net = std::make_unique<UNet>(cfg.at("in_channels").get<Index>(),
                                    cfg.at("num_classes").get<Index>(),
                                    cfg.at("depth").get<Index>(), cfg.at("base_width").get<Index>());
  for (const auto& [name, p] : net->params().params()) {
    const auto values = decode_le<float>(ar.get("param/" + name));
    Var<float> handle = p;
    if (static_cast<Index>(values.size()) != handle.value().size()) {
      throw std::runtime_error("segmentation checkpoint parameter " + name + " has the wrong size");
    }
    std::copy(values.begin(), values.end(), handle.mutable_value().ptr());
  }
  return net;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes() != num_classes()) throw std::invalid_argument("confusion size mismatch");
  counts += other.counts;
  return *this;
}

void confusion_update(ConfusionMatrix& cm, const ClassArray& pred, const ClassArray& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw std::invalid_argument("confusion_update: prediction and ground truth differ in shape");
  }
  const Index k = cm.num_classes();
  for (Index i = 0; i < gt.size(); ++i) {
    const std::int32_t g = gt.data()[i], p = pred.data()[i];
    if (g < 0 || g >= k || p < 0 || p >= k) throw std::invalid_argument("class index out of range");
    ++cm.counts(g, p);
  }
}

namespace {

using Wide = __int128;

Wide gcd_wide(Wide a, Wide b) {
  while (b != 0) {
    const Wide t = a % b;
    a = b;
    b = t;
  }
  return a < 0 ? -a : a;
}

/// Mean of inter/uni fractions, summed exactly when the rational fits in
/// 53 bits so the result is the correctly rounded quotient.
double mean_of_fractions(const std::vector<std::pair<std::int64_t, std::int64_t>>& fr) {
  if (fr.empty()) return 0.0;
  constexpr Wide limit = Wide(1) << 53;
  Wide num = 0, den = 1;
  bool exact = true;
  for (const auto& [n, d] : fr) {
    Wide a = 0, b = 0, nd = 0, sum = 0;
    if (__builtin_mul_overflow(num, Wide(d), &a) || __builtin_mul_overflow(Wide(n), den, &b) ||
        __builtin_mul_overflow(den, Wide(d), &nd) || __builtin_add_overflow(a, b, &sum)) {
      exact = false;
      break;
    }
    const Wide g = std::max<Wide>(gcd_wide(sum, nd), 1);
    num = sum / g;
    den = nd / g;
  }
  if (exact && !__builtin_mul_overflow(den, Wide(fr.size()), &den)) {
    const Wide g = std::max<Wide>(gcd_wide(num, den), 1);
    num /= g;
    den /= g;
    if (num < limit && den < limit) return static_cast<double>(num) / static_cast<double>(den);
  }
  long double acc = 0.0L;
  for (const auto& [n, d] : fr) acc += static_cast<long double>(n) / static_cast<long double>(d);
  return static_cast<double>(acc / static_cast<long double>(fr.size()));
}

}  // namespace

SegMetrics iou_from_cm(const ConfusionMatrix& cm) {
  SegMetrics m;
  const Index k = cm.num_classes();
  std::vector<std::pair<std::int64_t, std::int64_t>> fractions;
  for (Index c = 0; c < k; ++c) {
    const std::int64_t inter = cm.counts(c, c);
    const std::int64_t uni = cm.counts.row(c).sum() + cm.counts.col(c).sum() - inter;
    if (uni == 0) {
      m.iou.emplace_back();
      continue;
    }
    m.iou.emplace_back(static_cast<double>(inter) / static_cast<double>(uni));
    fractions.emplace_back(inter, uni);
  }
  m.miou = mean_of_fractions(fractions);
  return m;
}

bool EarlyStopping::update(double value) {
  improved_ = value > best_ || best_epoch_ < 0;
  if (improved_) {
    best_ = value;
    best_epoch_ = epochs_;
  }
  ++epochs_;
  return epochs_ - 1 - best_epoch_ >= patience_;
}

SegEvaluation evaluate_predictor(const DatasetManifest& manifest, const WindowPredictor& predict,
                                 Index num_classes, Index window) {
  SegEvaluation ev{ConfusionMatrix(num_classes), {}};
  for (const auto& rec : manifest.records) {
    const RasterTile tile = load_record(rec);
    const auto windows = grid_windows(tile.height(), tile.width(), window, 0);
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> scored =
        Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(tile.height(), tile.width(),
                                                                     false);
    ClassArray pred(tile.height(), tile.width());
    for (const auto& w : windows) {
      const ClassArray p = predict(tile, w);
      if (p.rows() != w.size || p.cols() != w.size) {
        throw std::invalid_argument("predictor returned a window of the wrong size");
      }
      for (Index y = 0; y < w.size; ++y) {
        for (Index x = 0; x < w.size; ++x) {
          if (!scored(w.y0 + y, w.x0 + x)) {
            pred(w.y0 + y, w.x0 + x) = p(y, x);
            scored(w.y0 + y, w.x0 + x) = true;
          }
        }
      }
    }
    confusion_update(ev.cm, pred, tile.mask.classes);
  }
  ev.metrics = iou_from_cm(ev.cm);
  return ev;
}

SegEvaluation evaluate(const UNet& net, const DatasetManifest& manifest, Index window) {
  return evaluate_predictor(
      manifest,
      [&net](const RasterTile& tile, const PatchWindow& w) {
        return net.predict(crop_patch(tile, w).image);
      },
      net.num_classes(), window);
}

double seg_train_step(UNet& net, Adam<float>& opt, const TensorF& images,
                      const std::vector<int>& labels) {
  const Var<float> loss = cross_entropy(net(Var<float>(images)), labels);
  const double value = loss.item();
  net.params().zero_grad();
  backward(loss);
  opt.step();
  return value;
}

namespace {

struct SegPool {
  std::vector<RasterTile> tiles;
  std::vector<std::pair<std::size_t, PatchWindow>> windows;
};

SegPool build_pool(const DatasetManifest& manifest, const SegConfig& cfg) {
  SegPool pool;
  for (std::size_t t = 0; t < manifest.records.size(); ++t) {
    pool.tiles.push_back(load_record(manifest.records[t]));
    const RasterTile& tile = pool.tiles.back();
    if (tile.channels() != cfg.in_channels) {
      throw std::invalid_argument("tile " + tile.tile_id + " has " +
                                  std::to_string(tile.channels()) + " channels, expected " +
                                  std::to_string(cfg.in_channels));
    }
    if (tile.mask.num_classes != cfg.num_classes) {
      throw std::invalid_argument("tile " + tile.tile_id + " has " +
                                  std::to_string(tile.mask.num_classes) + " classes, expected " +
                                  std::to_string(cfg.num_classes));
    }
    PatchSpec spec = cfg.patch;
    spec.seed = derive_seed(cfg.patch.seed, "seg_windows", {t});
    for (const auto& w : sample_windows(tile.height(), tile.width(), spec)) {
      pool.windows.emplace_back(t, w);
    }
  }
  return pool;
}

std::vector<Tensor<float>> snapshot(const UNet& net) {
  std::vector<Tensor<float>> out;
  for (const auto& [_, p] : net.params().params()) out.push_back(p.value());
  return out;
}

void restore(UNet& net, const std::vector<Tensor<float>>& values) {
  std::size_t i = 0;
  for (const auto& [_, p] : net.params().params()) {
    Var<float> handle = p;
    handle.mutable_value() = values[i++];
  }
}

}  // namespace

SegTrainResult train_downstream(const SegConfig& config, const DatasetManifest& train,
                                const DatasetManifest& val) {
  config.validate();
  if (train.records.empty() || val.records.empty()) {
    throw std::invalid_argument("train_downstream: empty train or validation manifest");
  }
  const SegPool pool = build_pool(train, config);
  const Index n = config.batch_size;
  const Index pool_size = static_cast<Index>(pool.windows.size());
  const Index steps = config.steps_per_epoch > 0 ? config.steps_per_epoch : pool_size / n;
  if (steps == 0 || pool_size == 0) throw std::invalid_argument("train_downstream: no full batch");

  SegTrainResult result;
  result.model = std::make_unique<UNet>(config.in_channels, config.num_classes, config.depth,
                                        config.base_width);
  UNet& net = *result.model;
  init_xavier(net.params(), derive_seed(config.seed, "init_unet"));
  Adam<float> opt(net.params(), config.adam);
  EarlyStopping stopper(config.early_stop_patience);
  std::vector<Tensor<float>> best = snapshot(net);

  std::vector<std::size_t> order(pool.windows.size());
  for (Index epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, "seg_epoch_order", {static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    for (Index s = 0; s < steps; ++s) {
      std::vector<Patch> patches;
      std::vector<std::string> ids;
      for (Index i = 0; i < n; ++i) {
        const auto& [t, w] = pool.windows[order[static_cast<std::size_t>((s * n + i) % pool_size)]];
        patches.push_back(crop_patch(pool.tiles[t], w));
        ids.push_back(pool.tiles[t].tile_id + "@" + std::to_string(w.y0) + "," +
                      std::to_string(w.x0));
      }
      std::vector<const TensorF*> imgs;
      std::vector<int> labels;
      for (const auto& p : patches) {
        imgs.push_back(&p.image);
        labels.insert(labels.end(), p.mask.classes.data(),
                      p.mask.classes.data() + p.mask.classes.size());
      }
      const double loss = seg_train_step(net, opt, stack_images(imgs), labels);
      if (!std::isfinite(loss)) throw TrainingDiverged(epoch * steps + s, "cross_entropy", ids);
      loss_sum += loss;
    }

    const double val_miou = evaluate(net, val, config.eval_window).metrics.miou;
    result.history.push_back({epoch, loss_sum / static_cast<double>(steps), val_miou});
    const bool stop = stopper.update(val_miou);
    if (stopper.improved()) best = snapshot(net);
    if (stop) break;
  }
  restore(net, best);
  result.best_epoch = stopper.best_epoch();
  result.best_val_miou = stopper.best();
  return result;
}

void write_seg_history(const std::vector<SegHistoryRow>& history, const fs::path& path) {
  std::ostringstream os;
  os << "epoch,train_loss,val_miou\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g\n", static_cast<long long>(r.epoch),
                  r.train_loss, r.val_miou);
    os << buf;
  }
  write_file(path, os.str());
}

std::string per_class_header() {
  std::string h = "training_data";
  for (const auto& name : land_cover_class_names()) h += "," + name;
  return h + ",mean";
}

std::string per_class_row(const std::string& label, const SegMetrics& metrics) {
  std::string row = label;
  char buf[32];
  for (std::size_t c = 0; c < land_cover_class_names().size(); ++c) {
    if (c < metrics.iou.size() && metrics.iou[c]) {
      std::snprintf(buf, sizeof buf, ",%.6f", *metrics.iou[c]);
      row += buf;
    } else {
      row += ",NA";
    }
  }
  std::snprintf(buf, sizeof buf, ",%.6f", metrics.miou);
  return row + buf;
}

void write_per_class_csv(const std::vector<std::pair<std::string, SegMetrics>>& rows,
                         const fs::path& path) {
  std::string out = per_class_header() + "\n";
  for (const auto& [label, m] : rows) out += per_class_row(label, m) + "\n";
  write_file(path, out);
}

}  // namespace satsynth
