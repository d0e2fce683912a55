#include "doctest.h"
#include "support.hpp"

#include "satsynth/downstream_seg.hpp"
#include "satsynth/experiment.hpp"

#include <numeric>
#include <set>

using namespace satsynth;
using namespace satsynth::testing;

namespace {

ClassArray row(std::initializer_list<int> v) {
  ClassArray a(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (int x : v) a(0, i++) = x;
  return a;
}

/// IoU of class c from pixel sets, without a confusion matrix.
std::optional<double> brute_iou(const ClassArray& pred, const ClassArray& gt, int c) {
  std::set<Index> p, g;
  for (Index i = 0; i < gt.size(); ++i) {
    if (pred.data()[i] == c) p.insert(i);
    if (gt.data()[i] == c) g.insert(i);
  }
  std::set<Index> both = p;
  both.insert(g.begin(), g.end());
  if (both.empty()) return std::nullopt;
  Index inter = 0;
  for (Index i : p) inter += g.count(i);
  return static_cast<double>(inter) / static_cast<double>(both.size());
}

}  // namespace

TEST_CASE("confusion matrix: perfect prediction, brute force, additivity") {
  Rng rng(1);
  const ClassArray gt = random_classes(rng, 8, 8, 6);
  ConfusionMatrix perfect(6);
  confusion_update(perfect, gt, gt);
  CHECK(perfect.total() == 64);
  CHECK(perfect.counts.diagonal().sum() == 64);

  for (int trial = 0; trial < 100; ++trial) {
    const ClassArray p = random_classes(rng, 8, 8, 6), g = random_classes(rng, 8, 8, 6);
    ConfusionMatrix cm(6);
    confusion_update(cm, p, g);
    Eigen::Matrix<std::int64_t, 6, 6> tally = Eigen::Matrix<std::int64_t, 6, 6>::Zero();
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 8; ++x) ++tally(g(y, x), p(y, x));
    CHECK(cm.counts == tally);

    ConfusionMatrix top(6), bottom(6);
    confusion_update(top, p.topRows(4), g.topRows(4));
    confusion_update(bottom, p.bottomRows(4), g.bottomRows(4));
    top += bottom;
    CHECK(top == cm);
  }
  ConfusionMatrix cm(3);
  CHECK_THROWS_AS(confusion_update(cm, row({0, 3}), row({0, 1})), std::invalid_argument);
}

TEST_CASE("iou: hand case, perfect case, zero-union exclusion") {
  ConfusionMatrix cm(2);
  confusion_update(cm, row({0, 1, 1, 1}), row({0, 0, 1, 1}));
  const SegMetrics m = iou_from_cm(cm);
  CHECK(*m.iou[0] == 1.0 / 2.0);
  CHECK(*m.iou[1] == 2.0 / 3.0);
  CHECK(m.miou == 7.0 / 12.0);

  ConfusionMatrix absent(4);
  confusion_update(absent, row({0, 1, 1}), row({0, 1, 1}));
  const SegMetrics a = iou_from_cm(absent);
  CHECK(*a.iou[0] == 1.0);
  CHECK_FALSE(a.iou[2].has_value());
  CHECK_FALSE(a.iou[3].has_value());
  CHECK(a.miou == 1.0);
}

TEST_CASE("property: iou matches set brute force and is permutation invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.uniform_int(5));
    const ClassArray p = random_classes(rng, 8, 8, k), g = random_classes(rng, 8, 8, k);
    ConfusionMatrix cm(k);
    confusion_update(cm, p, g);
    const SegMetrics m = iou_from_cm(cm);
    for (int c = 0; c < k; ++c) CHECK(m.iou[static_cast<std::size_t>(c)] == brute_iou(p, g, c));

    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    ClassArray pp = p, gp = g;
    for (Index i = 0; i < p.size(); ++i) {
      pp.data()[i] = perm[static_cast<std::size_t>(p.data()[i])];
      gp.data()[i] = perm[static_cast<std::size_t>(g.data()[i])];
    }
    ConfusionMatrix cmp(k);
    confusion_update(cmp, pp, gp);
    CHECK(iou_from_cm(cmp).miou == doctest::Approx(m.miou).epsilon(1e-12));
  }
}

TEST_CASE("early stopping walks patience epochs past the best") {
  EarlyStopping es(3);
  const std::vector<double> curve{0.5, 0.6, 0.55, 0.5, 0.45, 0.4, 0.3};
  Index epochs = 0;
  for (double v : curve) {
    ++epochs;
    if (es.update(v)) break;
  }
  CHECK(es.best_epoch() == 1);
  CHECK(es.best() == 0.6);
  CHECK(epochs == 1 + 3 + 1);

  EarlyStopping mono(2);
  CHECK_FALSE(mono.update(0.9));
  CHECK_FALSE(mono.update(0.8));
  CHECK(mono.update(0.7));
  CHECK(mono.epochs() == 3);
}

TEST_CASE("unet: shape contract, determinism, checkpoint round trip") {
  UNet net(4, 3, 2, 4);
  init_xavier(net.params(), 3);
  Rng rng(4);
  const TensorF x = random_tensor<float>(rng, {2, 4, 8, 8});
  const TensorF y = net(Var<float>(x)).value();
  CHECK(y.shape() == Shape{2, 3, 8, 8});
  CHECK(y == net(Var<float>(x)).value());
  CHECK_THROWS_AS(net(Var<float>(random_tensor<float>(rng, {1, 4, 10, 10}))), std::invalid_argument);

  const fs::path p = scratch_dir("unet") / "u.ssar";
  save_unet(net, p);
  const auto back = load_unet(p);
  CHECK(back->depth() == 2);
  CHECK((*back)(Var<float>(x)).value() == y);
  const TensorF one = unstack_image(x, 0);
  CHECK((back->predict(one) == net.predict(one)).all());
}

TEST_CASE("evaluate_predictor: oracle predictor and constant predictor") {
  ToyDatasetSpec spec;
  spec.num_tiles = 1;
  spec.num_val = 1;
  spec.num_test = 3;
  spec.tile_size = 40;
  const SplitManifests data = make_toy_dataset(spec, scratch_dir("evalpred"));

  const auto truth = [](const RasterTile& t, const PatchWindow& w) {
    return ClassArray(t.mask.classes.block(w.y0, w.x0, w.size, w.size));
  };
  const SegEvaluation perfect = evaluate_predictor(data.test, truth, 4, 16);
  CHECK(perfect.metrics.miou == 1.0);
  CHECK(perfect.cm.total() == 3 * 40 * 40);

  const auto zeros = [](const RasterTile&, const PatchWindow& w) {
    return ClassArray(ClassArray::Zero(w.size, w.size));
  };
  const SegEvaluation constant = evaluate_predictor(data.test, zeros, 4, 16);
  std::array<std::int64_t, 4> hist{};
  for (const auto& rec : data.test.records) {
    const ClassMask m = load_mask(rec.mask_uri);
    for (Index i = 0; i < m.classes.size(); ++i) ++hist[static_cast<std::size_t>(m.classes.data()[i])];
  }
  const double total = 3 * 40 * 40;
  CHECK(*constant.metrics.iou[0] == doctest::Approx(hist[0] / total));
  for (int c = 1; c < 4; ++c) CHECK(*constant.metrics.iou[static_cast<std::size_t>(c)] == 0.0);
}

TEST_CASE("per-class table keeps a fixed column order") {
  SegMetrics m;
  m.iou = {0.5, std::nullopt, 0.25};
  m.miou = 0.375;
  CHECK(per_class_header() ==
        "training_data,water,tree_canopy,low_vegetation,barren_land,impervious_other,"
        "impervious_road,mean");
  CHECK(per_class_row("x", m) == "x,0.500000,NA,0.250000,NA,NA,NA,0.375000");
}

TEST_CASE("toy segmentation is learnable") {
  ToyDatasetSpec spec;
  spec.num_tiles = 6;
  spec.num_val = 2;
  spec.num_test = 2;
  spec.tile_size = 32;
  spec.seed = 5;
  const SplitManifests data = make_toy_dataset(spec, scratch_dir("seg_learn"));
  SegConfig cfg;
  cfg.in_channels = 4;
  cfg.num_classes = 4;
  cfg.depth = 1;
  cfg.base_width = 8;
  cfg.patch = {16, 20, 1};
  cfg.eval_window = 16;
  cfg.max_epochs = 40;
  cfg.early_stop_patience = 8;
  cfg.adam.lr = 3e-3;
  cfg.seed = 2;
  const SegTrainResult r = train_downstream(cfg, data.train, data.val);
  CHECK(r.best_val_miou == r.history[static_cast<std::size_t>(r.best_epoch)].val_miou);
  const SegEvaluation ev = evaluate(*r.model, data.test, 16);
  CHECK(ev.metrics.miou >= 0.9);
  for (const auto& h : r.history) CHECK(std::isfinite(h.train_loss));
}
