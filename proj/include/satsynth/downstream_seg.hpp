#pragma once

#include "satsynth/data_ingest.hpp"
#include "satsynth/layers.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace satsynth {

struct SegConfig {
  Index in_channels = 4;
  Index num_classes = 6;
  AdamOptions adam{1e-4, 0.0, 0.9, 1e-8};
  Index early_stop_patience = 10;
  Index batch_size = 10;
  std::uint64_t seed = 0;
  Index max_epochs = 100;
  Index depth = 4;
  Index base_width = 64;
  PatchSpec patch;
  Index eval_window = 256;
  Index steps_per_epoch = 0;  // 0: one pass over the patch pool

  void validate() const;
};

/// Double 3×3 conv encoder/decoder with max-pool downsampling, nearest
/// upsampling and skip concatenation.
class UNet {
 public:
  UNet(Index in_channels, Index num_classes, Index depth, Index base_width);
  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  /// [N, C, H, W] → [N, K, H, W]; H and W must be divisible by 2^depth.
  Var<float> operator()(const Var<float>& x) const;

  ParameterSet<float>& params() { return params_; }
  const ParameterSet<float>& params() const { return params_; }
  Index in_channels() const { return in_channels_; }
  Index num_classes() const { return num_classes_; }
  Index depth() const { return depth_; }
  Index base_width() const { return base_width_; }

  /// Per-pixel argmax over a single C × H × W raster.
  ClassArray predict(const TensorF& image) const;

 private:
  struct DoubleConv {
    Conv2d<float> a, b;
  };
  DoubleConv make_double(const std::string& name, Index in, Index out);
  static Var<float> run(const DoubleConv& d, const Var<float>& x);

  Index in_channels_, num_classes_, depth_, base_width_;
  ParameterSet<float> params_;
  std::vector<DoubleConv> down_;
  DoubleConv bottom_;
  std::vector<Conv2d<float>> up_convs_;
  std::vector<DoubleConv> up_;
  Conv2d<float> head_;
};

void save_unet(const UNet& net, const fs::path& path);
std::unique_ptr<UNet> load_unet(const fs::path& path);

/// counts(g, p): pixels of ground-truth class g predicted as p.
struct ConfusionMatrix {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  explicit ConfusionMatrix(Index num_classes = 6)
      : counts(Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(num_classes,
                                                                                num_classes)) {}
  Index num_classes() const { return counts.rows(); }
  std::int64_t total() const { return counts.sum(); }
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix& other) const { return counts == other.counts; }
};

void confusion_update(ConfusionMatrix& cm, const ClassArray& pred, const ClassArray& gt);

struct SegMetrics {
  std::vector<std::optional<double>> iou;  // empty optional: class absent from gt and pred
  double miou = 0.0;
};

SegMetrics iou_from_cm(const ConfusionMatrix& cm);

/// Stops once `patience` consecutive epochs fail to beat the best value.
class EarlyStopping {
 public:
  explicit EarlyStopping(Index patience) : patience_(patience) {}

  /// Records one epoch; returns true when training should stop.
  bool update(double value);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  Index best_epoch() const { return best_epoch_; }
  Index epochs() const { return epochs_; }

 private:
  Index patience_;
  double best_ = -1.0;
  Index best_epoch_ = -1;
  Index epochs_ = 0;
  bool improved_ = false;
};

using WindowPredictor = std::function<ClassArray(const RasterTile&, const PatchWindow&)>;

struct SegEvaluation {
  ConfusionMatrix cm;
  SegMetrics metrics;
};

/// Tile-wise sliding windows with stride equal to the window; a far-edge window
/// covers any remainder and each pixel is scored once.
SegEvaluation evaluate_predictor(const DatasetManifest& manifest, const WindowPredictor& predict,
                                 Index num_classes, Index window);
SegEvaluation evaluate(const UNet& net, const DatasetManifest& manifest, Index window);

struct SegHistoryRow {
  Index epoch = 0;
  double train_loss = 0.0;
  double val_miou = 0.0;
};

struct SegTrainResult {
  std::unique_ptr<UNet> model;  // best validation epoch
  std::vector<SegHistoryRow> history;
  Index best_epoch = 0;
  double best_val_miou = 0.0;
};

/// One Adam step on a batch; returns the mean cross-entropy before the update.
double seg_train_step(UNet& net, Adam<float>& opt, const TensorF& images,
                      const std::vector<int>& labels);

SegTrainResult train_downstream(const SegConfig& config, const DatasetManifest& train,
                                const DatasetManifest& val);

void write_seg_history(const std::vector<SegHistoryRow>& history, const fs::path& path);

/// Fixed per-class column order; classes beyond num_classes are written as NA.
std::string per_class_header();
std::string per_class_row(const std::string& label, const SegMetrics& metrics);
void write_per_class_csv(const std::vector<std::pair<std::string, SegMetrics>>& rows,
                         const fs::path& path);

}  // namespace satsynth
