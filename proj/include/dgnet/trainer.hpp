#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>

#include "dgnet/checkpoint.hpp"
#include "dgnet/clahe.hpp"
#include "dgnet/dataset.hpp"
#include "dgnet/dgnet.hpp"
#include "dgnet/losses.hpp"
#include "dgnet/metrics.hpp"
#include "dgnet/optim.hpp"

namespace dgnet {

enum class PseudoLabelMode {
    PerStep,  ///< CLAHE of the current prediction at every step
    PerEpoch, ///< CLAHE of the same image's prediction from the previous epoch
};

struct TrainConfig {
    AdamWConfig adamw;
    int batch = 5;
    std::uint64_t seed = 0;
    int epochs = 20;
    std::int64_t max_steps = 0; ///< stop after this many steps; 0 runs every epoch

    double ema_decay = 0.999;
    bool ema_warmup = true; ///< effective decay min(decay, (1 + k) / (10 + k)) after k updates

    LossWeights loss;
    bool gamma_warmup = false; ///< ramp gamma linearly over the first 10% of steps
    PseudoLabelMode pseudo_label = PseudoLabelMode::PerStep;
    ClaheConfig clahe;

    ResizeSchedule schedule;
    bool progressive = true;
    int image_size = 256; ///< training size when progressive is off

    double grad_clip = 0.0; ///< global-norm clip; 0 disables
    int validate_every = 1; ///< epochs between validations; 0 disables
    bool validate_with_ema = true;

    void validate() const;
};

struct StepResult {
    std::int64_t step = 0; ///< 1-based index of the completed step
    double l1 = 0.0;
    double ssim = 0.0;
    double dynamic = 0.0;
    double total = 0.0;
    double grad_norm = 0.0;
    double max_param_change = 0.0;
    Tensor<float> pseudo_label; ///< empty when the dynamic term is off
};

/// Drives AdamW, EMA and the dynamic pseudo-label over a paired dataset.
class Trainer {
public:
    Trainer(const ModelConfig& model_config, const TrainConfig& config, DatasetIndex train, DatasetIndex val);
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// One optimization step on the next scheduled batch.
    StepResult step();
    /// One optimization step on the given batch.
    StepResult train_step(const Batch& batch);

    /// Evaluation-mode metrics over the validation set at native resolution,
    /// center-cropped to multiples of 8.
    MetricReport validate(bool use_ema = true);

    /// Runs until the configured epochs or max_steps are done. Writes a step
    /// line per step to `log`; with `out_dir`, saves last.ckpt after each
    /// validation and best.ckpt whenever validation PSNR improves.
    void run(std::ostream& log, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
             const std::function<void(const StepResult&)>& on_step = nullptr);

    void save_checkpoint(const std::filesystem::path& path);
    /// Throws ConfigError for a checkpoint of a different model config.
    void load_checkpoint(const std::filesystem::path& path);

    std::int64_t steps_done() const { return step_; }
    std::int64_t total_steps() const;
    std::size_t batches_per_epoch() const;
    int epoch_of(std::int64_t step) const;
    int size_for_epoch(int epoch) const;

    DGNet<float>& model() { return model_; }
    DGNet<float>& ema_model() { return ema_.shadow(); }
    const TrainConfig& config() const { return config_; }
    double best_psnr() const { return best_psnr_; }
    /// Mean absolute and squared error of the last validate() call.
    double last_val_mae() const { return last_val_mae_; }
    double last_val_mse() const { return last_val_mse_; }

private:
    double gamma_for_step() const;
    Tensor<float> epoch_pseudo_label(const Batch& batch, const Tensor<float>& prediction);

    ModelConfig model_config_;
    TrainConfig config_;
    DatasetIndex train_;
    DatasetIndex val_;
    DGNet<float> model_;
    AdamW<float> optimizer_;
    EmaState<float> ema_;
    std::int64_t step_ = 0;
    double best_psnr_ = -std::numeric_limits<double>::infinity();
    std::optional<BatchIterator> iterator_;
    int iterator_epoch_ = -1;
    std::map<std::string, Tensor<float>> previous_labels_; ///< per-epoch pseudo-label mode
    double last_val_mae_ = 0.0;
    double last_val_mse_ = 0.0;
};

/// Tab-separated step line: step, L1, L_SSIM, L_d, total, grad-norm.
std::string format_step_line(const StepResult& result);

} // namespace dgnet
