#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "sanet/inference.hpp"
#include "sanet/losses.hpp"
#include "sanet/network.hpp"

namespace sanet::train {

struct ScheduleOptions {
    double lr0 = 0.003;
    double decay_factor = 0.3;
    int freeze_epochs = 150;      ///< lr is held for epochs 1..freeze_epochs
    int patience = 30;            ///< stale epochs before a decay
    int max_stalled_decays = 3;   ///< decays without improvement before stopping
    double ema_alpha = 0.9;       ///< ema <- alpha * ema + (1 - alpha) * val
};

struct TrainState {
    int epoch = 0;
    double lr = 0.003;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double ema_val_loss = std::numeric_limits<double>::quiet_NaN();
    double best_val_loss = std::numeric_limits<double>::infinity();
    double best_ema_val_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int decays_since_improvement = 0;
    int decays = 0;
    bool improved_val = false;  ///< set by the last step
    bool improved_ema = false;  ///< set by the last step
    bool stop = false;
    std::uint64_t rng_seed = 0;
};

TrainState initial_state(const ScheduleOptions& opts = {}, std::uint64_t seed = 0);

/// Folds the validation loss of epoch `state.epoch` into the schedule.
///
/// The EMA starts at the first loss. An epoch improves when the loss or its
/// EMA beats its best so far (strictly); that resets the stale counter and
/// the stalled-decay count. After the freeze, `patience` consecutive stale
/// epochs decay the lr and reset the counter, unless `max_stalled_decays`
/// decays have already happened without improvement, in which case `stop`
/// is set instead. Throws DivergenceError on a non-finite loss.
TrainState lr_schedule_step(TrainState state, double new_val_loss, const ScheduleOptions& opts = {});

struct FoldSpec {
    int fold_id = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> valid_ids;
};

/// Seeded shuffle split into k contiguous validation folds; the first
/// n mod k folds hold one extra case.
std::vector<FoldSpec> make_folds(std::vector<std::string> case_ids, int k, std::uint64_t seed);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(nn::ParameterList<float> params, AdamOptions opts = {});

    /// One bias-corrected update from the gradients currently stored on the parameters.
    void step(double lr);
    [[nodiscard]] std::int64_t steps() const { return t_; }

private:
    nn::ParameterList<float> params_;
    AdamOptions opts_;
    std::vector<std::vector<float>> m_, v_;
    std::int64_t t_ = 0;
};

struct TrainConfig {
    std::string architecture = "sanet";
    nn::NetworkConfig network;
    ScheduleOptions schedule;
    AdamOptions adam;
    loss::LossOptions loss;
    int max_epochs = 300;
    int steps_per_epoch = 0;  ///< 0: one patch per training case
    bool augment = true;
    double foreground_fraction = 0.0;
    std::uint64_t seed = 0;

    /// Throws ConfigError on the first invalid field.
    void validate() const;
};

/// One optimiser step on a patch: forward, composite loss over every head,
/// backward, Adam update. Returns the loss before the update.
class Trainer {
public:
    Trainer(const nn::SegmentationNetwork<float>& net, AdamOptions adam, loss::LossOptions loss);

    double step(const Tensor<float>& input, const Tensor<float>& target, double lr);

private:
    const nn::SegmentationNetwork<float>& net_;
    Adam adam_;
    loss::LossOptions loss_;
};

/// Mean composite loss of full-volume sliding-window predictions.
double validation_loss(const nn::SegmentationNetwork<float>& net, const std::vector<infer::Subject>& cases,
                       const loss::LossOptions& opts = {});

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double ema_val_loss = 0.0;
    double lr = 0.0;  ///< rate used during the epoch
};

struct TrainResult {
    std::filesystem::path best_val_checkpoint;
    std::filesystem::path best_ema_checkpoint;
    std::filesystem::path metrics_csv;
    std::filesystem::path steps_csv;
    TrainState state;
    int epochs_run = 0;
};

/// Trains a fresh network on `train_cases`, validating on `valid_cases` after
/// every epoch. Writes into `out_dir`:
///   metrics.csv   epoch,train_loss,val_loss,ema_val_loss,lr
///   steps.csv     epoch,step,loss
///   best_val.ckpt / best_ema.ckpt (+ .json sidecars)
/// A non-finite training or validation loss writes divergence.json and
/// throws DivergenceError.
TrainResult train_fold(const TrainConfig& cfg, const std::vector<infer::Subject>& train_cases,
                       const std::vector<infer::Subject>& valid_cases, const std::filesystem::path& out_dir,
                       const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace sanet::train
