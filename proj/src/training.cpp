#include "sanet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

#include <json.hpp>

#include "sanet/checkpoint.hpp"
#include "sanet/data.hpp"
#include "sanet/error.hpp"

namespace sanet::train {

namespace {

void write_divergence(const std::filesystem::path& path, const TrainState& s, int step, double loss)
{
    const auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    const nlohmann::json j = {{"epoch", s.epoch},
                              {"step", step},
                              {"loss", num(loss)},
                              {"lr", s.lr},
                              {"val_loss", num(s.val_loss)},
                              {"ema_val_loss", num(s.ema_val_loss)},
                              {"best_val_loss", num(s.best_val_loss)},
                              {"best_ema_val_loss", num(s.best_ema_val_loss)},
                              {"epochs_since_improvement", s.epochs_since_improvement},
                              {"decays", s.decays},
                              {"rng_seed", s.rng_seed}};
    std::ofstream out(path);
    out << j.dump(2) << '\n';
}

std::ofstream open_log(const std::filesystem::path& path, const char* header)
{
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << header << '\n' << std::setprecision(10);
    return out;
}

}  // namespace

TrainState initial_state(const ScheduleOptions& opts, std::uint64_t seed)
{
    TrainState s;
    s.lr = opts.lr0;
    s.rng_seed = seed;
    return s;
}

TrainState lr_schedule_step(TrainState s, double new_val_loss, const ScheduleOptions& opts)
{
    if (!std::isfinite(new_val_loss))
        throw DivergenceError("non-finite validation loss at epoch " + std::to_string(s.epoch));
    if (s.epoch < 1)
        throw ValidationError("schedule steps start at epoch 1");
    s.val_loss = new_val_loss;
    s.ema_val_loss = std::isnan(s.ema_val_loss)
                         ? new_val_loss
                         : opts.ema_alpha * s.ema_val_loss + (1.0 - opts.ema_alpha) * new_val_loss;
    s.improved_val = s.val_loss < s.best_val_loss;
    s.improved_ema = s.ema_val_loss < s.best_ema_val_loss;
    if (s.improved_val)
        s.best_val_loss = s.val_loss;
    if (s.improved_ema)
        s.best_ema_val_loss = s.ema_val_loss;

    if (s.improved_val || s.improved_ema) {
        s.epochs_since_improvement = 0;
        s.decays_since_improvement = 0;
        return s;
    }
    ++s.epochs_since_improvement;
    if (s.epoch > opts.freeze_epochs && s.epochs_since_improvement >= opts.patience) {
        if (s.decays_since_improvement >= opts.max_stalled_decays) {
            s.stop = true;
        } else {
            s.lr *= opts.decay_factor;
            ++s.decays;
            ++s.decays_since_improvement;
            s.epochs_since_improvement = 0;
        }
    }
    return s;
}

std::vector<FoldSpec> make_folds(std::vector<std::string> case_ids, int k, std::uint64_t seed)
{
    if (k < 2)
        throw ValidationError("cross-validation needs at least 2 folds, got " + std::to_string(k));
    if (static_cast<std::size_t>(k) > case_ids.size())
        throw ValidationError(std::to_string(k) + " folds requested for " + std::to_string(case_ids.size()) +
                              " cases");
    std::vector<std::string> sorted = case_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ValidationError("duplicate case id in fold split");

    std::mt19937_64 rng(seed);
    std::shuffle(case_ids.begin(), case_ids.end(), rng);
    const std::size_t n = case_ids.size(), base = n / static_cast<std::size_t>(k),
                      extra = n % static_cast<std::size_t>(k);
    std::vector<FoldSpec> folds(static_cast<std::size_t>(k));
    std::size_t start = 0;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const std::size_t len = base + (f < extra ? 1 : 0);
        folds[f].fold_id = static_cast<int>(f);
        for (std::size_t i = 0; i < n; ++i)
            (i >= start && i < start + len ? folds[f].valid_ids : folds[f].train_ids).push_back(case_ids[i]);
        start += len;
    }
    return folds;
}

Adam::Adam(nn::ParameterList<float> params, AdamOptions opts) : params_(std::move(params)), opts_(opts)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.var.value().size(), 0.0f);
        v_.emplace_back(p.var.value().size(), 0.0f);
    }
}

void Adam::step(double lr)
{
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const auto b1 = static_cast<float>(opts_.beta1), b2 = static_cast<float>(opts_.beta2);
    const auto step = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(opts_.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& p = params_[k].var;
        if (p.grad().empty())
            continue;  // parameter did not take part in this step's graph
        float* w = p.value().data();
        const float* g = p.grad().data();
        float* m = m_[k].data();
        float* v = v_[k].data();
        const auto n = static_cast<std::int64_t>(m_[k].size());
#pragma omp parallel for schedule(static) if (n > 4096)
        for (std::int64_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
        }
    }
}

void TrainConfig::validate() const
{
    network.validate();
    if (architecture != "sanet" && architecture != "unet")
        throw ConfigError("architecture must be sanet or unet, got '" + architecture + "'");
    if (!(schedule.lr0 > 0.0))
        throw ConfigError("lr0 must be positive");
    if (!(schedule.decay_factor > 0.0 && schedule.decay_factor < 1.0))
        throw ConfigError("decay_factor must lie in (0, 1)");
    if (schedule.freeze_epochs < 0 || schedule.patience < 1 || schedule.max_stalled_decays < 0)
        throw ConfigError("freeze_epochs >= 0, patience >= 1 and max_stalled_decays >= 0 are required");
    if (!(schedule.ema_alpha >= 0.0 && schedule.ema_alpha < 1.0))
        throw ConfigError("ema_alpha must lie in [0, 1)");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0))
        throw ConfigError("Adam betas must lie in [0, 1) and eps must be positive");
    if (!(loss.jaccard_eps > 0.0) || !(loss.focal_gamma >= 0.0))
        throw ConfigError("jaccard_eps must be positive and focal_gamma non-negative");
    if (max_epochs < 1 || steps_per_epoch < 0)
        throw ConfigError("max_epochs must be >= 1 and steps_per_epoch >= 0");
    if (!(foreground_fraction >= 0.0 && foreground_fraction <= 1.0))
        throw ConfigError("foreground_fraction must lie in [0, 1]");
}

Trainer::Trainer(const nn::SegmentationNetwork<float>& net, AdamOptions adam, loss::LossOptions loss)
    : net_(net), adam_(net.parameters(), adam), loss_(loss)
{
}

double Trainer::step(const Tensor<float>& input, const Tensor<float>& target, double lr)
{
    net_.zero_grad();
    const auto out = net_.forward(nn::Var<float>(input));
    const auto terms = loss::total_loss(out, target, loss_);
    const double value = terms.value();
    if (!std::isfinite(value))
        return value;  // caller decides; no update from a broken graph
    nn::backward(terms.total);
    adam_.step(lr);
    return value;
}

double validation_loss(const nn::SegmentationNetwork<float>& net, const std::vector<infer::Subject>& cases,
                       const loss::LossOptions& opts)
{
    if (cases.empty())
        throw ValidationError("validation needs at least one case");
    double sum = 0.0;
    for (const auto& c : cases) {
        if (!c.target)
            throw ValidationError("validation case " + c.id() + " has no labels");
        const Tensor<float> probs = infer::sliding_window_infer(net, c.input(), c.region);
        sum += loss::composite_loss(probs, *c.target, opts);
    }
    return sum / static_cast<double>(cases.size());
}

TrainResult train_fold(const TrainConfig& cfg, const std::vector<infer::Subject>& train_cases,
                       const std::vector<infer::Subject>& valid_cases, const std::filesystem::path& out_dir,
                       const std::function<void(const EpochLog&)>& on_epoch)
{
    cfg.validate();
    if (train_cases.empty())
        throw ValidationError("training needs at least one case");
    for (const auto& c : train_cases)
        if (!c.normalized.labels)
            throw ValidationError("training case " + c.id() + " has no labels");
    std::filesystem::create_directories(out_dir);

    const auto net = ckpt::make_network(cfg.architecture, cfg.network, cfg.seed);
    Trainer trainer(*net, cfg.adam, cfg.loss);
    std::mt19937_64 rng(cfg.seed ^ 0x5eedULL);

    TrainResult result;
    result.best_val_checkpoint = out_dir / "best_val.ckpt";
    result.best_ema_checkpoint = out_dir / "best_ema.ckpt";
    result.metrics_csv = out_dir / "metrics.csv";
    result.steps_csv = out_dir / "steps.csv";
    auto metrics = open_log(result.metrics_csv, "epoch,train_loss,val_loss,ema_val_loss,lr");
    auto steps = open_log(result.steps_csv, "epoch,step,loss");

    TrainState state = initial_state(cfg.schedule, cfg.seed);
    const std::size_t per_epoch =
        cfg.steps_per_epoch > 0 ? static_cast<std::size_t>(cfg.steps_per_epoch) : train_cases.size();
    std::vector<std::size_t> order(train_cases.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    int global_step = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs && !state.stop; ++epoch) {
        state.epoch = epoch;
        const double lr = state.lr;
        double loss_sum = 0.0;
        for (std::size_t i = 0; i < per_epoch; ++i) {
            if (i % order.size() == 0)
                std::shuffle(order.begin(), order.end(), rng);
            const auto& c = train_cases[order[i % order.size()]];
            data::Patch p = data::sample_patch(c.normalized, cfg.network.patch_size, rng, cfg.foreground_fraction);
            if (cfg.augment)
                data::augment(p.input, p.mask, rng);
            const double loss = trainer.step(p.input, p.mask, lr);
            ++global_step;
            if (!std::isfinite(loss)) {
                write_divergence(out_dir / "divergence.json", state, global_step, loss);
                throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                                      std::to_string(global_step) + "; state written to " +
                                      (out_dir / "divergence.json").string());
            }
            steps << epoch << ',' << global_step << ',' << loss << '\n';
            loss_sum += loss;
        }
        steps.flush();

        const double val = validation_loss(*net, valid_cases, cfg.loss);
        if (!std::isfinite(val)) {
            write_divergence(out_dir / "divergence.json", state, global_step, val);
            throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch) +
                                  "; state written to " + (out_dir / "divergence.json").string());
        }
        state = lr_schedule_step(state, val, cfg.schedule);

        ckpt::CheckpointMeta meta;
        meta.config = cfg.network;
        meta.architecture = cfg.architecture;
        meta.epoch = epoch;
        meta.val_loss = state.val_loss;
        meta.ema_val_loss = state.ema_val_loss;
        meta.seed = cfg.seed;
        if (state.improved_val) {
            meta.tag = "best_val";
            ckpt::save_checkpoint(result.best_val_checkpoint, *net, meta);
        }
        if (state.improved_ema) {
            meta.tag = "best_ema";
            ckpt::save_checkpoint(result.best_ema_checkpoint, *net, meta);
        }

        const EpochLog log{epoch, loss_sum / static_cast<double>(per_epoch), state.val_loss, state.ema_val_loss, lr};
        metrics << log.epoch << ',' << log.train_loss << ',' << log.val_loss << ',' << log.ema_val_loss << ','
                << log.lr << '\n';
        metrics.flush();
        if (on_epoch)
            on_epoch(log);
        result.epochs_run = epoch;
    }
    result.state = state;
    return result;
}

}  // namespace sanet::train
