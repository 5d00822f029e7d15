#include "sanet/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "sanet/checkpoint.hpp"
#include "sanet/data.hpp"
#include "sanet/error.hpp"
#include "sanet/inference.hpp"
#include "sanet/metrics.hpp"
#include "sanet/nifti.hpp"
#include "sanet/training.hpp"

namespace sanet::cli {

namespace fs = std::filesystem;

namespace {

struct SynthOptions {
    std::string out;
    int cases = 8;
    int size = 96;
    std::uint64_t seed = 7;
};

struct TrainOptions {
    std::string data;
    std::string out;
    train::TrainConfig train;
    int folds = 5;
    int fold = 0;
    bool all_data = false;
    double threshold = 0.5;
};

struct InferOptions {
    std::string data;
    std::string out;
    std::vector<std::string> checkpoints;
    double threshold = 0.5;
};

struct EvalOptions {
    std::string pred;
    std::string data;
    std::string out;
    double empty_dice = 1.0;
    double empty_hd95 = -1.0;  ///< negative leaves hd95 undefined for empty masks
};

void add_train_options(CLI::App* app, TrainOptions& o)
{
    auto& t = o.train;
    app->add_option("--data", o.data, "Dataset directory (one subdirectory per case)")->required();
    app->add_option("--out", o.out, "Output directory")->required();
    app->add_option("--architecture", t.architecture, "sanet or unet")->check(CLI::IsMember({"sanet", "unet"}));
    app->add_option("--base-width", t.network.base_width, "Channels at the finest scale");
    app->add_option("--num-scales", t.network.num_scales, "Encoder scales including the endpoint");
    app->add_option("--se-reduction", t.network.se_reduction, "Squeeze ratio of the ResSE gates");
    app->add_option("--sa-reduction", t.network.sa_reduction, "Squeeze ratio of the scale-attention blocks");
    app->add_option("--patch-size", t.network.patch_size, "Cubic training and inference patch side");
    app->add_option("--deep-supervision", t.network.deep_supervision, "Attach deep-supervision heads");
    app->add_option("--lr", t.schedule.lr0, "Initial learning rate");
    app->add_option("--decay-factor", t.schedule.decay_factor, "Learning-rate decay factor");
    app->add_option("--freeze-epochs", t.schedule.freeze_epochs, "Epochs with a fixed learning rate");
    app->add_option("--patience", t.schedule.patience, "Stale epochs before a decay");
    app->add_option("--max-stalled-decays", t.schedule.max_stalled_decays,
                    "Decays without improvement before early stopping");
    app->add_option("--ema-alpha", t.schedule.ema_alpha, "Smoothing of the validation-loss EMA");
    app->add_option("--beta1", t.adam.beta1, "Adam first-moment decay");
    app->add_option("--beta2", t.adam.beta2, "Adam second-moment decay");
    app->add_option("--adam-eps", t.adam.eps, "Adam denominator epsilon");
    app->add_option("--jaccard-eps", t.loss.jaccard_eps, "Jaccard smoothing epsilon");
    app->add_option("--focal-gamma", t.loss.focal_gamma, "Focal loss focusing exponent");
    app->add_option("--max-epochs", t.max_epochs, "Epoch budget");
    app->add_option("--steps-per-epoch", t.steps_per_epoch, "Patches per epoch (0: one per training case)");
    app->add_option("--augment", t.augment, "Random flips and contrast scaling");
    app->add_option("--foreground-fraction", t.foreground_fraction,
                    "Probability of centring a patch on tumour instead of sampling uniformly");
    app->add_option("--seed", t.seed, "Seed for initialisation, sampling and fold split");
    app->add_option("--folds", o.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
    app->add_option("--threshold", o.threshold, "Probability threshold for label decoding")
        ->check(CLI::Range(0.0, 1.0));
}

std::vector<infer::Subject> load_subjects(const std::vector<fs::path>& dirs, bool need_labels)
{
    std::vector<infer::Subject> out;
    for (const auto& d : dirs) {
        data::Case c = data::load_case(d);
        if (need_labels && !c.labels)
            throw ValidationError("case " + c.id + " has no segmentation");
        out.push_back(infer::prepare(std::move(c)));
    }
    return out;
}

std::vector<fs::path> require_cases(const std::string& root)
{
    auto dirs = data::list_case_dirs(root);
    if (dirs.empty())
        throw IoError("no cases found under " + root);
    return dirs;
}

std::vector<infer::Subject> select(const std::vector<infer::Subject>& all, const std::vector<std::string>& ids)
{
    std::map<std::string, const infer::Subject*> by_id;
    for (const auto& s : all)
        by_id[s.id()] = &s;
    std::vector<infer::Subject> out;
    for (const auto& id : ids)
        out.push_back(*by_id.at(id));
    return out;
}

std::function<void(const train::EpochLog&)> epoch_printer(std::ostream& out, const std::string& prefix)
{
    return [&out, prefix](const train::EpochLog& l) {
        out << prefix << "epoch " << l.epoch << "  train " << std::fixed << std::setprecision(4) << l.train_loss
            << "  val " << l.val_loss << "  ema " << l.ema_val_loss << std::defaultfloat << "  lr " << l.lr << '\n'
            << std::flush;
    };
}

void check_fits(const std::vector<infer::Subject>& cases, int patch)
{
    for (const auto& s : cases) {
        const Shape v = s.input().shape();
        if (v.d < patch || v.h < patch || v.w < patch)
            throw ValidationError("case " + s.id() + " has volume " + v.with_channels(1).str() +
                                  ", smaller than patch size " + std::to_string(patch));
    }
}

int cmd_synth(const SynthOptions& o, std::ostream& out)
{
    fs::create_directories(o.out);
    for (int i = 0; i < o.cases; ++i) {
        const data::Case c = data::synth_phantom(o.seed + static_cast<std::uint64_t>(i), o.size);
        data::write_case(fs::path(o.out) / c.id, c);
    }
    out << "wrote " << o.cases << " phantom cases of size " << o.size << " to " << o.out << '\n';
    return 0;
}

int cmd_train(const TrainOptions& o, std::ostream& out)
{
    o.train.validate();
    const auto subjects = load_subjects(require_cases(o.data), true);
    check_fits(subjects, o.train.network.patch_size);
    std::vector<infer::Subject> tr, va;
    if (o.all_data) {
        tr = va = subjects;
    } else {
        std::vector<std::string> ids;
        for (const auto& s : subjects)
            ids.push_back(s.id());
        const auto folds = train::make_folds(ids, o.folds, o.train.seed);
        if (o.fold < 0 || o.fold >= o.folds)
            throw ValidationError("--fold must lie in [0, " + std::to_string(o.folds - 1) + "]");
        tr = select(subjects, folds[static_cast<std::size_t>(o.fold)].train_ids);
        va = select(subjects, folds[static_cast<std::size_t>(o.fold)].valid_ids);
    }
    out << "training on " << tr.size() << " cases, validating on " << va.size() << '\n';
    const auto r = train::train_fold(o.train, tr, va, o.out, epoch_printer(out, ""));
    out << "finished after " << r.epochs_run << " epochs" << (r.state.stop ? " (early stop)" : "") << '\n'
        << "best val checkpoint: " << r.best_val_checkpoint.string() << '\n'
        << "best ema checkpoint: " << r.best_ema_checkpoint.string() << '\n';
    return 0;
}

int cmd_cv(const TrainOptions& o, std::ostream& out)
{
    o.train.validate();
    const auto subjects = load_subjects(require_cases(o.data), true);
    check_fits(subjects, o.train.network.patch_size);
    std::vector<std::string> ids;
    for (const auto& s : subjects)
        ids.push_back(s.id());
    const auto folds = train::make_folds(ids, o.folds, o.train.seed);

    std::vector<metrics::CaseScores> all_rows;
    std::vector<std::array<double, 3>> fold_means;
    for (const auto& f : folds) {
        const std::string name = "fold-" + std::to_string(f.fold_id);
        const auto va = select(subjects, f.valid_ids);
        const auto r = train::train_fold(o.train, select(subjects, f.train_ids), va, fs::path(o.out) / name,
                                         epoch_printer(out, name + "  "));
        const auto net = ckpt::load_model(r.best_val_checkpoint);
        std::array<double, 3> sum{0, 0, 0};
        for (const auto& s : va) {
            const auto probs = infer::sliding_window_infer(*net, s.input(), s.region);
            const auto labels = infer::decode_labels(probs, static_cast<float>(o.threshold));
            const auto scores = metrics::score_labels(labels, *s.normalized.labels, s.normalized.spacing);
            for (std::size_t k = 0; k < 3; ++k)
                sum[k] += scores[k].dsc;
            all_rows.push_back({s.id(), scores});
        }
        for (double& v : sum)
            v /= static_cast<double>(va.size());
        fold_means.push_back(sum);
    }
    metrics::write_scores_csv(fs::path(o.out) / "cv_scores.csv", all_rows);

    std::array<double, 3> all{0, 0, 0};
    for (const auto& r : all_rows)
        for (std::size_t k = 0; k < 3; ++k)
            all[k] += r.scores[k].dsc / static_cast<double>(all_rows.size());

    std::ofstream csv(fs::path(o.out) / "cv_summary.csv");
    csv << "fold,WT,TC,ET\n" << std::fixed << std::setprecision(4);
    out << "\nDSC      WT      TC      ET\n" << std::fixed << std::setprecision(4);
    auto row = [&](const std::string& name, const std::array<double, 3>& v) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%-7s %.4f  %.4f  %.4f\n", name.c_str(), v[0], v[1], v[2]);
        out << buf;
        csv << name << ',' << v[0] << ',' << v[1] << ',' << v[2] << '\n';
    };
    for (std::size_t i = 0; i < fold_means.size(); ++i)
        row("fold-" + std::to_string(i), fold_means[i]);
    row("ALL", all);
    out << std::defaultfloat;
    return 0;
}

int cmd_infer(const InferOptions& o, std::ostream& out)
{
    if (o.checkpoints.empty())
        throw ValidationError("infer needs at least one checkpoint (--checkpoint or --ensemble)");
    std::vector<std::unique_ptr<nn::SegmentationNetwork<float>>> owned;
    std::vector<const nn::SegmentationNetwork<float>*> models;
    for (const auto& p : o.checkpoints) {
        owned.push_back(ckpt::load_model(p));
        models.push_back(owned.back().get());
        if (models.back()->config().patch_size != models.front()->config().patch_size)
            throw ValidationError("ensemble members use different patch sizes");
    }
    const auto dirs = require_cases(o.data);
    fs::create_directories(o.out);
    for (const auto& d : dirs) {
        const auto s = infer::prepare(data::load_case(d));
        check_fits({s}, models.front()->config().patch_size);
        const auto probs = infer::ensemble_infer(models, s.input(), s.region);
        const auto labels = infer::decode_labels(probs, static_cast<float>(o.threshold));
        const fs::path dst = fs::path(o.out) / (s.id() + ".nii.gz");
        io::write_nifti(dst, labels, s.normalized.spacing, io::NiftiType::uint8);
        out << s.id() << " -> " << dst.string() << '\n';
    }
    out << "predicted " << dirs.size() << " cases with " << models.size() << " model(s)\n";
    return 0;
}

int cmd_evaluate(const EvalOptions& o, std::ostream& out)
{
    metrics::EmptyMaskPolicy policy;
    policy.dice_both_empty = o.empty_dice;
    if (o.empty_hd95 >= 0.0)
        policy.hd95_if_empty = o.empty_hd95;
    std::vector<metrics::CaseScores> rows;
    for (const auto& d : require_cases(o.data)) {
        const data::Case truth = data::load_case(d);
        if (!truth.labels)
            throw ValidationError("case " + truth.id + " has no segmentation to evaluate against");
        fs::path pred_path = fs::path(o.pred) / (truth.id + ".nii.gz");
        if (!fs::exists(pred_path))
            pred_path = fs::path(o.pred) / (truth.id + ".nii");
        const auto pred = io::read_nifti(pred_path);
        if (pred.data.shape() != truth.labels->shape())
            throw ShapeError("prediction for " + truth.id + " has shape " + pred.data.shape().str() +
                             ", segmentation has " + truth.labels->shape().str());
        rows.push_back({truth.id, metrics::score_labels(pred.data, *truth.labels, truth.spacing, policy)});
    }
    metrics::write_scores_csv(o.out, rows);
    const auto summary = metrics::summarize(rows);
    out << "mean DSC";
    for (std::size_t r = 0; r < 3; ++r) {
        const auto& v = summary.mean[r][0];
        out << "  " << metrics::region_names[r] << ' ' << std::fixed << std::setprecision(4) << (v ? *v : NAN);
    }
    out << std::defaultfloat << "\nwrote " << o.out << '\n';
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    SynthOptions so;
    TrainOptions to, co;
    InferOptions io;
    EvalOptions eo;
    CLI::App app("Scale-attention encoder-decoder segmentation of brain tumour sub-regions", "sanet");
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from an INI/TOML file; flags override it");
    bool dump = false;
    app.add_flag("--dump-config", dump, "Print the effective configuration and exit")->configurable(false);

    auto* synth = app.add_subcommand("synth", "Write a synthetic phantom dataset");
    synth->add_option("--out", so.out, "Output directory")->required();
    synth->add_option("--cases", so.cases, "Number of cases")->check(CLI::Range(1, 100000));
    synth->add_option("--size", so.size, "Cube side in voxels")->check(CLI::Range(16, 1024));
    synth->add_option("--seed", so.seed, "Seed of the first case; case i uses seed + i");

    auto* trn = app.add_subcommand("train", "Train one model");
    add_train_options(trn, to);
    trn->add_option("--fold", to.fold, "Fold whose validation split is held out");
    trn->add_flag("--all-data", to.all_data, "Train on every case and validate on the same cases");

    auto* cv = app.add_subcommand("cv", "k-fold cross-validation with a per-fold DSC table");
    add_train_options(cv, co);

    auto* inf = app.add_subcommand("infer", "Predict label maps with one model or an ensemble");
    inf->add_option("--data", io.data, "Dataset directory")->required();
    inf->add_option("--out", io.out, "Directory for <id>.nii.gz label maps")->required();
    inf->option_defaults()->always_capture_default(false);  // an empty list has no useful default
    auto* single = inf->add_option("--checkpoint", io.checkpoints, "Model checkpoint");
    inf->add_option("--ensemble", io.checkpoints, "Checkpoints whose probabilities are averaged")
        ->excludes(single)
        ->expected(1, -1);
    inf->option_defaults()->always_capture_default(true);
    inf->add_option("--threshold", io.threshold, "Probability threshold")->check(CLI::Range(0.0, 1.0));

    auto* ev = app.add_subcommand("evaluate", "Score predicted label maps against segmentations");
    ev->add_option("--pred", eo.pred, "Directory of <id>.nii.gz predictions")->required();
    ev->add_option("--data", eo.data, "Dataset directory with segmentations")->required();
    ev->add_option("--out", eo.out, "Metrics CSV path")->required();
    ev->add_option("--empty-dice", eo.empty_dice, "DSC when both masks are empty");
    ev->add_option("--empty-hd95", eo.empty_hd95, "HD95 when a mask is empty (negative: undefined)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }
    if (dump) {
        // unset strings and lists are left out: an empty value would read back as a one-element list
        std::istringstream dumped(app.config_to_str(true, false));
        for (std::string line; std::getline(dumped, line);)
            if (line.size() < 3 || line.compare(line.size() - 3, 3, "=\"\"") != 0)
                out << line << '\n';
        return 0;
    }

    try {
        if (synth->parsed())
            return cmd_synth(so, out);
        if (trn->parsed())
            return cmd_train(to, out);
        if (cv->parsed())
            return cmd_cv(co, out);
        if (inf->parsed())
            return cmd_infer(io, out);
        return cmd_evaluate(eo, out);
    } catch (const ConfigError& e) {
        err << "invalid configuration: " << e.what() << '\n';
        return 1;
    } catch (const ValidationError& e) {
        err << "invalid input: " << e.what() << '\n';
        return 1;
    } catch (const ShapeError& e) {
        err << "invalid input: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace sanet::cli
