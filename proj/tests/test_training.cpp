#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <map>
#include <set>

#include "sanet/checkpoint.hpp"
#include "sanet/data.hpp"
#include "sanet/training.hpp"
#include "test_util.hpp"

using namespace sanet;
using namespace sanet::train;
using sanet::test::TempDir;

namespace {

std::vector<std::string> lines_of(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string line; std::getline(in, line);)
        out.push_back(line);
    return out;
}

std::vector<infer::Subject> phantoms(std::uint64_t first, int count, std::int64_t size)
{
    std::vector<infer::Subject> out;
    for (int i = 0; i < count; ++i)
        out.push_back(infer::prepare(data::synth_phantom(first + static_cast<std::uint64_t>(i), size)));
    return out;
}

TrainConfig desk_config()
{
    TrainConfig cfg;
    cfg.network.base_width = 4;
    cfg.network.patch_size = 16;
    cfg.max_epochs = 3;
    cfg.seed = 12;
    return cfg;
}

}  // namespace

TEST_CASE("schedule holds the rate during the freeze")
{
    TrainState s = initial_state();
    s.epoch = 100;
    s.best_val_loss = s.best_ema_val_loss = 0.1;
    s.ema_val_loss = 0.5;
    s.epochs_since_improvement = 39;
    s = lr_schedule_step(s, 0.5);
    CHECK(s.epochs_since_improvement == 40);
    CHECK(s.lr == 0.003);
    CHECK_FALSE(s.stop);
}

TEST_CASE("schedule decays by 0.3 after 30 stale epochs")
{
    TrainState s = initial_state();
    s.epoch = 200;
    s.best_val_loss = s.best_ema_val_loss = 0.1;
    s.ema_val_loss = 0.5;
    s.epochs_since_improvement = 29;
    s = lr_schedule_step(s, 0.5);
    CHECK(s.lr == doctest::Approx(0.0009).epsilon(1e-15));
    CHECK(s.epochs_since_improvement == 0);
    CHECK(s.decays == 1);
}

TEST_CASE("an improvement in either signal resets the counters")
{
    TrainState s = initial_state();
    s.epoch = 300;
    s.best_val_loss = 0.2;
    s.best_ema_val_loss = 0.1;
    s.ema_val_loss = 0.3;
    s.epochs_since_improvement = 17;
    s.decays_since_improvement = 2;
    s = lr_schedule_step(s, 0.15);  // raw loss improves, EMA 0.285 does not
    CHECK(s.improved_val);
    CHECK_FALSE(s.improved_ema);
    CHECK(s.epochs_since_improvement == 0);
    CHECK(s.decays_since_improvement == 0);

    TrainState e = initial_state();
    e.epoch = 300;
    e.best_val_loss = 0.05;
    e.best_ema_val_loss = 0.56;
    e.ema_val_loss = 0.6;
    e.epochs_since_improvement = 17;
    e = lr_schedule_step(e, 0.1);  // EMA 0.55 improves, raw does not
    CHECK_FALSE(e.improved_val);
    CHECK(e.improved_ema);
    CHECK(e.epochs_since_improvement == 0);
}

TEST_CASE("golden trace: freeze, three stalled decays, stop")
{
    // improving every epoch up to 100, flat afterwards
    std::vector<double> lr;
    int stop_epoch = 0;
    TrainState s = initial_state();
    for (int epoch = 1; epoch <= 300 && !s.stop; ++epoch) {
        s.epoch = epoch;
        lr.push_back(s.lr);  // rate used during this epoch
        s = lr_schedule_step(s, epoch <= 100 ? 1.0 / epoch : 1.0);
        if (s.stop)
            stop_epoch = epoch;
    }
    // rate used during epoch t: 0.003 * 0.3^m, m = decays completed after earlier epochs
    auto expected = [](int t) {
        const int m = (t > 151) + (t > 181) + (t > 211);
        double r = 0.003;
        for (int i = 0; i < m; ++i)
            r *= 0.3;
        return r;
    };
    CHECK(stop_epoch == 241);
    REQUIRE(lr.size() == 241);
    for (int t = 1; t <= 241; ++t)
        CHECK(lr[static_cast<std::size_t>(t - 1)] == expected(t));
    CHECK(s.decays == 3);
}

TEST_CASE("lr is a non-increasing step function for any loss stream")
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        TrainState s = initial_state();
        int decays = 0;
        for (int epoch = 1; epoch <= 300 && !s.stop; ++epoch) {
            s.epoch = epoch;
            const double before = s.lr;
            s = lr_schedule_step(s, u(rng) + (trial % 2 ? 0.0 : 1.0 / epoch));
            CHECK(s.lr <= before);
            if (s.lr < before) {
                ++decays;
                CHECK(epoch > 150);
            }
            double expect = 0.003;
            for (int i = 0; i < decays; ++i)
                expect *= 0.3;
            CHECK(s.lr == expect);
        }
    }
}

TEST_CASE("EMA follows its recurrence on a constant stream")
{
    TrainState s = initial_state();
    s.epoch = 1;
    s = lr_schedule_step(s, 2.0);
    CHECK(s.ema_val_loss == 2.0);  // first validation seeds the EMA
    const double L = 0.5;
    for (int epoch = 2; epoch < 40; ++epoch) {
        const double prev = s.ema_val_loss;
        s.epoch = epoch;
        s = lr_schedule_step(s, L);
        CHECK(s.ema_val_loss - L == doctest::Approx(0.9 * (prev - L)).epsilon(1e-12));
    }
}

TEST_CASE("schedule rejects bad inputs")
{
    TrainState s = initial_state();
    s.epoch = 1;
    CHECK_THROWS_AS(static_cast<void>(lr_schedule_step(s, std::nan(""))), DivergenceError);
    CHECK_THROWS_AS(static_cast<void>(lr_schedule_step(s, INFINITY)), DivergenceError);
    s.epoch = 0;
    CHECK_THROWS_AS(static_cast<void>(lr_schedule_step(s, 1.0)), ValidationError);
}

TEST_CASE("fold sizes")
{
    std::vector<std::string> ids;
    for (int i = 0; i < 369; ++i)
        ids.push_back("case" + std::to_string(i));
    const auto folds = make_folds(ids, 5, 1);
    std::vector<std::size_t> sizes;
    for (const auto& f : folds)
        sizes.push_back(f.valid_ids.size());
    CHECK(sizes == std::vector<std::size_t>{74, 74, 74, 74, 73});

    ids.resize(10);
    for (const auto& f : make_folds(ids, 5, 9))
        CHECK(f.valid_ids.size() == 2);

    const auto a = make_folds(ids, 5, 3), b = make_folds(ids, 5, 3), c = make_folds(ids, 5, 4);
    bool same = true, differs = false;
    for (std::size_t f = 0; f < 5; ++f) {
        same = same && a[f].valid_ids == b[f].valid_ids && a[f].train_ids == b[f].train_ids;
        differs = differs || a[f].valid_ids != c[f].valid_ids;
    }
    CHECK(same);
    CHECK(differs);

    CHECK_THROWS_AS(static_cast<void>(make_folds(ids, 11, 0)), ValidationError);
    CHECK_THROWS_AS(static_cast<void>(make_folds(ids, 1, 0)), ValidationError);
    CHECK_THROWS_AS(static_cast<void>(make_folds({"a", "a", "b"}, 2, 0)), ValidationError);
}

TEST_CASE("folds partition the cases for random sizes")
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + static_cast<int>(rng() % 8);
        const int n = k + static_cast<int>(rng() % 60);
        std::vector<std::string> ids;
        for (int i = 0; i < n; ++i)
            ids.push_back(std::to_string(i));
        const auto folds = make_folds(ids, k, rng());
        REQUIRE(folds.size() == static_cast<std::size_t>(k));
        std::multiset<std::string> all_valid;
        std::size_t lo = SIZE_MAX, hi = 0;
        for (const auto& f : folds) {
            CHECK(f.valid_ids.size() + f.train_ids.size() == static_cast<std::size_t>(n));
            std::set<std::string> train(f.train_ids.begin(), f.train_ids.end());
            for (const auto& v : f.valid_ids)
                CHECK(train.count(v) == 0);
            all_valid.insert(f.valid_ids.begin(), f.valid_ids.end());
            lo = std::min(lo, f.valid_ids.size());
            hi = std::max(hi, f.valid_ids.size());
        }
        CHECK(all_valid == std::multiset<std::string>(ids.begin(), ids.end()));
        CHECK(hi - lo <= 1);
    }
}

TEST_CASE("Adam matches a double-precision reference")
{
    auto w = nn::make_parameter<float>({1, 1, 1, 5});
    const std::vector<double> start{0.5, -1.0, 2.0, 0.0, 3.0};
    for (std::size_t i = 0; i < 5; ++i)
        w.value()[i] = static_cast<float>(start[i]);
    Adam adam(nn::ParameterList<float>{{"w", w}});

    std::vector<double> ref = start, m(5, 0.0), v(5, 0.0);
    const double lr = 0.003, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 25; ++t) {
        // gradient of sum((i + 1) * w_i^2), evaluated at the current float weights
        auto& g = w.node()->grad_buffer();
        for (std::size_t i = 0; i < 5; ++i) {
            g[i] = static_cast<float>(2.0 * static_cast<double>(i + 1) * w.value()[i]);
            const double gd = 2.0 * static_cast<double>(i + 1) * ref[i];
            m[i] = b1 * m[i] + (1 - b1) * gd;
            v[i] = b2 * v[i] + (1 - b2) * gd * gd;
            const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
            ref[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
        adam.step(lr);
        if (t == 1)  // first step moves every nonzero-gradient weight by lr against its gradient sign
            CHECK(w.value()[0] == doctest::Approx(0.5 - lr).epsilon(1e-6));
    }
    CHECK(adam.steps() == 25);
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(w.value()[i] == doctest::Approx(ref[i]).epsilon(1e-5));
}

TEST_CASE("config validation names the bad field")
{
    CHECK_NOTHROW(desk_config().validate());
    auto bad = desk_config();
    bad.schedule.decay_factor = 1.5;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("decay_factor"), ConfigError);
    bad = desk_config();
    bad.schedule.ema_alpha = 1.0;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("ema_alpha"), ConfigError);
    bad = desk_config();
    bad.architecture = "vnet";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = desk_config();
    bad.network.patch_size = 20;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("trainer steps reduce the loss on a fixed patch")
{
    nn::NetworkConfig cfg;
    cfg.base_width = 4;
    cfg.patch_size = 16;
    const nn::SANet<float> net(cfg, 3);
    Trainer trainer(net, {}, {});
    const auto s = infer::prepare(data::synth_phantom(2, 16));
    const double first = trainer.step(s.input(), *s.target, 0.003);
    double last = first;
    for (int i = 0; i < 15; ++i)
        last = trainer.step(s.input(), *s.target, 0.003);
    CHECK(last < first);
}

TEST_CASE("desk-scale fold run writes logs and replayable checkpoints")
{
    TempDir dir("train");
    const auto train_set = phantoms(100, 2, 20);
    const auto valid_set = phantoms(200, 1, 20);
    std::vector<EpochLog> seen;
    const auto result = train_fold(desk_config(), train_set, valid_set, dir.path(),
                                   [&](const EpochLog& log) { seen.push_back(log); });
    CHECK(result.epochs_run == 3);
    CHECK(seen.size() == 3);
    REQUIRE(std::filesystem::exists(result.best_val_checkpoint));
    REQUIRE(std::filesystem::exists(result.best_ema_checkpoint));

    const auto metrics = lines_of(result.metrics_csv);
    REQUIRE(metrics.size() == 4);
    CHECK(metrics[0] == "epoch,train_loss,val_loss,ema_val_loss,lr");
    CHECK(metrics[1].rfind("1,", 0) == 0);
    CHECK(lines_of(result.steps_csv).size() == 1 + 3 * 2);

    // both criteria improve on the first epoch, so both files exist even if later epochs never improve
    for (const auto& path : {result.best_val_checkpoint, result.best_ema_checkpoint}) {
        ckpt::CheckpointMeta meta;
        const auto net = ckpt::load_model(path, &meta);
        CHECK(meta.epoch >= 1);
        CHECK(meta.epoch <= 3);
        const double replay = validation_loss(*net, valid_set);
        CHECK(std::abs(replay - meta.val_loss) < 1e-5);
        CHECK(meta.val_loss == doctest::Approx(seen[static_cast<std::size_t>(meta.epoch - 1)].val_loss));
    }
    const auto best = ckpt::read_metadata(result.best_val_checkpoint);
    for (const auto& log : seen)
        CHECK(best.val_loss <= log.val_loss);
}

TEST_CASE("identical configs reproduce identical logs")
{
    TempDir a("train"), b("train");
    auto cfg = desk_config();
    cfg.max_epochs = 2;
    const auto train_set = phantoms(10, 2, 16);
    const auto valid_set = phantoms(20, 1, 16);
    static_cast<void>(train_fold(cfg, train_set, valid_set, a.path()));
    static_cast<void>(train_fold(cfg, train_set, valid_set, b.path()));
    CHECK(lines_of(a / "metrics.csv") == lines_of(b / "metrics.csv"));
    CHECK(lines_of(a / "steps.csv") == lines_of(b / "steps.csv"));
}

TEST_CASE("training stops at the epoch budget")
{
    TempDir dir("train");
    auto cfg = desk_config();
    cfg.max_epochs = 2;
    cfg.steps_per_epoch = 1;
    const auto result = train_fold(cfg, phantoms(1, 1, 16), phantoms(2, 1, 16), dir.path());
    CHECK(result.epochs_run == 2);
    CHECK_FALSE(result.state.stop);
    CHECK(lines_of(result.metrics_csv).size() == 3);
}

TEST_CASE("a non-finite loss aborts with a state dump")
{
    TempDir dir("train");
    auto cfg = desk_config();
    cfg.schedule.lr0 = 1e30;  // first update pushes weights to ~1e30, the next forward overflows
    cfg.steps_per_epoch = 4;
    CHECK_THROWS_AS(static_cast<void>(train_fold(cfg, phantoms(1, 1, 16), phantoms(2, 1, 16), dir.path())),
                    DivergenceError);
    CHECK(std::filesystem::exists(dir / "divergence.json"));
}

TEST_CASE("training inputs are validated")
{
    TempDir dir("train");
    CHECK_THROWS_AS(static_cast<void>(train_fold(desk_config(), {}, phantoms(2, 1, 16), dir.path())), ValidationError);
    auto unlabeled = phantoms(1, 1, 16);
    unlabeled[0].normalized.labels.reset();
    unlabeled[0].target.reset();
    CHECK_THROWS_AS(static_cast<void>(train_fold(desk_config(), unlabeled, phantoms(2, 1, 16), dir.path())),
                    ValidationError);
    CHECK_THROWS_AS(static_cast<void>(validation_loss(nn::SANet<float>(desk_config().network), unlabeled)),
                    ValidationError);
}
