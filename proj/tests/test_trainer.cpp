#include <doctest.h>

#include <cmath>
#include <sstream>

#include "support.hpp"
#include "ucmt/errors.hpp"
#include "ucmt/trainer.hpp"

using namespace ucmt;
using namespace ucmt::trainer;

namespace {

TrainConfig tiny(Method m) {
    TrainConfig cfg;
    cfg.method = m;
    cfg.generator.height = 16;
    cfg.generator.width = 16;
    cfg.generator.min_axis = 2.0;
    cfg.generator.max_axis = 5.0;
    cfg.samples = 20;
    cfg.validation_samples = 4;
    cfg.label_ratio = 0.2;
    cfg.batch_labeled = 2;
    cfg.batch_unlabeled = 2;
    cfg.epochs = 1;
    cfg.hidden_channels = {4};
    cfg.disagreement_batch = 2;
    return cfg;
}

struct Batches {
    TrainingData data;
    data::LabeledBatch labeled;
    data::UnlabeledBatch unlabeled;
};

Batches batches(const TrainConfig& cfg) {
    Batches b{make_training_data(cfg), {}, {}};
    b.labeled = data::gather_labeled(b.data.split.labeled, {0, 1});
    b.unlabeled = data::gather_unlabeled(b.data.split.unlabeled, {0, 1});
    return b;
}

double max_abs_diff(const NetParams& a, const NetParams& b) {
    double m = 0;
    for (std::size_t t = 0; t < a.tensors.size(); ++t)
        for (std::size_t i = 0; i < a.tensors[t].size(); ++i) m = std::max(m, std::abs(a.tensors[t][i] - b.tensors[t][i]));
    return m;
}

Tensor probs(const NetParams& p, const Tensor& x) { return gridnet::softmax_channels(gridnet::forward(p, x)); }

const losses::RampConfig kRamp{1.0, 10};

}  // namespace

TEST_CASE("init_triad") {
    TrainConfig cfg = tiny(Method::ucmt);
    const TriadState s = init_triad(cfg);
    CHECK(s.t == 0);
    CHECK(max_abs_diff(s.student1, s.student2) > 0.0);
    // Hand recomputation on the first layer's weights.
    const Tensor& w1 = s.student1.weight(0);
    const Tensor& w2 = s.student2.weight(0);
    for (std::size_t i = 0; i < w1.size(); ++i)
        CHECK(s.teacher.weight(0)[i] == doctest::Approx(0.99 * w1[i] + 0.01 * w2[i]).epsilon(1e-15));

    cfg.seed_init2 = cfg.seed_init1;
    const TriadState same = init_triad(cfg);
    CHECK(same.student1 == same.student2);
    CHECK(max_abs_diff(same.teacher, same.student1) < 1e-15);

    const TriadState mt = init_triad(tiny(Method::mt));
    CHECK(mt.teacher == mt.student1);
}

TEST_CASE("ema examples") {
    const auto spec = gridnet::LayerSpec::uniform({1, 1}, 1);
    TriadState s;
    s.teacher = NetParams::zeros(spec);
    s.student1 = NetParams::zeros(spec);
    s.student2 = NetParams::zeros(spec);
    for (auto* p : {&s.student1, &s.student2})
        for (auto& t : p->tensors) t.fill(1.0);
    ema_update(s, 0.99, 0.99);
    for (const auto& t : s.teacher.tensors)
        for (double v : t.values()) CHECK(v == doctest::Approx(0.01).epsilon(1e-14));

    const NetParams before = s.teacher;
    ema_update(s, 1.0, 0.5);
    CHECK(s.teacher == before);
}

TEST_CASE("ema closed form with constant students") {
    TriadState s = init_triad(tiny(Method::ucmt));
    s.teacher = gridnet::init_params(s.teacher.spec, 77);
    const NetParams t0 = s.teacher;
    const double a = 0.99, b = 0.99;
    const int n = 100;
    for (int i = 0; i < n; ++i) ema_update(s, a, b);
    const double an = std::pow(a, n);
    double worst = 0;
    for (std::size_t t = 0; t < t0.tensors.size(); ++t)
        for (std::size_t i = 0; i < t0.tensors[t].size(); ++i) {
            const double target = b * s.student1.tensors[t][i] + (1 - b) * s.student2.tensors[t][i];
            worst = std::max(worst, std::abs(s.teacher.tensors[t][i] - (an * t0.tensors[t][i] + (1 - an) * target)));
        }
    CHECK(worst < 1e-10);
    CHECK(s.ema_updates == 100);
}

TEST_CASE("baseline optimizes only the supervised loss") {
    const TrainConfig cfg = tiny(Method::baseline);
    const Batches b = batches(cfg);
    TriadState s = init_triad(cfg);
    const Phase1Output out = step_phase1(s, b.labeled, b.unlabeled, cfg, kRamp);
    CHECK(out.report.l_total == out.report.l_s);
    CHECK(out.report.l_cps == 0.0);
    CHECK(out.report.l_mts == 0.0);
    CHECK(s.ema_updates == 1);
}

TEST_CASE("zero learning rate freezes the students") {
    for (Method m : {Method::baseline, Method::ucmt}) {
        TrainConfig cfg = tiny(m);
        cfg.lr = 0.0;
        const Batches b = batches(cfg);
        TriadState s = init_triad(cfg);
        const TriadState start = s;
        const Phase1Output out = step_phase1(s, b.labeled, b.unlabeled, cfg, kRamp);
        CHECK(out.report.l_s > 0.0);
        CHECK(s.student1 == start.student1);
        CHECK(s.student2 == start.student2);
    }
}

TEST_CASE("loss report recomposes") {
    const TrainConfig cfg = tiny(Method::ucmt);
    const Batches b = batches(cfg);
    TriadState s = init_triad(cfg);
    for (int i = 0; i < 4; ++i) {
        const Phase1Output out = step_phase1(s, b.labeled, b.unlabeled, cfg, kRamp);
        const auto& r = out.report;
        CHECK(std::abs(r.l_total - r.l_s - r.lambda * (r.l_cps + r.l_mts)) <= 1e-12);
        CHECK(r.lambda == losses::ramp_up(s.t, kRamp));
        CHECK(r.l_cps > 0.0);
        CHECK(r.l_mts > 0.0);
        ++s.t;
    }
}

TEST_CASE("teacher follows the ema recurrence after each step") {
    for (Method m : {Method::ucmt, Method::cmt_v1, Method::mt, Method::cps}) {
        const TrainConfig cfg = tiny(m);
        const Batches b = batches(cfg);
        TriadState s = init_triad(cfg);
        for (int i = 0; i < 3; ++i) {
            const NetParams prev = s.teacher;
            step_phase1(s, b.labeled, b.unlabeled, cfg, kRamp);
            const bool two = method_flags(m).two_students();
            NetParams expect = prev;
            for (std::size_t t = 0; t < prev.tensors.size(); ++t)
                for (std::size_t j = 0; j < prev.tensors[t].size(); ++j) {
                    const double target = two ? cfg.beta * s.student1.tensors[t][j] +
                                                    (1 - cfg.beta) * s.student2.tensors[t][j]
                                              : s.student1.tensors[t][j];
                    expect.tensors[t][j] = cfg.alpha * prev.tensors[t][j] + (1 - cfg.alpha) * target;
                }
            CHECK(max_abs_diff(s.teacher, expect) < 1e-12);
        }
    }
}

TEST_CASE("alpha of one freezes the teacher") {
    TrainConfig cfg = tiny(Method::ucmt);
    cfg.alpha = 1.0;
    cfg.epochs = 2;
    const TrainResult r = run_training(cfg, make_training_data(cfg));
    CHECK(r.state.teacher == init_triad(cfg).teacher);
    CHECK(r.state.student1 != init_triad(cfg).student1);
}

TEST_CASE("unlabeled items do not reach the supervised loss") {
    const TrainConfig cfg = tiny(Method::ucmt);
    const Batches b = batches(cfg);
    data::UnlabeledBatch other = b.unlabeled;
    other.images = testing::random_tensor(other.images.shape(), 99, 0.0, 1.0);
    TriadState s1 = init_triad(cfg), s2 = init_triad(cfg);
    const auto r1 = step_phase1(s1, b.labeled, b.unlabeled, cfg, kRamp).report;
    const auto r2 = step_phase1(s2, b.labeled, other, cfg, kRamp).report;
    CHECK(r1.l_s == r2.l_s);
    CHECK(r1.l_mts != r2.l_mts);
}

TEST_CASE("update counts per outer iteration") {
    struct Row {
        Method m;
        std::int64_t opt1, opt2, ema;
    };
    for (const Row& row : {Row{Method::ucmt, 2, 2, 2}, Row{Method::cmt_v3, 1, 1, 1}, Row{Method::cmt_v1, 1, 1, 1},
                           Row{Method::cps, 1, 1, 1}, Row{Method::mt, 1, 0, 1}, Row{Method::baseline, 1, 0, 1}}) {
        CAPTURE(to_string(row.m));
        const TrainConfig cfg = tiny(row.m);
        const Batches b = batches(cfg);
        TriadState s = init_triad(cfg);
        run_iteration(s, b.labeled, b.unlabeled, cfg, kRamp);
        CHECK(s.t == 1);
        CHECK(static_cast<std::int64_t>(s.opt1.step) == row.opt1);
        CHECK(static_cast<std::int64_t>(s.opt2.step) == row.opt2);
        CHECK(static_cast<std::int64_t>(s.ema_updates) == row.ema);
    }
}

TEST_CASE("phase two replays against an independent recomputation") {
    const TrainConfig cfg = tiny(Method::ucmt);
    const Batches b = batches(cfg);
    TriadState s = init_triad(cfg);
    const Phase1Output p1 = step_phase1(s, b.labeled, b.unlabeled, cfg, kRamp);
    const MixedInputs mixed = mix_inputs(p1, b.labeled, b.unlabeled, cfg, s.t);

    // Round-trip the intermediates through their serialized form first.
    const auto dir = testing::scratch_dir("phase2_replay");
    gridnet::save_params(s.student1, dir / "s1.bin");
    gridnet::save_params(s.student2, dir / "s2.bin");
    const NetParams s1 = gridnet::load_params(dir / "s1.bin"), s2 = gridnet::load_params(dir / "s2.bin");

    const Tensor pl1 = probs(s1, mixed.labeled.images), pl2 = probs(s2, mixed.labeled.images);
    const Tensor pu1 = probs(s1, mixed.unlabeled.images), pu2 = probs(s2, mixed.unlabeled.images);
    const double l_s = losses::supervised_loss(pl1, pl2, one_hot(mixed.labeled.labels, 2)).value;
    const double l_cps = losses::cps_loss(pu1, pu2).value;
    const double l_mts = losses::mts_loss(pu1, pu2, mixed.unlabeled.labels).value;

    const auto rep = step_phase2(s, mixed.labeled.images, mixed.labeled.labels, mixed.unlabeled.images,
                                 mixed.unlabeled.labels, cfg, kRamp);
    CHECK(std::abs(rep.l_s - l_s) < 1e-12);
    CHECK(std::abs(rep.l_cps - l_cps) < 1e-12);
    CHECK(std::abs(rep.l_mts - l_mts) < 1e-12);
    CHECK(rep.lambda == losses::ramp_up(0, kRamp));
}

TEST_CASE("mixed pseudo labels come from the pre-update teacher") {
    const TrainConfig cfg = tiny(Method::ucmt);
    const Batches b = batches(cfg);
    TriadState s = init_triad(cfg);
    const LabelMap expect = losses::harden(probs(s.teacher, b.unlabeled.images));
    const Phase1Output p1 = step_phase1(s, b.labeled, b.unlabeled, cfg, kRamp);
    CHECK(p1.teacher_pseudo == expect);
    CHECK(p1.u1_unlabeled.source_student == 1);
    CHECK(p1.u2_unlabeled.source_student == 2);
    CHECK(p1.u1_labeled.values.shape() == Shape{2, 16, 16});
}

TEST_CASE("degenerate uncertainty leaves phase-2 inputs unchanged") {
    const TrainConfig cfg = tiny(Method::ucmt);
    const Batches b = batches(cfg);
    Phase1Output p1;
    p1.u1_labeled = {Tensor({2, 16, 16}), 1};
    p1.u2_labeled = {Tensor({2, 16, 16}), 2};
    p1.u1_unlabeled = {Tensor({2, 16, 16}), 1};
    p1.u2_unlabeled = {Tensor({2, 16, 16}), 2};
    p1.teacher_pseudo = testing::random_labels(2, 16, 16, 2, 5);
    const MixedInputs m = mix_inputs(p1, b.labeled, b.unlabeled, cfg, 0);
    CHECK(m.labeled.images == b.labeled.images);
    CHECK(m.labeled.labels == b.labeled.labels);
    CHECK(m.unlabeled.images == b.unlabeled.images);
    CHECK(m.unlabeled.labels == p1.teacher_pseudo);
}

TEST_CASE("run_training with zero epochs returns the initial state") {
    TrainConfig cfg = tiny(Method::ucmt);
    cfg.epochs = 0;
    const TrainResult r = run_training(cfg, make_training_data(cfg));
    CHECK(r.history.empty());
    CHECK(r.state.teacher == init_triad(cfg).teacher);
    CHECK(r.state.t == 0);
}

TEST_CASE("run_training is deterministic and records every iteration") {
    TrainConfig cfg = tiny(Method::ucmt);
    cfg.epochs = 2;
    const TrainingData d = make_training_data(cfg);
    HistoryChannel channel;
    const TrainResult a = run_training(cfg, d, &channel);
    const TrainResult b = run_training(cfg, d);
    CHECK_FALSE(a.diverged);
    CHECK(a.history.size() == 2 * iterations_per_epoch(cfg, d));
    CHECK(channel.drain().size() == a.history.size());
    CHECK(channel.pending() == 0);
    std::ostringstream ha, hb;
    write_history_csv(ha, a.history);
    write_history_csv(hb, b.history);
    CHECK(ha.str() == hb.str());
    CHECK(a.state.teacher == b.state.teacher);

    const losses::RampConfig ramp{cfg.lambda_max, static_cast<std::int64_t>(a.history.size())};
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        const auto& h = a.history[i];
        CHECK(h.loss.t == static_cast<std::int64_t>(i));
        CHECK(h.loss.lambda == losses::ramp_up(h.loss.t, ramp));
        CHECK(h.loss.l_total >= 0.0);
        CHECK(std::isfinite(h.disagreement));
        CHECK(h.mean_entropy >= 0.0);
        CHECK(h.val_dsc >= 0.0);
        CHECK(h.val_dsc <= 1.0);
    }
    CHECK(a.history.back().val_dsc == doctest::Approx(teacher_dsc(a.state.teacher, d.validation, 2)).epsilon(1e-15));
}

TEST_CASE("semi-supervised methods need unlabeled data") {
    TrainConfig cfg = tiny(Method::cps);
    cfg.label_ratio = 1.0;
    CHECK_THROWS_AS(run_training(cfg, make_training_data(cfg)), ConfigError);
    cfg.method = Method::baseline;
    CHECK_NOTHROW(run_training(cfg, make_training_data(cfg)));
}

TEST_CASE("history csv round trip") {
    TrainConfig cfg = tiny(Method::cmt_v3);
    const TrainResult r = run_training(cfg, make_training_data(cfg));
    std::ostringstream os;
    write_history_csv(os, r.history);
    CHECK(os.str().rfind("t,lambda,l_total,l_s,l_cps,l_mts,disagreement,mean_entropy,val_dsc\n", 0) == 0);
    std::istringstream in(os.str());
    const auto back = read_history_csv(in);
    std::ostringstream again;
    write_history_csv(again, back);
    CHECK(again.str() == os.str());
}

TEST_CASE("divergence returns the partial history") {
    TrainConfig cfg = tiny(Method::ucmt);
    cfg.lr = 1e300;
    cfg.epochs = 3;
    const TrainResult r = run_training(cfg, make_training_data(cfg));
    CHECK(r.diverged);
    CHECK_FALSE(r.error.empty());
    CHECK(r.history.size() < 3 * iterations_per_epoch(cfg, make_training_data(cfg)));
}

TEST_CASE("triad checkpoints round trip") {
    TrainConfig cfg = tiny(Method::ucmt);
    const TrainResult r = run_training(cfg, make_training_data(cfg));
    const auto dir = testing::scratch_dir("triad_ckpt");
    save_triad(r.state, cfg, dir);
    const TriadState back = load_triad(dir);
    CHECK(back.teacher == r.state.teacher);
    CHECK(back.student1 == r.state.student1);
    CHECK(back.student2 == r.state.student2);
    CHECK(back.t == r.state.t);
    CHECK_THROWS_AS(load_triad(dir / "missing"), IoError);
}

TEST_CASE("evaluate reports one record per sample") {
    TrainConfig cfg = tiny(Method::baseline);
    const TrainingData d = make_training_data(cfg);
    const auto rows = evaluate(init_triad(cfg).teacher, d.validation, 2);
    CHECK(rows.size() == d.validation.size());
    for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].id == d.validation[i].id);
    double mean = 0;
    for (const auto& x : rows) mean += x.dsc / static_cast<double>(rows.size());
    CHECK(teacher_dsc(init_triad(cfg).teacher, d.validation, 2) == doctest::Approx(mean).epsilon(1e-14));
}
