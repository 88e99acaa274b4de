#include "ucmt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ucmt/errors.hpp"
#include "ucmt/rng.hpp"

namespace ucmt::trainer {

using namespace gridnet;
namespace {

constexpr std::uint64_t kCutmixStream = 0x6375746d6978ULL;

Tensor concat_batch(const Tensor& a, const Tensor& b) {
    if (b.empty()) return a;
    if (a.empty()) return b;
    Shape shape = a.shape();
    if (b.rank() != a.rank() || !std::equal(shape.begin() + 1, shape.end(), b.shape().begin() + 1)) {
        throw ShapeError("cannot concatenate " + shape_string(a.shape()) + " with " + shape_string(b.shape()));
    }
    shape[0] += b.dim(0);
    std::vector<double> values;
    values.reserve(a.size() + b.size());
    values.insert(values.end(), a.values().begin(), a.values().end());
    values.insert(values.end(), b.values().begin(), b.values().end());
    return Tensor(shape, std::move(values));
}

// Items [first, first + count) along axis 0.
Tensor slice_batch(const Tensor& t, std::size_t first, std::size_t count) {
    Shape shape = t.shape();
    shape[0] = count;
    const std::size_t per = count == 0 ? 0 : t.size() / t.dim(0);
    const auto begin = t.values().begin() + static_cast<std::ptrdiff_t>(first * per);
    return Tensor(shape, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(count * per)));
}

Tensor add_scaled(Tensor acc, const Tensor& g, double scale) {
    if (g.empty()) return acc;
    auto a = acc.values();
    const auto v = g.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * v[i];
    return acc;
}

uncertainty::UncertaintyMap fused_entropy(const Tensor& student_probs, const Tensor& teacher_probs, int student) {
    auto map = uncertainty::entropy_map(uncertainty::fused_from_probs(student_probs, teacher_probs));
    map.source_student = student;
    return map;
}

// One optimizer step for every trained student, then one EMA update of the
// teacher.
StudentGradients train_students(TriadState& state, const TrainConfig& cfg, const Tensor& images_l,
                                const LabelMap& labels_l, const Tensor& images_u, const LabelMap* teacher_target,
                                const losses::RampConfig& ramp) {
    StudentGradients pass = student_gradients(state, cfg, images_l, labels_l, images_u, teacher_target, ramp);
    const AdamWHyper hyper{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};
    adamw_update(state.student1, pass.grad1, state.opt1, hyper);
    if (method_flags(cfg.method).two_students()) adamw_update(state.student2, pass.grad2, state.opt2, hyper);
    ema_update(state, cfg.alpha, cfg.beta, method_flags(cfg.method).architecture);
    return pass;
}

LabelMap predict(const NetParams& params, const Tensor& images) {
    return losses::harden(softmax_channels(forward(params, images)));
}

std::string real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

TriadState init_triad(const TrainConfig& cfg, const LayerSpec& spec) {
    spec.validate();
    TriadState s;
    s.student1 = init_params(spec, cfg.seed_init1);
    s.student2 = init_params(spec, cfg.seed_init2);
    s.teacher = method_flags(cfg.method).two_students() ? combine_params(s.student1, s.student2, cfg.beta) : s.student1;
    s.teacher.init_seed = 0;
    s.opt1 = AdamWState::fresh(s.student1);
    s.opt2 = AdamWState::fresh(s.student2);
    s.t = 0;
    s.rng_seed = cfg.seed_data;
    return s;
}

TriadState init_triad(const TrainConfig& cfg) { return init_triad(cfg, cfg.layer_spec()); }

StudentGradients student_gradients(const TriadState& state, const TrainConfig& cfg, const Tensor& images_l,
                                   const LabelMap& labels_l, const Tensor& images_u, const LabelMap* teacher_target,
                                   const losses::RampConfig& ramp) {
    const MethodFlags flags = method_flags(cfg.method);
    const bool ssl = flags.enable_cps || flags.enable_mts;
    const bool two = flags.two_students();
    const std::size_t nl = images_l.dim(0);
    const std::size_t nu = ssl ? images_u.dim(0) : 0;
    const std::size_t classes = state.student1.spec.classes();

    const Tensor input = ssl ? concat_batch(images_l, images_u) : images_l;
    const ForwardTrace trace1 = forward_trace(state.student1, input);
    ForwardTrace trace2;
    StudentGradients pass;
    pass.probs1 = softmax_channels(trace1.logits);
    if (two) {
        trace2 = forward_trace(state.student2, input);
        pass.probs2 = softmax_channels(trace2.logits);
    }

    const Tensor p1l = slice_batch(pass.probs1, 0, nl);
    const Tensor p2l = two ? slice_batch(pass.probs2, 0, nl) : Tensor();
    const Tensor p1u = ssl ? slice_batch(pass.probs1, nl, nu) : Tensor();
    const Tensor p2u = ssl && two ? slice_batch(pass.probs2, nl, nu) : Tensor();

    const losses::PairLoss sup = losses::supervised_loss(p1l, p2l, one_hot(labels_l, classes), cfg.dice_eps);
    losses::PairLoss cps, mts;
    if (flags.enable_cps) cps = losses::cps_loss(p1u, p2u, cfg.dice_eps);
    if (flags.enable_mts) {
        if (teacher_target == nullptr) throw PreconditionError("teacher supervision needs a target");
        mts = losses::mts_loss(p1u, p2u, *teacher_target, cfg.dice_eps);
    }
    pass.report = losses::total_loss(sup.value, cps.value, mts.value, state.t, ramp, flags.enable_cps, flags.enable_mts);
    if (!std::isfinite(pass.report.l_total)) {
        throw DivergenceError("non-finite loss at t=" + std::to_string(state.t));
    }
    const double lambda = pass.report.lambda;

    const auto grads = [&](const NetParams& params, const ForwardTrace& trace, const Tensor& probs,
                           const Tensor& g_sup, const Tensor& g_cps, const Tensor& g_mts) {
        Tensor grad_probs = g_sup;
        if (ssl) {
            Tensor g_u(p1u.shape());
            g_u = add_scaled(std::move(g_u), g_cps, lambda);
            g_u = add_scaled(std::move(g_u), g_mts, lambda);
            grad_probs = concat_batch(g_sup, g_u);
        }
        return backward(params, trace, softmax_backward(probs, grad_probs));
    };
    pass.grad1 = grads(state.student1, trace1, pass.probs1, sup.grad1, cps.grad1, mts.grad1);
    if (two) pass.grad2 = grads(state.student2, trace2, pass.probs2, sup.grad2, cps.grad2, mts.grad2);
    return pass;
}

void ema_update(TriadState& state, double alpha, double beta) {
    ema_update(state, alpha, beta, Architecture::sts);
}

void ema_update(TriadState& state, double alpha, double beta, Architecture arch) {
    const bool two = arch == Architecture::ss || arch == Architecture::sts;
    const NetParams target = two ? combine_params(state.student1, state.student2, beta) : state.student1;
    blend_into(state.teacher, target, alpha);
    ++state.ema_updates;
}

Phase1Output step_phase1(TriadState& state, const data::LabeledBatch& labeled, const data::UnlabeledBatch& unlabeled,
                         const TrainConfig& cfg, const losses::RampConfig& ramp) {
    const MethodFlags flags = method_flags(cfg.method);
    const bool ssl = flags.enable_cps || flags.enable_mts;
    const bool two = flags.two_students();
    const bool with_labeled_maps = cfg.effective_mix() == Mix::umix;
    const std::size_t nl = labeled.images.dim(0);
    const std::size_t nu = unlabeled.images.dim(0);

    Phase1Output out;
    // Pre-update teacher view of the batch.
    const Tensor teacher_in = with_labeled_maps ? concat_batch(labeled.images, unlabeled.images) : unlabeled.images;
    const Tensor teacher_probs = softmax_channels(forward(state.teacher, teacher_in));
    const Tensor teacher_u = with_labeled_maps ? slice_batch(teacher_probs, nl, nu) : teacher_probs;
    out.teacher_pseudo = losses::harden(teacher_u);

    // Students that skip the unlabeled batch still report its entropy.
    Tensor s1_u_probe;
    if (!ssl) s1_u_probe = softmax_channels(forward(state.student1, unlabeled.images));

    const StudentGradients pass =
        train_students(state, cfg, labeled.images, labeled.labels, unlabeled.images, &out.teacher_pseudo, ramp);
    out.report = pass.report;

    const Tensor s1_u = ssl ? slice_batch(pass.probs1, nl, nu) : s1_u_probe;
    out.u1_unlabeled = fused_entropy(s1_u, teacher_u, 1);
    double entropy = metrics::mean_entropy(out.u1_unlabeled);
    if (two) {
        out.u2_unlabeled = fused_entropy(slice_batch(pass.probs2, nl, nu), teacher_u, 2);
        entropy = 0.5 * (entropy + metrics::mean_entropy(out.u2_unlabeled));
    }
    out.mean_entropy = entropy;
    if (with_labeled_maps) {
        const Tensor teacher_l = slice_batch(teacher_probs, 0, nl);
        out.u1_labeled = fused_entropy(slice_batch(pass.probs1, 0, nl), teacher_l, 1);
        out.u2_labeled = fused_entropy(slice_batch(pass.probs2, 0, nl), teacher_l, 2);
    }
    return out;
}

losses::LossReport step_phase2(TriadState& state, const Tensor& mixed_labeled_images, const LabelMap& mixed_labels,
                               const Tensor& mixed_unlabeled_images, const LabelMap& mixed_pseudo,
                               const TrainConfig& cfg, const losses::RampConfig& ramp) {
    const LabelMap* target = &mixed_pseudo;
    LabelMap fresh;
    if (cfg.fresh_phase2_target && method_flags(cfg.method).enable_mts) {
        fresh = predict(state.teacher, mixed_unlabeled_images);
        target = &fresh;
    }
    return train_students(state, cfg, mixed_labeled_images, mixed_labels, mixed_unlabeled_images, target, ramp)
        .report;
}

MixedInputs mix_inputs(const Phase1Output& p1, const data::LabeledBatch& labeled,
                       const data::UnlabeledBatch& unlabeled, const TrainConfig& cfg, std::int64_t t) {
    MixedInputs out;
    switch (cfg.effective_mix()) {
        case Mix::umix:
            out.labeled = mixer::umix(labeled.images, labeled.labels, p1.u1_labeled, p1.u2_labeled, cfg.k, cfg.r).mixed;
            out.unlabeled =
                mixer::umix(unlabeled.images, p1.teacher_pseudo, p1.u1_unlabeled, p1.u2_unlabeled, cfg.k, cfg.r).mixed;
            break;
        case Mix::cutmix: {
            const CounterRng rng = CounterRng(cfg.seed_data).substream(kCutmixStream).substream(static_cast<std::uint64_t>(t));
            out.labeled = mixer::cutmix_reversed(labeled.images, labeled.labels, rng.substream(0).next_u64());
            out.unlabeled = mixer::cutmix_reversed(unlabeled.images, p1.teacher_pseudo, rng.substream(1).next_u64());
            break;
        }
        case Mix::none:
            out.labeled = {labeled.images, labeled.labels};
            out.unlabeled = {unlabeled.images, p1.teacher_pseudo};
            break;
    }
    return out;
}

IterationResult run_iteration(TriadState& state, const data::LabeledBatch& labeled,
                              const data::UnlabeledBatch& unlabeled, const TrainConfig& cfg,
                              const losses::RampConfig& ramp) {
    const Phase1Output p1 = step_phase1(state, labeled, unlabeled, cfg, ramp);
    if (cfg.two_phase()) {
        const MixedInputs mixed = mix_inputs(p1, labeled, unlabeled, cfg, state.t);
        step_phase2(state, mixed.labeled.images, mixed.labeled.labels, mixed.unlabeled.images, mixed.unlabeled.labels,
                    cfg, ramp);
    }
    ++state.t;
    return {p1.report, p1.mean_entropy};
}

void HistoryChannel::push(const HistoryRecord& record) {
    std::lock_guard lock(mutex_);
    records_.push_back(record);
}

std::vector<HistoryRecord> HistoryChannel::drain() {
    std::lock_guard lock(mutex_);
    std::vector<HistoryRecord> out;
    out.swap(records_);
    return out;
}

std::size_t HistoryChannel::pending() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

std::vector<data::Sample> make_validation(const TrainConfig& cfg) {
    return data::quantized(
        data::generate_synthetic(cfg.validation_samples, cfg.generator, cfg.seed_data, kValidationFirstId));
}

TrainingData make_training_data(const TrainConfig& cfg) {
    TrainingData d;
    auto samples = data::quantized(data::generate_synthetic(cfg.samples, cfg.generator, cfg.seed_data));
    d.split = data::split(std::move(samples), cfg.label_ratio, cfg.seed_data);
    d.validation = make_validation(cfg);
    return d;
}

std::size_t iterations_per_epoch(const TrainConfig& cfg, const TrainingData& data) {
    const bool labeled_only = data.split.unlabeled.empty();
    return data::epoch_batches(data.split.labeled.size(), data.split.unlabeled.size(), cfg.batch_labeled,
                               cfg.batch_unlabeled, cfg.seed_data, 0, labeled_only)
        .size();
}

std::vector<metrics::MetricRecord> evaluate(const NetParams& params, const std::vector<data::Sample>& samples,
                                            std::size_t classes) {
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<metrics::MetricRecord> out;
    if (samples.empty()) return out;
    const data::LabeledBatch batch = data::gather_labeled(samples, idx);
    const LabelMap pred = predict(params, batch.images);
    for (std::size_t b = 0; b < samples.size(); ++b) {
        out.push_back(metrics::evaluate_sample(pred.item(b), batch.labels.item(b), pred.height, pred.width, classes,
                                               samples[b].id));
    }
    return out;
}

double teacher_dsc(const NetParams& params, const std::vector<data::Sample>& samples, std::size_t classes) {
    double sum = 0.0;
    const auto records = evaluate(params, samples, classes);
    for (const auto& r : records) sum += r.dsc;
    return records.empty() ? 0.0 : sum / static_cast<double>(records.size());
}

TrainResult run_training(const TrainConfig& cfg, const TrainingData& data, HistoryChannel* channel) {
    validate(cfg);
    const MethodFlags flags = method_flags(cfg.method);
    const bool labeled_only = data.split.unlabeled.empty();
    if (labeled_only && cfg.method != Method::baseline) {
        throw ConfigError("method " + std::string(to_string(cfg.method)) + " needs unlabeled samples");
    }
    TrainResult result;
    result.state = init_triad(cfg);
    if (cfg.epochs == 0) return result;

    const std::size_t classes = cfg.generator.classes;
    const std::size_t ipe = iterations_per_epoch(cfg, data);
    const losses::RampConfig ramp{cfg.lambda_max, static_cast<std::int64_t>(std::max<std::size_t>(1, cfg.epochs * ipe))};

    std::vector<std::size_t> probe_idx(std::min(cfg.disagreement_batch, data.validation.size()));
    std::iota(probe_idx.begin(), probe_idx.end(), 0);
    const Tensor probe = data::gather_unlabeled(data.validation, probe_idx).images;

    TriadState& state = result.state;
    double val_dsc = teacher_dsc(state.teacher, data.validation, classes);
    try {
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            const auto batches = data::epoch_batches(data.split.labeled.size(), data.split.unlabeled.size(),
                                                     cfg.batch_labeled, cfg.batch_unlabeled, cfg.seed_data, epoch,
                                                     labeled_only);
            for (std::size_t i = 0; i < batches.size(); ++i) {
                const data::LabeledBatch lb = data::gather_labeled(data.split.labeled, batches[i].labeled);
                const data::UnlabeledBatch ub = labeled_only
                                                    ? data::UnlabeledBatch{lb.images, lb.ids}
                                                    : data::gather_unlabeled(data.split.unlabeled, batches[i].unlabeled);
                HistoryRecord rec;
                const IterationResult it = run_iteration(state, lb, ub, cfg, ramp);
                rec.loss = it.report;
                rec.mean_entropy = it.mean_entropy;
                const LabelMap a = predict(state.student1, probe);
                const LabelMap b = predict(flags.two_students() ? state.student2 : state.teacher, probe);
                rec.disagreement = metrics::disagreement(a, b, classes);
                if (i + 1 == batches.size()) val_dsc = teacher_dsc(state.teacher, data.validation, classes);
                rec.val_dsc = val_dsc;
                result.history.push_back(rec);
                if (channel != nullptr) channel->push(rec);
            }
        }
    } catch (const DivergenceError& e) {
        result.diverged = true;
        result.error = e.what();
    }
    return result;
}

void write_history_csv(std::ostream& out, const std::vector<HistoryRecord>& history) {
    out << "t,lambda,l_total,l_s,l_cps,l_mts,disagreement,mean_entropy,val_dsc\n";
    for (const auto& h : history) {
        out << h.loss.t << ',' << real(h.loss.lambda) << ',' << real(h.loss.l_total) << ',' << real(h.loss.l_s) << ','
            << real(h.loss.l_cps) << ',' << real(h.loss.l_mts) << ',' << real(h.disagreement) << ','
            << real(h.mean_entropy) << ',' << real(h.val_dsc) << '\n';
    }
}

std::vector<HistoryRecord> read_history_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("t,lambda,l_total", 0) != 0) {
        throw IoError("history CSV: missing header");
    }
    std::vector<HistoryRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                v.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError("history CSV line " + std::to_string(lineno) + ": bad value '" + cell + "'");
            }
        }
        if (v.size() != 9) throw IoError("history CSV line " + std::to_string(lineno) + ": expected 9 columns");
        HistoryRecord h;
        h.loss.t = static_cast<std::int64_t>(v[0]);
        h.loss.lambda = v[1];
        h.loss.l_total = v[2];
        h.loss.l_s = v[3];
        h.loss.l_cps = v[4];
        h.loss.l_mts = v[5];
        h.disagreement = v[6];
        h.mean_entropy = v[7];
        h.val_dsc = v[8];
        out.push_back(h);
    }
    return out;
}

void save_triad(const TriadState& state, const TrainConfig& cfg, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    save_params(state.teacher, dir / "teacher.bin");
    save_params(state.student1, dir / "student1.bin");
    save_params(state.student2, dir / "student2.bin");
    std::ofstream m(dir / "triad.manifest", std::ios::binary);
    if (!m) throw IoError("cannot write " + (dir / "triad.manifest").string());
    m << "format=ucmt-triad-1\n"
      << "method=" << to_string(cfg.method) << '\n'
      << "t=" << state.t << '\n'
      << "ema_updates=" << state.ema_updates << '\n'
      << "teacher=teacher.bin\nstudent1=student1.bin\nstudent2=student2.bin\n";
    if (!m) throw IoError("cannot write " + (dir / "triad.manifest").string());
}

TriadState load_triad(const std::filesystem::path& dir) {
    const auto manifest = dir / "triad.manifest";
    std::ifstream in(manifest);
    if (!in) throw IoError("missing checkpoint manifest " + manifest.string());
    std::stringstream ss;
    ss << in.rdbuf();
    std::map<std::string, std::string> kv;
    try {
        kv = parse_key_values(ss.str());
    } catch (const ConfigError& e) {
        throw IoError(manifest.string() + ": " + e.what());
    }
    if (kv["format"] != "ucmt-triad-1") throw IoError(manifest.string() + ": unknown format");
    TriadState s;
    s.teacher = load_params(dir / kv["teacher"]);
    s.student1 = load_params(dir / kv["student1"]);
    s.student2 = load_params(dir / kv["student2"]);
    if (!(s.teacher.spec == s.student1.spec) || !(s.teacher.spec == s.student2.spec)) {
        throw IoError(dir.string() + ": checkpoint layer specs differ");
    }
    try {
        s.t = std::stoll(kv["t"]);
        s.ema_updates = std::stoull(kv["ema_updates"]);
    } catch (const std::exception&) {
        throw IoError(manifest.string() + ": bad counters");
    }
    return s;
}

}  // namespace ucmt::trainer
