#include "ucmt/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ucmt/errors.hpp"
#include "ucmt/mixer.hpp"

namespace ucmt {
namespace {

const std::vector<Method> kMethods = {Method::baseline, Method::mt,     Method::cps, Method::cmt_v1,
                                      Method::cmt_v2,   Method::cmt_v3, Method::ucmt};

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a real number, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
    return out;
}

std::string real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

bool mix_allowed(Method method, Mix mix) {
    const MethodFlags f = method_flags(method);
    if (method == Method::ucmt) return mix != Mix::none;
    if (mix == Mix::none) return true;
    return f.two_students();
}

}  // namespace

MethodFlags method_flags(Method method) {
    switch (method) {
        case Method::baseline: return {Architecture::single, false, false, false};
        case Method::mt: return {Architecture::ts, false, true, false};
        case Method::cps: return {Architecture::ss, true, false, false};
        case Method::cmt_v1: return {Architecture::sts, false, true, false};
        case Method::cmt_v2: return {Architecture::sts, true, false, false};
        case Method::cmt_v3: return {Architecture::sts, true, true, false};
        case Method::ucmt: return {Architecture::sts, true, true, true};
    }
    throw ConfigError("unknown method");
}

std::string_view to_string(Method m) {
    switch (m) {
        case Method::baseline: return "baseline";
        case Method::mt: return "mt";
        case Method::cps: return "cps";
        case Method::cmt_v1: return "cmt_v1";
        case Method::cmt_v2: return "cmt_v2";
        case Method::cmt_v3: return "cmt_v3";
        case Method::ucmt: return "ucmt";
    }
    return "?";
}

std::string_view to_string(Mix m) {
    switch (m) {
        case Mix::none: return "none";
        case Mix::cutmix: return "cutmix";
        case Mix::umix: return "umix";
    }
    return "?";
}

std::string_view to_string(Architecture a) {
    switch (a) {
        case Architecture::single: return "single";
        case Architecture::ts: return "TS";
        case Architecture::ss: return "SS";
        case Architecture::sts: return "STS";
    }
    return "?";
}

Method parse_method(std::string_view text) {
    for (Method m : kMethods) {
        if (to_string(m) == text) return m;
    }
    throw ConfigError("unknown method '" + std::string(text) + "'");
}

Mix parse_mix(std::string_view text) {
    for (Mix m : {Mix::none, Mix::cutmix, Mix::umix}) {
        if (to_string(m) == text) return m;
    }
    throw ConfigError("unknown mix '" + std::string(text) + "' (none, cutmix, umix)");
}

const std::vector<Method>& all_methods() { return kMethods; }

Mix TrainConfig::effective_mix() const {
    if (mix) return *mix;
    return method == Method::ucmt ? Mix::umix : Mix::none;
}

gridnet::LayerSpec TrainConfig::layer_spec() const {
    gridnet::LayerSpec spec;
    spec.channels.push_back(generator.channels);
    for (std::size_t c : hidden_channels) spec.channels.push_back(c);
    spec.channels.push_back(generator.classes);
    spec.kernels.assign(spec.channels.size() - 1, kernel);
    return spec;
}

std::string valid_combinations() {
    std::ostringstream os;
    os << "valid method/mix rows:\n";
    for (Method m : kMethods) {
        const MethodFlags f = method_flags(m);
        os << "  " << to_string(m) << " [" << to_string(f.architecture) << (f.enable_cps ? " cps" : "")
           << (f.enable_mts ? " mts" : "") << "] mix:";
        for (Mix x : {Mix::none, Mix::cutmix, Mix::umix}) {
            if (mix_allowed(m, x)) os << ' ' << to_string(x);
        }
        os << '\n';
    }
    return os.str();
}

void validate(const TrainConfig& cfg) {
    // alpha = 1 is accepted as the frozen-teacher endpoint.
    if (!(cfg.alpha > 0.0 && cfg.alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
    if (!(cfg.beta > 0.0 && cfg.beta < 1.0)) throw ConfigError("beta must lie in (0, 1)");
    if (!(cfg.lambda_max >= 0.0)) throw ConfigError("lambda_max must be non-negative");
    if (!(cfg.lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (!(cfg.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(cfg.dice_eps > 0.0)) throw ConfigError("dice_eps must be positive");
    if (cfg.batch_labeled < 1 || cfg.batch_unlabeled < 1) throw ConfigError("batch sizes must be at least 1");
    if (!(cfg.label_ratio > 0.0 && cfg.label_ratio <= 1.0)) throw ConfigError("ratio must lie in (0, 1]");
    if (cfg.samples < 1) throw ConfigError("samples must be at least 1");
    if (cfg.validation_samples < 1) throw ConfigError("validation_samples must be at least 1");
    if (cfg.generator.classes < 2 || cfg.generator.classes > 3) throw ConfigError("classes must be 2 or 3");
    if (cfg.generator.channels < 1) throw ConfigError("channels must be at least 1");
    if (!mix_allowed(cfg.method, cfg.effective_mix())) {
        throw ConfigError("method " + std::string(to_string(cfg.method)) + " does not support mix " +
                          std::string(to_string(cfg.effective_mix())) + "\n" + valid_combinations());
    }
    cfg.layer_spec().validate();
    if (cfg.effective_mix() == Mix::umix) {
        if (cfg.r < 2) throw ConfigError("r must be at least 2");
        if (cfg.k < 1 || cfg.k > cfg.r / 2) throw ConfigError("k must lie in [1, r/2]");
        try {
            mixer::partition(cfg.generator.height, cfg.generator.width, cfg.r);
        } catch (const GeometryError& e) {
            throw ConfigError(e.what());
        }
    }
    const std::size_t n_labeled = data::labeled_count(cfg.samples, cfg.label_ratio);
    if (n_labeled < cfg.samples && cfg.samples - n_labeled < cfg.batch_unlabeled) {
        throw ConfigError("fewer unlabeled samples than one unlabeled batch");
    }
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
    std::map<std::string, std::string> out;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line.substr(0, line.find('#')));
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return out;
}

void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& v) {
    auto& g = cfg.generator;
    if (key == "method") cfg.method = parse_method(v);
    else if (key == "mix") cfg.mix = (v == "auto") ? std::nullopt : std::optional<Mix>(parse_mix(v));
    else if (key == "lambda_max") cfg.lambda_max = parse_double(key, v);
    else if (key == "alpha") cfg.alpha = parse_double(key, v);
    else if (key == "beta") cfg.beta = parse_double(key, v);
    else if (key == "k") cfg.k = parse_size(key, v);
    else if (key == "r") cfg.r = parse_size(key, v);
    else if (key == "lr") cfg.lr = parse_double(key, v);
    else if (key == "weight_decay") cfg.weight_decay = parse_double(key, v);
    else if (key == "dice_eps") cfg.dice_eps = parse_double(key, v);
    else if (key == "epochs") cfg.epochs = parse_size(key, v);
    else if (key == "batch_labeled") cfg.batch_labeled = parse_size(key, v);
    else if (key == "batch_unlabeled") cfg.batch_unlabeled = parse_size(key, v);
    else if (key == "seed_init1") cfg.seed_init1 = parse_u64(key, v);
    else if (key == "seed_init2") cfg.seed_init2 = parse_u64(key, v);
    else if (key == "seed_data") cfg.seed_data = parse_u64(key, v);
    else if (key == "samples") cfg.samples = parse_size(key, v);
    else if (key == "validation_samples") cfg.validation_samples = parse_size(key, v);
    else if (key == "ratio") cfg.label_ratio = parse_double(key, v);
    else if (key == "height") g.height = parse_size(key, v);
    else if (key == "width") g.width = parse_size(key, v);
    else if (key == "channels") g.channels = parse_size(key, v);
    else if (key == "classes") g.classes = parse_size(key, v);
    else if (key == "noise_sigma") g.noise_sigma = parse_double(key, v);
    else if (key == "min_axis") g.min_axis = parse_double(key, v);
    else if (key == "max_axis") g.max_axis = parse_double(key, v);
    else if (key == "background_lo") g.background_lo = parse_double(key, v);
    else if (key == "background_hi") g.background_hi = parse_double(key, v);
    else if (key == "gradient_amplitude") g.gradient_amplitude = parse_double(key, v);
    else if (key == "contrast_lo") g.contrast_lo = parse_double(key, v);
    else if (key == "contrast_hi") g.contrast_hi = parse_double(key, v);
    else if (key == "hidden_channels") cfg.hidden_channels = parse_list(key, v);
    else if (key == "kernel") cfg.kernel = parse_size(key, v);
    else if (key == "disagreement_batch") cfg.disagreement_batch = parse_size(key, v);
    else if (key == "fresh_phase2_target") cfg.fresh_phase2_target = parse_bool(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig config_from_text(std::string_view text, TrainConfig base) {
    for (const auto& [k, v] : parse_key_values(text)) apply_setting(base, k, v);
    return base;
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_text(ss.str(), std::move(base));
}

std::string to_text(const TrainConfig& cfg) {
    const auto& g = cfg.generator;
    std::ostringstream os;
    os << "method=" << to_string(cfg.method) << '\n'
       << "mix=" << to_string(cfg.effective_mix()) << '\n'
       << "lambda_max=" << real(cfg.lambda_max) << '\n'
       << "alpha=" << real(cfg.alpha) << '\n'
       << "beta=" << real(cfg.beta) << '\n'
       << "k=" << cfg.k << '\n'
       << "r=" << cfg.r << '\n'
       << "lr=" << real(cfg.lr) << '\n'
       << "weight_decay=" << real(cfg.weight_decay) << '\n'
       << "dice_eps=" << real(cfg.dice_eps) << '\n'
       << "epochs=" << cfg.epochs << '\n'
       << "batch_labeled=" << cfg.batch_labeled << '\n'
       << "batch_unlabeled=" << cfg.batch_unlabeled << '\n'
       << "seed_init1=" << cfg.seed_init1 << '\n'
       << "seed_init2=" << cfg.seed_init2 << '\n'
       << "seed_data=" << cfg.seed_data << '\n'
       << "samples=" << cfg.samples << '\n'
       << "validation_samples=" << cfg.validation_samples << '\n'
       << "ratio=" << real(cfg.label_ratio) << '\n'
       << "height=" << g.height << '\n'
       << "width=" << g.width << '\n'
       << "channels=" << g.channels << '\n'
       << "classes=" << g.classes << '\n'
       << "noise_sigma=" << real(g.noise_sigma) << '\n'
       << "min_axis=" << real(g.min_axis) << '\n'
       << "max_axis=" << real(g.max_axis) << '\n'
       << "background_lo=" << real(g.background_lo) << '\n'
       << "background_hi=" << real(g.background_hi) << '\n'
       << "gradient_amplitude=" << real(g.gradient_amplitude) << '\n'
       << "contrast_lo=" << real(g.contrast_lo) << '\n'
       << "contrast_hi=" << real(g.contrast_hi) << '\n'
       << "hidden_channels=";
    for (std::size_t i = 0; i < cfg.hidden_channels.size(); ++i) {
        os << (i ? "," : "") << cfg.hidden_channels[i];
    }
    os << '\n'
       << "kernel=" << cfg.kernel << '\n'
       << "disagreement_batch=" << cfg.disagreement_batch << '\n'
       << "fresh_phase2_target=" << (cfg.fresh_phase2_target ? "true" : "false") << '\n';
    return os.str();
}

}  // namespace ucmt
