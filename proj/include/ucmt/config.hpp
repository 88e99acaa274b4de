#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ucmt/data.hpp"
#include "ucmt/gridnet.hpp"

namespace ucmt {

enum class Method { baseline, mt, cps, cmt_v1, cmt_v2, cmt_v3, ucmt };
enum class Mix { none, cutmix, umix };

// single: one student, teacher tracks it for evaluation only.
// ts: one student plus EMA teacher. ss: two students, teacher unused in the
// loss. sts: full triad.
enum class Architecture { single, ts, ss, sts };

struct MethodFlags {
    Architecture architecture = Architecture::single;
    bool enable_cps = false;
    bool enable_mts = false;
    bool enable_umix = false;

    [[nodiscard]] bool two_students() const {
        return architecture == Architecture::ss || architecture == Architecture::sts;
    }
};

MethodFlags method_flags(Method method);

std::string_view to_string(Method m);
std::string_view to_string(Mix m);
std::string_view to_string(Architecture a);
Method parse_method(std::string_view text);  // ConfigError on unknown names
Mix parse_mix(std::string_view text);
const std::vector<Method>& all_methods();

struct TrainConfig {
    Method method = Method::ucmt;
    std::optional<Mix> mix;  // unset: umix for ucmt, none otherwise

    double lambda_max = 1.0;
    double alpha = 0.99;
    double beta = 0.99;
    std::size_t k = 2;
    std::size_t r = 16;
    double lr = 1e-3;
    double weight_decay = 0.01;
    double dice_eps = 1e-6;
    std::size_t epochs = 30;
    std::size_t batch_labeled = 4;
    std::size_t batch_unlabeled = 4;

    std::uint64_t seed_init1 = 1;
    std::uint64_t seed_init2 = 2;
    std::uint64_t seed_data = 3;

    // Dataset.
    std::size_t samples = 200;
    std::size_t validation_samples = 40;
    double label_ratio = 0.05;
    data::GeneratorParams generator;

    std::vector<std::size_t> hidden_channels = {8, 8, 8};
    std::size_t kernel = 3;

    std::size_t disagreement_batch = 4;  // leading validation items used for disagreement

    // Recompute the phase-2 teacher target with a fresh teacher forward on
    // the mixed unlabeled batch instead of mixing the phase-1 pseudo labels.
    bool fresh_phase2_target = false;

    [[nodiscard]] Mix effective_mix() const;
    [[nodiscard]] gridnet::LayerSpec layer_spec() const;
    [[nodiscard]] bool two_phase() const { return effective_mix() != Mix::none; }
};

// ConfigError describing the first violated constraint. Invalid method/mix
// pairs list the valid rows.
void validate(const TrainConfig& cfg);

std::string valid_combinations();

// Flat key=value text. Blank lines and everything after a # are skipped.
std::map<std::string, std::string> parse_key_values(std::string_view text);
void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
TrainConfig config_from_text(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::string& path, TrainConfig base = {});

// Canonical key=value echo of every setting; round-trips through config_from_text.
std::string to_text(const TrainConfig& cfg);

}  // namespace ucmt
