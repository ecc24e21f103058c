#pragma once
// Adam, the step-decay schedule, the training loop, evaluation and prediction.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rmsd/checkpoint.hpp"
#include "rmsd/data.hpp"
#include "rmsd/metrics.hpp"
#include "rmsd/network.hpp"

namespace rmsd {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Step count plus hyperparameters; the moments live beside each parameter
/// in ModelParams.
struct AdamState {
    AdamConfig cfg;
    std::uint64_t t = 0;
};

class NonFiniteGradient : public std::runtime_error {
public:
    NonFiniteGradient(std::string param, const std::string& what)
        : std::runtime_error(what), param_(std::move(param)) {}
    const std::string& param() const { return param_; }

private:
    std::string param_;
};

/// Bias-corrected Adam on every trainable entry. All gradients are checked
/// before anything is written, so a throw leaves params and state untouched.
/// weight_decay > 0 adds wd * value to the gradient; grad_clip > 0 rescales
/// the global gradient norm down to grad_clip.
template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, AdamState& state, double lr, double weight_decay = 0.0,
               double grad_clip = 0.0);

struct TrainConfig {
    int epochs = 250;
    int batch_size = 16;
    double lr0 = 3e-4;
    int decay_every = 20;
    double decay_factor = 0.1;
    std::uint64_t seed = 0;
    double threshold = 0.5;
    int input_size = 224;  // square side fed to the network; 0 keeps native size
    bool augment = true;   // expand the training manifest 4x
    double grad_clip = 0.0;
    double weight_decay = 0.0;
    AdamConfig adam;
    NetworkConfig network;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Flat object: training and network keys side by side. Unknown keys are an
/// error so that typos do not silently fall back to defaults.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

/// lr0 * decay_factor ^ floor(epoch / decay_every), epochs counted from 0.
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double loss = 0.0;      // sample-weighted mean combined loss over the epoch
    double lr = 0.0;
    double seconds = 0.0;
    double train_dc = 0.0;  // micro DC of the training-mode predictions
    std::optional<double> val_dc;
    std::size_t samples = 0;
    std::size_t steps = 0;
};
void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainResult {
    std::vector<EpochRecord> log;
    bool halted = false;  // stopped on a non-finite loss or gradient
    std::string halt_reason;
    std::filesystem::path latest;
    std::optional<std::filesystem::path> best;
    std::optional<double> best_val_dc;
};

/// Writes <out>/train_log.jsonl (one object per epoch), <out>/latest.ckpt
/// after every epoch and <out>/best.ckpt whenever validation DC improves.
/// Epochs run over the expanded set when cfg.augment is set. Checkpoints
/// depend only on (cfg, data), never on timing.
TrainResult train(const TrainConfig& cfg, const Manifest& train_set, const Manifest* val_set,
                  const std::filesystem::path& out_dir,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Runs the network at `input_size` (0 = native), thresholds, and returns a
/// {0,1} mask at the image's own resolution via nearest-neighbour resize.
Tensorf predict_mask(const Network& net, ModelParams<float>& params, const Tensorf& image, int input_size,
                     double threshold);

struct ImageEval {
    std::string id;
    MetricsReport metrics;
};

struct EvalReport {
    double threshold = 0.5;
    MetricsReport micro;  // from pooled counts
    MacroMetrics macro;   // mean of per-image metrics
    std::vector<ImageEval> images;
};
void to_json(nlohmann::json& j, const EvalReport& r);

/// Metrics are computed at native mask resolution, as predict would write them.
EvalReport evaluate(const Network& net, ModelParams<float>& params, const Manifest& data, int input_size,
                    double threshold);
EvalReport evaluate(const std::filesystem::path& checkpoint, const Manifest& data, double threshold);

/// Input size recorded in a checkpoint's metadata, or 224 when absent.
int checkpoint_input_size(const Checkpoint& ck);

/// Writes a {0,255} gray PNG the size of the input image.
void predict_file(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                  const std::filesystem::path& out, double threshold);

}  // namespace rmsd
