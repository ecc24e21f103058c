#include "rmsd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "rmsd/loss.hpp"

namespace rmsd {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, AdamState& state, double lr, double weight_decay, double grad_clip) {
    double norm2 = 0.0;
    for (const auto& e : params.entries()) {
        if (!e.trainable()) continue;
        for (std::size_t i = 0; i < e.grad.size(); ++i) {
            const double g = e.grad[i];
            if (!std::isfinite(g))
                throw NonFiniteGradient(e.name, "non-finite gradient in " + e.name + " at element " +
                                                    std::to_string(i) + " (" + std::to_string(g) + ")");
            norm2 += g * g;
        }
    }
    const double norm = std::sqrt(norm2);
    const double clip = (grad_clip > 0.0 && norm > grad_clip) ? grad_clip / norm : 1.0;

    ++state.t;
    const auto& c = state.cfg;
    const double t = static_cast<double>(state.t);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (auto& e : params.entries()) {
        if (!e.trainable()) continue;
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            double g = clip * static_cast<double>(e.grad[i]);
            if (weight_decay > 0.0) g += weight_decay * static_cast<double>(e.value[i]);
            const double m = c.beta1 * static_cast<double>(e.m[i]) + (1.0 - c.beta1) * g;
            const double v = c.beta2 * static_cast<double>(e.v[i]) + (1.0 - c.beta2) * g * g;
            e.m[i] = static_cast<Scalar>(m);
            e.v[i] = static_cast<Scalar>(v);
            const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + c.epsilon);
            e.value[i] = static_cast<Scalar>(static_cast<double>(e.value[i]) - update);
        }
    }
}

template void adam_step(ModelParams<float>&, AdamState&, double, double, double);
template void adam_step(ModelParams<double>&, AdamState&, double, double, double);

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
    if (epochs < 1) throw ContractError("train config: epochs must be >= 1");
    if (batch_size < 1) throw ContractError("train config: batch_size must be >= 1");
    if (!(lr0 > 0.0)) throw ContractError("train config: lr0 must be > 0");
    if (decay_every < 1) throw ContractError("train config: decay_every must be >= 1");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ContractError("train config: decay_factor must be in (0, 1]");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ContractError("train config: threshold must be in (0, 1)");
    if (input_size < 0 || input_size % 8 != 0)
        throw ContractError("train config: input_size must be 0 or a positive multiple of 8");
    if (grad_clip < 0.0 || weight_decay < 0.0) throw ContractError("train config: grad_clip and weight_decay must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0))
        throw ContractError("train config: adam betas must be in [0, 1) and epsilon > 0");
    network.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = c.network;
    j.update(nlohmann::json{{"epochs", c.epochs},
                            {"batch_size", c.batch_size},
                            {"lr0", c.lr0},
                            {"decay_every", c.decay_every},
                            {"decay_factor", c.decay_factor},
                            {"seed", c.seed},
                            {"threshold", c.threshold},
                            {"input_size", c.input_size},
                            {"augment", c.augment},
                            {"grad_clip", c.grad_clip},
                            {"weight_decay", c.weight_decay},
                            {"adam_beta1", c.adam.beta1},
                            {"adam_beta2", c.adam.beta2},
                            {"adam_epsilon", c.adam.epsilon}});
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw ContractError("train config must be a JSON object");
    const nlohmann::json known = TrainConfig{};
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw ContractError("train config: unknown key '" + key + "'");
    const TrainConfig d;
    try {
        c.epochs = j.value("epochs", d.epochs);
        c.batch_size = j.value("batch_size", d.batch_size);
        c.lr0 = j.value("lr0", d.lr0);
        c.decay_every = j.value("decay_every", d.decay_every);
        c.decay_factor = j.value("decay_factor", d.decay_factor);
        c.seed = j.value("seed", d.seed);
        c.threshold = j.value("threshold", d.threshold);
        c.input_size = j.value("input_size", d.input_size);
        c.augment = j.value("augment", d.augment);
        c.grad_clip = j.value("grad_clip", d.grad_clip);
        c.weight_decay = j.value("weight_decay", d.weight_decay);
        c.adam.beta1 = j.value("adam_beta1", d.adam.beta1);
        c.adam.beta2 = j.value("adam_beta2", d.adam.beta2);
        c.adam.epsilon = j.value("adam_epsilon", d.adam.epsilon);
        c.network = j.get<NetworkConfig>();
    } catch (const nlohmann::json::type_error& e) {
        throw ContractError(std::string("train config: wrong value type: ") + e.what());
    }
}

TrainConfig load_train_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    TrainConfig c = j.get<TrainConfig>();
    c.validate();
    return c;
}

double lr_at(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ContractError("lr_at: epoch must be >= 0");
    return cfg.lr0 * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
    j = nlohmann::json{{"epoch", r.epoch},     {"loss", r.loss},         {"lr", r.lr},
                       {"seconds", r.seconds}, {"train_dc", r.train_dc}, {"samples", r.samples},
                       {"steps", r.steps}};
    if (r.val_dc) j["val_dc"] = *r.val_dc;
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Loads samples on demand and keeps them when the whole set fits the budget.
class SampleStore {
public:
    SampleStore(const Manifest& m, int input_size) : m_(m), size_(input_size) {
        if (m.size() == 0) return;
        const Sample first = load(0);
        const std::size_t bytes = (first.image.size() + first.mask.size()) * sizeof(float) * m.size();
        cache_ = bytes <= (std::size_t{1} << 30);
        if (cache_) {
            slots_.resize(m.size());
            slots_[0] = first;
        }
    }

    Sample get(std::size_t i) {
        if (!cache_) return load(i);
        if (!slots_[i]) slots_[i] = load(i);
        return *slots_[i];
    }

private:
    Sample load(std::size_t i) const {
        return materialize(m_.entries[i], size_ > 0 ? std::optional<int>(size_) : std::nullopt);
    }

    const Manifest& m_;
    int size_;
    bool cache_ = false;
    std::vector<std::optional<Sample>> slots_;
};

Tensorf stack(const std::vector<const Tensorf*>& parts) {
    const Shape s = parts.front()->shape();
    Tensorf out(Shape{static_cast<int>(parts.size()), s.c, s.h, s.w});
    float* dst = out.raw();
    for (const Tensorf* p : parts) {
        if (p->shape() != s)
            throw ShapeError("training images must share one size; got " + s.str() + " and " + p->shape().str() +
                             " (set input_size to resize)");
        dst = std::copy_n(p->raw(), p->size(), dst);
    }
    return out;
}

nlohmann::json checkpoint_meta(const TrainConfig& cfg, const AdamState& adam, const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"loss", r.loss},
            {"lr", r.lr},
            {"input_size", cfg.input_size},
            {"threshold", cfg.threshold},
            {"adam", {{"beta1", adam.cfg.beta1}, {"beta2", adam.cfg.beta2}, {"epsilon", adam.cfg.epsilon}, {"t", adam.t}}},
            {"train_config", cfg}};
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Manifest& train_set, const Manifest* val_set, const fs::path& out_dir,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    if (train_set.size() == 0) throw ContractError("train: training manifest is empty");
    fs::create_directories(out_dir);

    const Manifest expanded = cfg.augment ? expand_4x(train_set, cfg.seed) : train_set;
    SampleStore store(expanded, cfg.input_size);
    const Network net(cfg.network);
    ModelParams<float> params = net.init<float>(cfg.seed);
    AdamState adam{cfg.adam, 0};

    std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw ContractError("cannot write " + (out_dir / "train_log.jsonl").string());

    TrainResult result;
    std::vector<std::size_t> order(expanded.size());
    for (int epoch = 0; epoch < cfg.epochs && !result.halted; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_at(epoch, cfg);

        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng::derive(cfg.seed, static_cast<std::uint64_t>(epoch)).shuffle(std::span<std::size_t>(order));

        double loss_sum = 0.0;
        ConfusionCounts counts;
        for (std::size_t first = 0; first < order.size(); first += cfg.batch_size) {
            const std::size_t last = std::min(order.size(), first + cfg.batch_size);
            std::vector<Sample> batch;
            for (std::size_t k = first; k < last; ++k) batch.push_back(store.get(order[k]));
            std::vector<const Tensorf*> imgs, masks;
            for (const auto& s : batch) {
                imgs.push_back(&s.image);
                masks.push_back(&s.mask);
            }
            const Tensorf x = stack(imgs);
            const Tensorf y = stack(masks);

            Tape<float> tape;
            Graph<float> g(tape, params, Mode::Train, net.bn_settings());
            const Var pred = net.forward(g, tape.constant(x));
            const Var loss = combined_loss(tape, pred, y);
            const double l = tape.value(loss).item();
            if (!std::isfinite(l)) {
                result.halted = true;
                result.halt_reason = "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                     std::to_string(rec.steps);
                break;
            }
            g.backward(loss);
            try {
                adam_step(params, adam, rec.lr, cfg.weight_decay, cfg.grad_clip);
            } catch (const NonFiniteGradient& e) {
                result.halted = true;
                result.halt_reason = std::string(e.what()) + " at epoch " + std::to_string(epoch);
                break;
            }
            counts += confusion(tape.value(pred), y, cfg.threshold);
            loss_sum += l * static_cast<double>(batch.size());
            rec.samples += batch.size();
            ++rec.steps;
        }
        if (result.halted) break;

        rec.loss = loss_sum / static_cast<double>(rec.samples);
        rec.train_dc = metrics(counts).dc;
        if (val_set && val_set->size() > 0)
            rec.val_dc = evaluate(net, params, *val_set, cfg.input_size, cfg.threshold).micro.dc;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        const nlohmann::json meta = checkpoint_meta(cfg, adam, rec);
        result.latest = out_dir / "latest.ckpt";
        save_checkpoint(result.latest, params, cfg.network, meta);
        if (rec.val_dc && (!result.best_val_dc || *rec.val_dc > *result.best_val_dc)) {
            result.best_val_dc = rec.val_dc;
            result.best = out_dir / "best.ckpt";
            save_checkpoint(*result.best, params, cfg.network, meta);
        }
        log << nlohmann::json(rec).dump() << '\n' << std::flush;
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation and prediction

Tensorf predict_mask(const Network& net, ModelParams<float>& params, const Tensorf& image, int input_size,
                     double threshold) {
    const int h = image.height(), w = image.width();
    Tensorf x = image;
    if (input_size > 0 && (h != input_size || w != input_size)) {
        x = bicubic_resize(image, input_size, input_size);
        for (auto& v : x.data()) v = std::clamp(v, 0.0f, 1.0f);
    }
    Tensorf p = forward(net, params, x, Mode::Infer);
    for (auto& v : p.data()) v = v >= threshold ? 1.0f : 0.0f;
    return (p.height() == h && p.width() == w) ? p : resize_nearest(p, h, w);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    nlohmann::json images = nlohmann::json::array();
    for (const auto& im : r.images) {
        nlohmann::json e = im.metrics;
        e["id"] = im.id;
        images.push_back(std::move(e));
    }
    j = nlohmann::json{{"threshold", r.threshold}, {"micro", r.micro}, {"macro", r.macro}, {"images", std::move(images)}};
}

EvalReport evaluate(const Network& net, ModelParams<float>& params, const Manifest& data, int input_size,
                    double threshold) {
    if (data.size() == 0) throw ContractError("evaluate: manifest is empty");
    EvalReport report;
    report.threshold = threshold;
    ConfusionCounts total;
    std::vector<MetricsReport> per_image;
    for (const auto& e : data.entries) {
        const Sample s = materialize(e);
        const Tensorf pred = predict_mask(net, params, s.image, input_size, threshold);
        const ConfusionCounts c = confusion(pred, s.mask, 0.5);
        total += c;
        per_image.push_back(metrics(c));
        report.images.push_back({e.id, per_image.back()});
    }
    report.micro = metrics(total);
    report.macro = macro_average(per_image);
    return report;
}

int checkpoint_input_size(const Checkpoint& ck) {
    return ck.meta.is_object() ? ck.meta.value("input_size", 224) : 224;
}

EvalReport evaluate(const fs::path& checkpoint, const Manifest& data, double threshold) {
    Checkpoint ck = load_checkpoint(checkpoint);
    const Network net(ck.network);
    verify_layout(ck.params, net.init<float>(0));
    return evaluate(net, ck.params, data, checkpoint_input_size(ck), threshold);
}

void predict_file(const fs::path& checkpoint, const fs::path& image, const fs::path& out, double threshold) {
    Checkpoint ck = load_checkpoint(checkpoint);
    const Network net(ck.network);
    verify_layout(ck.params, net.init<float>(0));
    const Tensorf x = image_to_tensor(read_image(image));
    const Tensorf mask = predict_mask(net, ck.params, x, checkpoint_input_size(ck), threshold);
    write_png(out, tensor_to_image(mask));
}

}  // namespace rmsd
