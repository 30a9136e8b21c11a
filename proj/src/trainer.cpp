#include "dgnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "dgnet/image_io.hpp"

namespace dgnet {

void TrainConfig::validate() const
{
    adamw.validate();
    loss.validate();
    clahe.validate();
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (max_steps < 0) throw ConfigError("train: max_steps must be >= 0");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ConfigError("train: ema_decay must lie in (0, 1)");
    if (grad_clip < 0.0) throw ConfigError("train: grad_clip must be >= 0");
    if (validate_every < 0) throw ConfigError("train: validate_every must be >= 0");
    if (progressive) {
        schedule.validate();
    } else if (image_size < 16 || image_size % 8 != 0) {
        throw ConfigError("train: image_size must be >= 16 and divisible by 8");
    }
}

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& config, DatasetIndex train, DatasetIndex val)
    : model_config_(model_config),
      config_(config),
      train_(std::move(train)),
      val_(std::move(val)),
      model_((config.validate(), model_config), config.seed),
      optimizer_(model_.parameters(), config.adamw),
      ema_(model_, config.ema_decay)
{
    if (train_.empty()) throw ConfigError("train: empty training set");
    if (train_.kind() != DatasetKind::Paired) throw UsageError("train: training set is not paired");
}

std::size_t Trainer::batches_per_epoch() const
{
    return (train_.size() + static_cast<std::size_t>(config_.batch) - 1) / static_cast<std::size_t>(config_.batch);
}

std::int64_t Trainer::total_steps() const
{
    const auto full = static_cast<std::int64_t>(batches_per_epoch()) * config_.epochs;
    return config_.max_steps > 0 ? std::min(full, config_.max_steps) : full;
}

int Trainer::epoch_of(std::int64_t step) const
{
    return static_cast<int>(step / static_cast<std::int64_t>(batches_per_epoch()));
}

int Trainer::size_for_epoch(int epoch) const
{
    if (!config_.progressive) return config_.image_size;
    return progressive_size(std::min(epoch, config_.epochs - 1), config_.epochs, config_.schedule);
}

double Trainer::gamma_for_step() const
{
    if (!config_.gamma_warmup) return config_.loss.gamma;
    const double ramp = std::max(1.0, 0.1 * static_cast<double>(total_steps()));
    return config_.loss.gamma * std::min(1.0, static_cast<double>(step_ + 1) / ramp);
}

StepResult Trainer::step()
{
    const int epoch = epoch_of(step_);
    if (!iterator_ || iterator_epoch_ != epoch) {
        iterator_.emplace(train_, config_.batch, size_for_epoch(epoch), config_.seed, epoch);
        iterator_->skip(static_cast<std::size_t>(step_ % static_cast<std::int64_t>(batches_per_epoch())));
        iterator_epoch_ = epoch;
    }
    Batch batch;
    if (!iterator_->next(batch)) throw UsageError("train: batch schedule exhausted");
    return train_step(batch);
}

Tensor<float> Trainer::epoch_pseudo_label(const Batch& batch, const Tensor<float>& prediction)
{
    const Tensor<float> current = make_pseudo_label(prediction.detach(), config_.clahe);
    std::vector<Tensor<float>> items;
    const Shape& s = prediction.shape();
    for (std::size_t n = 0; n < batch.ids.size(); ++n) {
        Tensor<float> now = batch_item(current, static_cast<std::int64_t>(n));
        const auto it = previous_labels_.find(batch.ids[n]);
        if (it == previous_labels_.end()) {
            items.push_back(now);
        } else if (it->second.shape().h != s.h || it->second.shape().w != s.w) {
            items.push_back(resize_bilinear(it->second, static_cast<int>(s.h), static_cast<int>(s.w)));
        } else {
            items.push_back(it->second);
        }
        previous_labels_[batch.ids[n]] = now;
    }
    return stack_batch(items);
}

StepResult Trainer::train_step(const Batch& batch)
{
    std::vector<Parameter<float>*> params = model_.parameters();
    std::vector<std::vector<float>> before;
    before.reserve(params.size());
    for (Parameter<float>* p : params) before.emplace_back(p->tensor.data().begin(), p->tensor.data().end());

    model_.zero_grad();
    LossWeights weights = config_.loss;
    weights.gamma = gamma_for_step();

    Tape<float> tape;
    LossTerms<float> terms;
    {
        TapeScope<float> scope(tape);
        const Tensor<float> prediction = model_.forward(batch.raw, Mode::Train);
        const float* out = prediction.raw();
        if (!std::all_of(out, out + prediction.numel(), [](float v) { return std::isfinite(v); })) {
            throw NumericalError("non-finite prediction at step " + std::to_string(step_ + 1));
        }
        std::optional<Tensor<float>> label;
        if (weights.gamma > 0.0 && config_.pseudo_label == PseudoLabelMode::PerEpoch) {
            label = epoch_pseudo_label(batch, prediction);
        }
        terms = total_loss(prediction, batch.reference, weights, config_.clahe, label ? &*label : nullptr);
        const double total = static_cast<double>(terms.total.item());
        if (!std::isfinite(total)) {
            std::ostringstream msg;
            msg << "non-finite loss at step " << (step_ + 1) << ": l1=" << terms.l1 << " ssim=" << terms.ssim
                << " dynamic=" << terms.dynamic << " total=" << total;
            throw NumericalError(msg.str());
        }
        tape.backward(terms.total);
    }

    StepResult r;
    r.grad_norm = gradient_norm(params);
    if (!std::isfinite(r.grad_norm)) {
        throw NumericalError("non-finite gradient norm at step " + std::to_string(step_ + 1));
    }
    if (config_.grad_clip > 0.0) clip_gradient_norm(params, config_.grad_clip);
    optimizer_.step();
    const double k = static_cast<double>(ema_.updates());
    ema_.update(model_, config_.ema_warmup ? std::min(config_.ema_decay, (1.0 + k) / (10.0 + k)) : config_.ema_decay);
    ++step_;

    for (std::size_t i = 0; i < params.size(); ++i) {
        const float* now = params[i]->tensor.raw();
        for (std::size_t j = 0; j < before[i].size(); ++j) {
            r.max_param_change = std::max(r.max_param_change, std::abs(static_cast<double>(now[j]) - before[i][j]));
        }
    }
    r.step = step_;
    r.l1 = terms.l1;
    r.ssim = terms.ssim;
    r.dynamic = terms.dynamic;
    r.total = static_cast<double>(terms.total.item());
    r.pseudo_label = terms.pseudo_label;
    return r;
}

MetricReport Trainer::validate(bool use_ema)
{
    DGNet<float>& net = use_ema ? ema_.shadow() : model_;
    NoGradScope<float> off;
    MetricReport report(true);
    double abs_sum = 0.0;
    double sq_sum = 0.0;
    double count = 0.0;
    for (const DatasetEntry& e : val_.entries()) {
        const Tensor<float> raw = load_image(e.raw);
        const Tensor<float> ref = load_image(*e.reference);
        if (raw.shape() != ref.shape()) {
            throw DimensionError("validation pair '" + e.id + "' has mismatched sizes " + raw.shape().str() +
                                 " vs " + ref.shape().str());
        }
        const std::int64_t h = raw.shape().h / 8 * 8;
        const std::int64_t w = raw.shape().w / 8 * 8;
        const Tensor<float> input = center_crop(raw, h, w);
        const Tensor<float> target = center_crop(ref, h, w);
        const Tensor<float> pred = net.forward(input, Mode::Eval);
        for (std::size_t i = 0; i < pred.numel(); ++i) {
            const double d = static_cast<double>(pred.raw()[i]) - static_cast<double>(target.raw()[i]);
            abs_sum += std::abs(d);
            sq_sum += d * d;
        }
        count += static_cast<double>(pred.numel());
        report.add(evaluate_pair(e.id, pred, target));
    }
    last_val_mae_ = count > 0 ? abs_sum / count : 0.0;
    last_val_mse_ = count > 0 ? sq_sum / count : 0.0;
    return report;
}

void Trainer::run(std::ostream& log, const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const StepResult&)>& on_step)
{
    const std::int64_t bpe = static_cast<std::int64_t>(batches_per_epoch());
    const std::int64_t total = total_steps();
    while (step_ < total) {
        const StepResult r = step();
        log << format_step_line(r) << '\n';
        if (on_step) on_step(r);

        const bool epoch_end = step_ % bpe == 0;
        const int finished_epoch = static_cast<int>(step_ / bpe);
        const bool scheduled = epoch_end && config_.validate_every > 0 && finished_epoch % config_.validate_every == 0;
        if ((scheduled || step_ == total) && !val_.empty()) {
            const MetricReport report = validate(config_.validate_with_ema);
            const MetricRecord m = report.mean();
            char line[256];
            std::snprintf(line, sizeof line, "# val step=%lld psnr=%.4f ssim=%.4f rmse=%.6f mse=%.6f mae=%.6f",
                          static_cast<long long>(step_), *m.psnr, *m.ssim, *m.rmse, last_val_mse_, last_val_mae_);
            log << line << '\n';
            if (out_dir) {
                if (*m.psnr > best_psnr_) {
                    best_psnr_ = *m.psnr;
                    save_checkpoint(*out_dir / "best.ckpt");
                }
                save_checkpoint(*out_dir / "last.ckpt");
            }
        }
        log.flush();
    }
    if (out_dir && val_.empty()) save_checkpoint(*out_dir / "last.ckpt");
}

namespace {

std::string exact(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

} // namespace

void Trainer::save_checkpoint(const std::filesystem::path& path)
{
    Checkpoint ck;
    ck.config = model_config_;
    ck.meta["step"] = std::to_string(step_);
    ck.meta["adam.steps"] = std::to_string(optimizer_.steps());
    ck.meta["ema.updates"] = std::to_string(ema_.updates());
    ck.meta["seed"] = std::to_string(config_.seed);
    ck.meta["best_psnr"] = exact(best_psnr_);
    append_model_state(ck, model_);
    append_model_state(ck, ema_.shadow(), "ema.");
    const auto& params = optimizer_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->trainable) continue;
        ck.arrays.push_back({"adam.m." + params[i]->name, params[i]->tensor.shape(), optimizer_.first_moment(i)});
        ck.arrays.push_back({"adam.v." + params[i]->name, params[i]->tensor.shape(), optimizer_.second_moment(i)});
    }
    for (const auto& [id, label] : previous_labels_) {
        ck.arrays.push_back({"pseudo_label." + id, label.shape(), std::vector<float>(label.data().begin(), label.data().end())});
    }
    write_checkpoint(path, ck);
}

void Trainer::load_checkpoint(const std::filesystem::path& path)
{
    const Checkpoint ck = read_checkpoint(path);
    load_model_state(model_, ck);
    load_model_state(ema_.shadow(), ck, "ema.");
    const auto& params = optimizer_.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->trainable) continue;
        optimizer_.first_moment(i) = ck.at("adam.m." + params[i]->name).data;
        optimizer_.second_moment(i) = ck.at("adam.v." + params[i]->name).data;
    }
    const auto meta = [&](const std::string& key) {
        const auto it = ck.meta.find(key);
        if (it == ck.meta.end()) throw IntegrityError("checkpoint: missing metadata '" + key + "'");
        return it->second;
    };
    try {
        step_ = std::stoll(meta("step"));
        optimizer_.set_steps(std::stoll(meta("adam.steps")));
        ema_.set_updates(std::stoll(meta("ema.updates")));
        best_psnr_ = std::strtod(meta("best_psnr").c_str(), nullptr);
    } catch (const std::logic_error&) {
        throw IntegrityError("checkpoint: malformed metadata");
    }
    previous_labels_.clear();
    const std::string prefix = "pseudo_label.";
    for (const CheckpointArray& a : ck.arrays) {
        if (a.name.rfind(prefix, 0) == 0) previous_labels_[a.name.substr(prefix.size())] = Tensor<float>(a.shape, a.data);
    }
    iterator_.reset();
    iterator_epoch_ = -1;
}

std::string format_step_line(const StepResult& r)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld\t%.6f\t%.6f\t%.6f\t%.6f\t%.6f", static_cast<long long>(r.step), r.l1, r.ssim,
                  r.dynamic, r.total, r.grad_norm);
    return buf;
}

} // namespace dgnet
