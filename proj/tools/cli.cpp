#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "dgnet/ablation.hpp"
#include "dgnet/checkpoint.hpp"
#include "dgnet/dataset.hpp"
#include "dgnet/errors.hpp"
#include "dgnet/image_io.hpp"
#include "dgnet/metrics.hpp"
#include "dgnet/run_config.hpp"
#include "dgnet/threading.hpp"
#include "dgnet/trainer.hpp"

namespace dgnet::cli {

namespace fs = std::filesystem;

namespace {

using Echo = std::vector<std::pair<std::string, std::string>>;

void echo(std::ostream& out, const Echo& pairs)
{
    out << "# effective config\n";
    for (const auto& [key, value] : pairs) out << key << '=' << value << '\n';
    out.flush();
}

/// Options shared by train and ablate.
struct TrainOptions {
    std::string config_file;
    std::string variant;
    std::vector<std::string> sets;
    std::string data;
    std::string manifests;
    std::size_t train_count = 800;
    std::size_t val_count = 90;
    std::uint64_t split_seed = 0;
    std::string out;
    std::string resume;
};

void add_train_options(CLI::App& cmd, TrainOptions& o)
{
    cmd.add_option("--config", o.config_file, "key=value config file")->check(CLI::ExistingFile);
    cmd.add_option("--variant", o.variant, "model variant: s or l");
    cmd.add_option("--set", o.sets, "key=value override, repeatable");
    cmd.add_option("--data", o.data, "dataset root with raw/ and reference/")->required();
    cmd.add_option("--manifests", o.manifests, "directory holding train.txt and val.txt from `split`");
    cmd.add_option("--train", o.train_count, "training images when splitting on the fly");
    cmd.add_option("--val", o.val_count, "validation images when splitting on the fly");
    cmd.add_option("--split-seed", o.split_seed, "seed of the on-the-fly split");
    cmd.add_option("--out", o.out, "checkpoint directory");
    cmd.add_option("--resume", o.resume, "checkpoint to continue from");
}

/// File, then --variant, then --set; an ablation arm (if any) goes between
/// the variant and the overrides.
RunConfig build_config(const TrainOptions& o, const std::string* arm = nullptr)
{
    RunConfig config;
    if (!o.config_file.empty()) config.merge_file(o.config_file);
    if (!o.variant.empty()) {
        if (o.variant != "s" && o.variant != "l") {
            throw ConfigError("--variant expects s or l, got '" + o.variant + "'");
        }
        config.set("model.variant", o.variant);
    }
    if (arm != nullptr) apply_arm(*arm, config);
    for (const std::string& s : o.sets) config.set_assignment(s);
    config.validate();
    return config;
}

std::pair<DatasetIndex, DatasetIndex> load_split(const TrainOptions& o)
{
    if (!o.manifests.empty()) {
        const fs::path dir(o.manifests);
        return {DatasetIndex::from_manifest(o.data, dir / "train.txt"),
                DatasetIndex::from_manifest(o.data, dir / "val.txt")};
    }
    return split_dataset(DatasetIndex::scan(o.data), SplitSpec{o.train_count, o.val_count, o.split_seed});
}

void print_audit(std::ostream& out, const char* module, const std::optional<ReplacementAudit>& audit)
{
    if (!audit) return;
    const double ratio = static_cast<double>(audit->replacement_params) / static_cast<double>(audit->module_params);
    char line[256];
    std::snprintf(line, sizeof line, "# audit %s module_params=%lld replacement_params=%lld ratio=%.4f depth=%d hidden=%lld",
                  module, static_cast<long long>(audit->module_params),
                  static_cast<long long>(audit->replacement_params), ratio, audit->depth,
                  static_cast<long long>(audit->hidden));
    out << line << '\n';
}

void train_with(const RunConfig& config, const TrainOptions& o, std::ostream& out)
{
    auto [train, val] = load_split(o);
    Trainer trainer(config.model, config.train, std::move(train), std::move(val));
    out << "# params=" << trainer.model().trainable_count() << '\n';
    print_audit(out, "frr", trainer.model().frr_audit());
    print_audit(out, "frs", trainer.model().frs_audit());
    if (!o.resume.empty()) {
        trainer.load_checkpoint(o.resume);
        out << "# resumed step=" << trainer.steps_done() << '\n';
    }
    std::optional<fs::path> out_dir;
    if (!o.out.empty()) {
        out_dir = fs::path(o.out);
        std::error_code ec;
        fs::create_directories(*out_dir, ec);
        if (ec) throw IoError("cannot create " + out_dir->string() + ": " + ec.message());
    }
    out << "# step\tl1\tl_ssim\tl_d\ttotal\tgrad_norm\n";
    trainer.run(out, out_dir);
    if (trainer.best_psnr() > -kInfinitePsnr) out << "# best_psnr=" << trainer.best_psnr() << '\n';
}

DGNet<float> open_checkpoint(const std::string& path)
{
    if (!fs::is_regular_file(path)) throw ConfigError("checkpoint not found: " + path);
    return load_inference_model(path);
}

std::vector<fs::path> image_files(const fs::path& dir)
{
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

Tensor<float> enhance_image(DGNet<float>& model, const Tensor<float>& image)
{
    const Tensor<float> padded = pad_to_multiple(image, 8);
    NoGradScope<float> no_grad;
    const Tensor<float> enhanced = model.forward(padded, Mode::Eval);
    return crop_top_left(enhanced, image.shape().h, image.shape().w);
}

std::pair<int, int> parse_size(const std::string& text)
{
    const auto x = text.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(text);
        std::size_t used_w = 0, used_h = 0;
        const int w = std::stoi(text.substr(0, x), &used_w);
        const int h = std::stoi(text.substr(x + 1), &used_h);
        if (used_w != x || used_h != text.size() - x - 1 || w < 1 || h < 1) throw std::invalid_argument(text);
        return {w, h};
    } catch (const std::logic_error&) {
        throw ConfigError("--size expects WIDTHxHEIGHT, got '" + text + "'");
    }
}

int cmd_split(const std::string& data, std::size_t train, std::size_t val, std::uint64_t seed,
              const std::string& out_dir, std::ostream& out)
{
    echo(out, {{"data", data}, {"train", std::to_string(train)}, {"val", std::to_string(val)},
               {"seed", std::to_string(seed)}, {"out", out_dir}});
    const auto [train_index, val_index] = split_dataset(DatasetIndex::scan(data), SplitSpec{train, val, seed});
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    train_index.write_manifest(fs::path(out_dir) / "train.txt");
    val_index.write_manifest(fs::path(out_dir) / "val.txt");
    out << "train=" << train_index.size() << " val=" << val_index.size() << '\n';
    return kExitOk;
}

int cmd_enhance(const std::string& ckpt, const std::string& in, const std::string& out_path, std::ostream& out)
{
    echo(out, {{"ckpt", ckpt}, {"in", in}, {"out", out_path}});
    DGNet<float> model = open_checkpoint(ckpt);
    if (fs::is_directory(in)) {
        std::error_code ec;
        fs::create_directories(out_path, ec);
        if (ec) throw IoError("cannot create " + out_path + ": " + ec.message());
        for (const fs::path& file : image_files(in)) {
            const fs::path target = fs::path(out_path) / file.filename().replace_extension(".png");
            save_image(target, enhance_image(model, load_image(file)));
            out << file.filename().string() << " -> " << target.string() << '\n';
        }
        return kExitOk;
    }
    fs::path target(out_path);
    if (fs::is_directory(target)) target /= fs::path(in).filename().replace_extension(".png");
    save_image(target, enhance_image(model, load_image(in)));
    out << in << " -> " << target.string() << '\n';
    return kExitOk;
}

int cmd_evaluate(const std::string& pred, const std::string& ref, const std::string& raw,
                 const std::string& csv_path, std::ostream& out, std::ostream& err)
{
    const bool full = !pred.empty();
    if (full == !raw.empty() || (full && ref.empty()) || (!full && !ref.empty())) {
        throw UsageError("evaluate needs either --pred and --ref, or --raw");
    }
    echo(out, {{"pred", pred}, {"ref", ref}, {"raw", raw}, {"out", csv_path}});

    MetricReport report(full);
    std::vector<std::string> skipped;
    if (full) {
        std::map<std::string, fs::path> refs;
        for (const fs::path& f : image_files(ref)) refs[f.stem().string()] = f;
        std::set<std::string> matched;
        for (const fs::path& f : image_files(pred)) {
            const std::string name = f.stem().string();
            const auto it = refs.find(name);
            if (it == refs.end()) {
                skipped.push_back(f.filename().string() + ": no reference");
                continue;
            }
            matched.insert(name);
            const Tensor<float> p = load_image(f);
            const Tensor<float> r = load_image(it->second);
            if (!(p.shape() == r.shape())) {
                skipped.push_back(f.filename().string() + ": size " + p.shape().str() + " vs " + r.shape().str());
                continue;
            }
            report.add(evaluate_pair(f.filename().string(), p, r));
        }
        for (const auto& [name, f] : refs) {
            if (!matched.count(name)) skipped.push_back(f.filename().string() + ": no prediction");
        }
    } else {
        for (const fs::path& f : image_files(raw)) report.add(evaluate_single(f.filename().string(), load_image(f)));
    }

    if (csv_path.empty()) {
        report.write_csv(out);
    } else {
        std::ofstream file(csv_path);
        if (!file) throw IoError("cannot write " + csv_path);
        report.write_csv(file);
        if (!file) throw IoError("failed writing " + csv_path);
    }
    for (const std::string& s : skipped) err << "skipped " << s << '\n';
    return skipped.empty() ? kExitOk : kExitIo;
}

int cmd_bench(const std::string& ckpt, const std::string& variant, const std::string& size, int iters, int warmup,
              std::ostream& out)
{
    if (iters < 1 || warmup < 0) throw ConfigError("bench: --iters must be >= 1 and --warmup >= 0");
    echo(out, {{"ckpt", ckpt}, {"variant", ckpt.empty() ? variant : ""}, {"size", size},
               {"iters", std::to_string(iters)}, {"warmup", std::to_string(warmup)}});
    const auto [width, height] = parse_size(size);
    DGNet<float> model = ckpt.empty() ? DGNet<float>(ModelConfig::for_variant(parse_variant(variant)), 0)
                                      : open_checkpoint(ckpt);

    Tensor<float> image(Shape{1, 3, height, width});
    for (std::size_t i = 0; i < image.numel(); ++i) image.raw()[i] = static_cast<float>((i * 37 % 251) / 250.0);

    using Clock = std::chrono::steady_clock;
    for (int i = 0; i < warmup; ++i) enhance_image(model, image);
    std::vector<double> latencies;
    const auto start = Clock::now();
    for (int i = 0; i < iters; ++i) {
        const auto t0 = Clock::now();
        enhance_image(model, image);
        latencies.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    const double wall = std::chrono::duration<double>(Clock::now() - start).count();

    double mean = 0.0;
    for (const double l : latencies) mean += l;
    mean /= static_cast<double>(latencies.size());
    std::vector<double> sorted = latencies;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    char line[256];
    std::snprintf(line, sizeof line, "mean_ms=%.3f median_ms=%.3f wall_s=%.4f images_per_sec=%.4f", mean, median,
                  wall, iters / wall);
    out << line << '\n';
    return kExitOk;
}

int cmd_ablate(const std::string& arm, bool list, const TrainOptions& o, std::ostream& out)
{
    if (list) {
        for (const AblationArm& a : ablation_arms()) out << a.name << '\t' << a.description << '\n';
        return kExitOk;
    }
    if (arm.empty()) throw UsageError("ablate needs --arm NAME or --list");
    const RunConfig config = build_config(o, &arm);
    echo(out, {{"arm", arm}});
    out << config.dump();
    out.flush();
    train_with(config, o, out);
    return kExitOk;
}

int exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
    if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const IntegrityError*>(&e)) return kExitIo;
    return kExitConfig;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Underwater image enhancement with dynamic pseudo-label gradients", "dgnet"};
    app.require_subcommand(1);

    std::string data, out_dir;
    std::size_t split_train = 800, split_val = 90;
    std::uint64_t split_seed = 0;
    CLI::App* split = app.add_subcommand("split", "write seeded train/val manifests");
    split->add_option("--data", data, "dataset root")->required();
    split->add_option("--train", split_train);
    split->add_option("--val", split_val);
    split->add_option("--seed", split_seed);
    split->add_option("--out", out_dir, "manifest directory")->required();

    TrainOptions train_opts;
    CLI::App* train = app.add_subcommand("train", "train a model");
    add_train_options(*train, train_opts);

    std::string ckpt, in_path, out_path;
    CLI::App* enhance = app.add_subcommand("enhance", "enhance an image or a directory of images");
    enhance->add_option("--ckpt", ckpt)->required();
    enhance->add_option("--in", in_path)->required();
    enhance->add_option("--out", out_path)->required();

    std::string pred, ref, raw, csv;
    CLI::App* evaluate = app.add_subcommand("evaluate", "metric CSV for predictions or raw images");
    evaluate->add_option("--pred", pred)->check(CLI::ExistingDirectory);
    evaluate->add_option("--ref", ref)->check(CLI::ExistingDirectory);
    evaluate->add_option("--raw", raw)->check(CLI::ExistingDirectory);
    evaluate->add_option("--out", csv, "CSV path; stdout when absent");

    std::string arm;
    bool list_arms = false;
    TrainOptions ablate_opts;
    CLI::App* ablate = app.add_subcommand("ablate", "train one ablation arm");
    ablate->add_option("--arm", arm);
    ablate->add_flag("--list", list_arms, "print the arms and exit");
    add_train_options(*ablate, ablate_opts);
    ablate->get_option("--data")->required(false);

    std::string bench_ckpt, bench_variant = "s", size = "854x480";
    int iters = 10, warmup = 2;
    CLI::App* bench = app.add_subcommand("bench", "inference latency and throughput");
    bench->add_option("--ckpt", bench_ckpt, "checkpoint; random weights of --variant when absent");
    bench->add_option("--variant", bench_variant);
    bench->add_option("--size", size, "WIDTHxHEIGHT");
    bench->add_option("--iters", iters);
    bench->add_option("--warmup", warmup);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        const int threads = configure_threads();
        out << "# threads=" << threads << '\n';
        if (*split) return cmd_split(data, split_train, split_val, split_seed, out_dir, out);
        if (*train) {
            const RunConfig config = build_config(train_opts);
            echo(out, {});
            out << config.dump();
            out.flush();
            train_with(config, train_opts, out);
            return kExitOk;
        }
        if (*enhance) return cmd_enhance(ckpt, in_path, out_path, out);
        if (*evaluate) return cmd_evaluate(pred, ref, raw, csv, out, err);
        if (*ablate) {
            if (!list_arms && ablate_opts.data.empty()) throw UsageError("ablate needs --data");
            return cmd_ablate(arm, list_arms, ablate_opts, out);
        }
        if (*bench) return cmd_bench(bench_ckpt, bench_variant, size, iters, warmup, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
    return kExitConfig;
}

} // namespace dgnet::cli
