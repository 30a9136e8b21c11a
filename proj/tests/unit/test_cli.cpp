#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "dgnet/ablation.hpp"
#include "dgnet/checkpoint.hpp"
#include "dgnet/image_io.hpp"
#include "dgnet/run_config.hpp"
#include "support/desk_data.hpp"

using namespace dgnet;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result invoke(const std::vector<std::string>& args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t line_count(const std::string& text)
{
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

const std::vector<std::string> kTinyModel{
    "--set", "model.variant=custom", "--set", "model.base_width=6", "--set", "model.n1=1",
    "--set", "model.n2=1",           "--set", "model.sense_blocks=1", "--set", "batch=2",
    "--set", "progressive=false",    "--set", "image_size=16"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b)
{
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

/// Tiny dataset plus a 5-step checkpoint shared by several cases.
struct Fixture {
    fs::path root;
    fs::path data;
    fs::path ckpt;

    Fixture()
    {
        root = testing::scratch_dir("cli_fixture");
        data = root / "data";
        testing::make_tiny_dataset(data, 6, 24);
        const Result r = invoke(concat({"train", "--data", data.string(), "--train", "4", "--val", "2", "--out",
                                        (root / "ckpt").string(), "--set", "max_steps=5"},
                                       kTinyModel));
        INFO(r.out << r.err);
        REQUIRE(r.code == 0);
        ckpt = root / "ckpt" / "last.ckpt";
    }
};

const Fixture& fixture()
{
    static const Fixture f;
    return f;
}

} // namespace

TEST_CASE("no subcommand or an unknown flag is a usage error")
{
    CHECK(invoke({}).code == cli::kExitConfig);
    CHECK(invoke({"split", "--bogus"}).code == cli::kExitConfig);
    CHECK(invoke({"--help"}).code == cli::kExitOk);
}

TEST_CASE("ablation arm list is stable")
{
    const Result r = invoke({"ablate", "--list"});
    REQUIRE(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    std::vector<std::string> names;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] == '#') continue;
        names.push_back(line.substr(0, line.find('\t')));
    }
    const std::vector<std::string> golden{"all",        "instead-all", "wo-cci",      "wo-fsm",   "wo-sigmoid",
                                          "remove-frr", "instead-frr", "wo-lapla",    "wo-senb",  "remove-frs",
                                          "instead-frs", "wo-l1",      "wo-ssim",     "wo-ld"};
    CHECK(names == golden);
    CHECK(invoke({"ablate", "--list"}).out == r.out);
}

TEST_CASE("unknown arm exits 2 and lists the valid arms")
{
    const Result r = invoke({"ablate", "--arm", "wo-everything", "--data", "/nonexistent"});
    CHECK(r.code == cli::kExitConfig);
    for (const AblationArm& arm : ablation_arms()) CHECK(r.err.find(arm.name) != std::string::npos);
}

TEST_CASE("split writes deterministic manifests")
{
    const fs::path root = testing::scratch_dir("cli_split");
    testing::make_tiny_dataset(root / "data", 10, 16);
    const auto args = [&](const std::string& out) {
        return std::vector<std::string>{"split", "--data", (root / "data").string(), "--train", "7", "--val", "3",
                                        "--seed", "5", "--out", (root / out).string()};
    };
    REQUIRE(invoke(args("a")).code == 0);
    REQUIRE(invoke(args("b")).code == 0);
    CHECK(line_count(slurp(root / "a" / "train.txt")) == 7);
    CHECK(line_count(slurp(root / "a" / "val.txt")) == 3);
    CHECK(slurp(root / "a" / "train.txt") == slurp(root / "b" / "train.txt"));
    CHECK(slurp(root / "a" / "val.txt") == slurp(root / "b" / "val.txt"));

    const Result too_many = invoke({"split", "--data", (root / "data").string(), "--train", "11", "--val", "0",
                                    "--out", (root / "c").string()});
    CHECK(too_many.code == cli::kExitConfig);
    CHECK_FALSE(too_many.err.empty());
}

TEST_CASE("variant s gives n1 = n2 = 3 and flags override the config file")
{
    RunConfig config;
    config.set("model.variant", "l");
    config.set("model.variant", "s");
    CHECK(config.model.n1 == 3);
    CHECK(config.model.n2 == 3);
    CHECK(config.model == ModelConfig::small());

    const fs::path dir = testing::scratch_dir("cli_config");
    std::ofstream(dir / "run.cfg") << "# comment\nloss.gamma = 0.5\n\nepochs=3\n";
    const Result r = invoke({"train", "--config", (dir / "run.cfg").string(), "--variant", "s", "--set",
                             "loss.gamma=0.25", "--data", (dir / "missing").string()});
    CHECK(r.code == cli::kExitIo);
    CHECK(r.out.find("loss.gamma=0.25\n") != std::string::npos);
    CHECK(r.out.find("epochs=3\n") != std::string::npos);
    CHECK(r.out.find("model.n1=3\n") != std::string::npos);

    std::ofstream(dir / "bad.cfg") << "loss.gama=0.5\n";
    const Result bad = invoke({"train", "--config", (dir / "bad.cfg").string(), "--data", dir.string()});
    CHECK(bad.code == cli::kExitConfig);
    CHECK(bad.err.find("loss.gama") != std::string::npos);
    CHECK(invoke({"train", "--set", "batch=zero", "--data", dir.string()}).code == cli::kExitConfig);
}

TEST_CASE("--set loss.gamma=0 matches the wo-ld arm")
{
    RunConfig via_set;
    via_set.set_assignment("loss.gamma=0");
    RunConfig via_arm;
    apply_arm("wo-ld", via_arm);
    CHECK(via_set.dump() == via_arm.dump());
}

TEST_CASE("config dump round-trips through merge_text")
{
    RunConfig a;
    apply_arm("instead-all", a);
    a.set("lr", "0.00037");
    a.set("pseudo_label", "epoch");
    RunConfig b;
    b.merge_text(a.dump(), "dump");
    CHECK(a.dump() == b.dump());
    CHECK(RunConfig::keys().size() == static_cast<std::size_t>(line_count(a.dump())));
}

TEST_CASE("smoke training echoes the config first and writes a loadable checkpoint")
{
    const Fixture& f = fixture();
    REQUIRE(fs::exists(f.ckpt));
    const DGNet<float> model = load_inference_model(f.ckpt);
    CHECK(model.config().base_width == 6);

    const Result r = invoke(concat({"train", "--data", f.data.string(), "--train", "4", "--val", "2", "--set",
                                    "max_steps=2"},
                                   kTinyModel));
    REQUIRE(r.code == 0);
    const auto config_at = r.out.find("# effective config");
    const auto first_step = r.out.find("\n1\t");
    REQUIRE(config_at != std::string::npos);
    REQUIRE(first_step != std::string::npos);
    CHECK(config_at < first_step);
    CHECK(r.out.find("\n2\t") != std::string::npos);
}

TEST_CASE("diverging training exits 3")
{
    const Fixture& f = fixture();
    const Result r = invoke(concat({"train", "--data", f.data.string(), "--train", "4", "--val", "2", "--set",
                                    "max_steps=20", "--set", "lr=1e30"},
                                   kTinyModel));
    CHECK(r.code == cli::kExitNumerical);
}

TEST_CASE("enhance keeps sizes and basenames")
{
    const Fixture& f = fixture();
    const fs::path dir = testing::scratch_dir("cli_enhance");
    Tensor<float> odd(Shape{1, 3, 21, 27});
    for (std::int64_t i = 0; i < odd.numel(); ++i) odd.raw()[i] = static_cast<float>((i % 17) / 16.0);
    fs::create_directories(dir / "in");
    save_image(dir / "in" / "a.png", odd);
    save_image(dir / "in" / "b.jpg", resize_bilinear(odd, 16, 16));

    const Result r = invoke({"enhance", "--ckpt", f.ckpt.string(), "--in", (dir / "in").string(), "--out",
                             (dir / "out").string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const Tensor<float> a = load_image(dir / "out" / "a.png");
    CHECK(a.shape() == odd.shape());
    CHECK(load_image(dir / "out" / "b.png").shape() == Shape{1, 3, 16, 16});
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        REQUIRE(a.raw()[i] >= 0.0f);
        REQUIRE(a.raw()[i] <= 1.0f);
    }

    const Result single = invoke({"enhance", "--ckpt", f.ckpt.string(), "--in", (dir / "in" / "a.png").string(),
                                  "--out", (dir / "single.png").string()});
    REQUIRE(single.code == 0);
    CHECK(load_image(dir / "single.png").shape() == odd.shape());

    const Result missing = invoke({"enhance", "--ckpt", (dir / "nope.ckpt").string(), "--in",
                                   (dir / "in").string(), "--out", (dir / "out").string()});
    CHECK(missing.code == cli::kExitConfig);
}

TEST_CASE("evaluate: identical pairs, raw mode and mismatches")
{
    const Fixture& f = fixture();
    const fs::path ref = f.data / "reference";

    const Result same = invoke({"evaluate", "--pred", ref.string(), "--ref", ref.string()});
    REQUIRE(same.code == 0);
    std::istringstream lines(same.out.substr(same.out.find("image,")));
    std::string line;
    std::getline(lines, line);
    CHECK(line == "image,psnr,rmse,ssim,uiqm,uciqe,grayworld");
    int rows = 0;
    while (std::getline(lines, line)) {
        ++rows;
        CHECK(line.find(",inf,0.000000,1.000000,") != std::string::npos);
    }
    CHECK(rows == 7);

    const Result raw = invoke({"evaluate", "--raw", ref.string()});
    REQUIRE(raw.code == 0);
    CHECK(raw.out.find("image,uiqm,uciqe,grayworld\n") != std::string::npos);
    CHECK(raw.out.find("psnr") == std::string::npos);

    const fs::path dir = testing::scratch_dir("cli_eval");
    fs::create_directories(dir / "pred");
    fs::copy_file(ref / "img0.png", dir / "pred" / "img0.png");
    fs::copy_file(ref / "img1.png", dir / "pred" / "other.png");
    const Result partial =
        invoke({"evaluate", "--pred", (dir / "pred").string(), "--ref", ref.string(), "--out",
                (dir / "m.csv").string()});
    CHECK(partial.code != 0);
    CHECK(partial.err.find("other.png") != std::string::npos);
    CHECK(partial.err.find("img3.png") != std::string::npos);
    CHECK(line_count(slurp(dir / "m.csv")) == 3);

    CHECK(invoke({"evaluate", "--raw", ref.string(), "--pred", ref.string()}).code == cli::kExitConfig);
}

TEST_CASE("bench reports latency and throughput")
{
    const Fixture& f = fixture();
    const Result r = invoke({"bench", "--ckpt", f.ckpt.string(), "--size", "40x24", "--iters", "4", "--warmup", "1"});
    REQUIRE(r.code == 0);
    double mean = 0, median = 0, wall = 0, ips = 0;
    const auto at = r.out.find("mean_ms=");
    REQUIRE(at != std::string::npos);
    REQUIRE(std::sscanf(r.out.c_str() + at, "mean_ms=%lf median_ms=%lf wall_s=%lf images_per_sec=%lf", &mean,
                        &median, &wall, &ips) == 4);
    CHECK(ips == Catch::Approx(4.0 / wall).epsilon(0.01));
    CHECK(mean * 4 <= wall * 1000.0 * 1.01);
    CHECK(median > 0.0);
    CHECK(invoke({"bench", "--ckpt", f.ckpt.string(), "--size", "40by24"}).code == cli::kExitConfig);
}

TEST_CASE("DGNET_THREADS must be a positive integer")
{
    ::setenv("DGNET_THREADS", "many", 1);
    const Result r = invoke({"ablate", "--list"});
    ::unsetenv("DGNET_THREADS");
    CHECK(r.code == cli::kExitConfig);
    ::setenv("DGNET_THREADS", "1", 1);
    CHECK(invoke({"ablate", "--list"}).code == 0);
    ::unsetenv("DGNET_THREADS");
}
