#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace nipq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("nipq_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Json small_config() {
    return Json::parse(R"({
      "experiment": "t", "seed": 3,
      "dataset": {"kind": "blobs", "n_train": 200, "n_test": 100, "classes": 4, "dim": 8, "separation": 4.0},
      "network": {"kind": "mlp", "hidden": [16]},
      "train": {"stage1_epochs": 3, "stage2_epochs": 1, "lr": 0.005, "quant_lr": 0.02, "batch_size": 32},
      "targets": [{"kind": "avg_bit_weight", "target": 4.0}],
      "analysis": {"sweep_factors": [0.8, 1.0, 1.2], "landscape_grid": 3, "hessian_probes": 4, "compare_seeds": 2}
    })");
}

fs::path write_config(const fs::path& dir, const Json& j, const std::string& name = "config.json") {
    const auto p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

struct Run {
    int code = -1;
    std::string out, err;
};

Run cli(const std::string& args, const fs::path& dir) {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = std::string(NIPQ_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file_string(out);
    r.err = read_file_string(err);
    return r;
}

std::string slurp(const fs::path& p) { return read_file_string(p); }

std::string config_error(const Json& j) {
    try {
        parse_run_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, DefaultsAndOverrides) {
    const auto c = parse_run_config(small_config());
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.train.seed, 3u);
    EXPECT_EQ(c.network.hidden, (std::vector<std::size_t>{16}));
    ASSERT_EQ(c.train.targets.size(), 1u);
    EXPECT_EQ(c.train.targets[0].kind, ResourceKind::avg_bit_weight);
    EXPECT_EQ(c.train.optimizer, OptimizerKind::adam);
    const auto d = parse_run_config(Json::object());
    EXPECT_EQ(d.dataset.kind, "blobs");
    EXPECT_EQ(d.train.stage1_epochs, 25u);
}

TEST(Config, ErrorsNameTheKeyPath) {
    auto j = small_config();
    j["train"]["lrr"] = 1;
    EXPECT_NE(config_error(j).find("train.lrr"), std::string::npos);

    j = small_config();
    j["network"]["quantizer"] = "pact";
    EXPECT_NE(config_error(j).find("network.quantizer"), std::string::npos);

    j = small_config();
    j["network"]["init_bit"] = 16;
    EXPECT_NE(config_error(j).find("network.init_bit"), std::string::npos);

    j = small_config();
    j["dataset"]["n_train"] = "many";
    EXPECT_NE(config_error(j).find("dataset.n_train"), std::string::npos);

    j = small_config();
    j["targets"][0]["kind"] = "flops";
    EXPECT_NE(config_error(j).find("targets[0]"), std::string::npos);

    j = small_config();
    j["dataset"] = {{"kind", "idx"}, {"train_images", "a"}};
    EXPECT_NE(config_error(j).find("dataset.train_labels"), std::string::npos);

    j = small_config();
    j["analysis"]["hessian_probes"] = 1;
    EXPECT_NE(config_error(j).find("analysis.hessian_probes"), std::string::npos);

    j = small_config();
    j["train"]["lr"] = 0;
    EXPECT_NE(config_error(j).find("train.lr"), std::string::npos);

    EXPECT_NE(config_error(Json::array()).find("expected an object"), std::string::npos);
}

TEST(Config, CanonicalFormRoundTripsAndHashTracksContent) {
    const auto c = parse_run_config(small_config());
    const auto back = parse_run_config(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(config_hash(c).size(), 16u);

    auto j = small_config();
    j["seed"] = 4;
    EXPECT_NE(config_hash(parse_run_config(j)), config_hash(c));
    j = small_config();
    j["train"]["lr"] = 0.004;
    EXPECT_NE(config_hash(parse_run_config(j)), config_hash(c));
}

TEST(Config, Fnv1aKnownVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Config, MissingIdxFileNamesTheKey) {
    auto j = small_config();
    j["dataset"] = {{"kind", "idx"},
                    {"train_images", "nope-images"},
                    {"train_labels", "nope-labels"},
                    {"test_images", "nope-images"},
                    {"test_labels", "nope-labels"}};
    j["network"] = {{"kind", "cnn"}};
    const auto c = parse_run_config(j, fs::temp_directory_path());
    try {
        make_experiment(c);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("dataset.train_images"), std::string::npos);
    }
}

TEST(Config, SamplesParse) {
    const fs::path dir = fs::path(NIPQ_DIGITS_DIR).parent_path().parent_path() / "samples";
    std::size_t n = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        const auto c = load_run_config(entry.path());
        EXPECT_NO_THROW(make_experiment(c)) << entry.path();
        ++n;
    }
    EXPECT_GE(n, 4u);
}

// ---------------------------------------------------------------------------
// Command line

TEST(Cli, TrainWritesArtifactsDeterministically) {
    const auto dir = scratch("train");
    const auto cfg = write_config(dir, small_config());
    const auto r1 = cli("train --config " + cfg.string() + " --out " + (dir / "a").string(), dir);
    ASSERT_EQ(r1.code, 0) << r1.err;
    for (const char* f : {"metrics.csv", "metrics.jsonl", "summary.json", "checkpoint.json", "checkpoint.bin"})
        EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
    const auto r2 = cli("train --config " + cfg.string() + " --out " + (dir / "b").string(), dir);
    ASSERT_EQ(r2.code, 0) << r2.err;
    EXPECT_EQ(slurp(dir / "a" / "summary.json"), slurp(dir / "b" / "summary.json"));
    EXPECT_EQ(slurp(dir / "a" / "checkpoint.bin"), slurp(dir / "b" / "checkpoint.bin"));

    const auto hash = config_hash(load_run_config(cfg));
    const auto csv = slurp(dir / "a" / "metrics.csv");
    EXPECT_EQ(csv.rfind("# config_hash=" + hash + ", seed=3\n", 0), 0u);
    const auto summary = Json::parse(slurp(dir / "a" / "summary.json"));
    EXPECT_EQ(summary.at("config_hash"), hash);
    EXPECT_EQ(summary.at("seed"), 3);
    EXPECT_TRUE(summary.contains("bops"));
    EXPECT_TRUE(summary.contains("avg_bit_weight"));
    EXPECT_EQ(summary.at("layers").size(), 2u);
    std::istringstream lines(slurp(dir / "a" / "metrics.jsonl"));
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
        EXPECT_EQ(Json::parse(line).at("config_hash"), hash);
        ++n;
    }
    EXPECT_GT(n, 0u);

    const auto r3 = cli("train --config " + cfg.string() + " --seed 9 --out " + (dir / "c").string(), dir);
    ASSERT_EQ(r3.code, 0);
    EXPECT_EQ(Json::parse(slurp(dir / "c" / "summary.json")).at("seed"), 9);
}

TEST(Cli, ConfigErrorsExitWithTwo) {
    const auto dir = scratch("errors");
    auto j = small_config();
    j["train"]["epochs"] = 3;
    auto r = cli("train --config " + write_config(dir, j).string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("train.epochs"), std::string::npos);

    j = small_config();
    j["dataset"] = {{"kind", "idx"},
                    {"train_images", "missing.idx"},
                    {"train_labels", "missing.idx"},
                    {"test_images", "missing.idx"},
                    {"test_labels", "missing.idx"}};
    j["network"] = {{"kind", "cnn"}};
    r = cli("train --config " + write_config(dir, j).string(), dir);
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("dataset.train_images"), std::string::npos);

    std::ofstream(dir / "broken.json") << "{\"seed\": ";
    EXPECT_EQ(cli("train --config " + (dir / "broken.json").string(), dir).code, 2);
    EXPECT_EQ(cli("train --config " + (dir / "absent.json").string(), dir).code, 2);
    EXPECT_EQ(cli("", dir).code, 2);
    EXPECT_EQ(cli("frobnicate", dir).code, 2);
    EXPECT_EQ(cli("train", dir).code, 2);
    EXPECT_EQ(cli("--help", dir).code, 0);
}

TEST(Cli, AnalysisCommandsLeaveCheckpointUntouched) {
    const auto dir = scratch("analysis");
    const auto cfg = write_config(dir, small_config());
    ASSERT_EQ(cli("train --config " + cfg.string() + " --out " + (dir / "run").string(), dir).code, 0);
    const auto ckpt = dir / "run" / "checkpoint.json";
    const auto manifest = slurp(ckpt), blob = slurp(dir / "run" / "checkpoint.bin");
    const std::string common = " --config " + cfg.string() + " --checkpoint " + ckpt.string() + " --out " + (dir / "an").string();

    auto r = cli("eval" + common, dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto ev = Json::parse(slurp(dir / "an" / "eval.json"));
    const auto summary = Json::parse(slurp(dir / "run" / "summary.json"));
    EXPECT_EQ(ev.at("accuracy"), summary.at("final").at("accuracy"));

    r = cli("sweep" + common, dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto sweep = Json::parse(slurp(dir / "an" / "sweep.json"));
    EXPECT_EQ(sweep.at("baseline_metric"), ev.at("accuracy"));
    EXPECT_TRUE(fs::exists(dir / "an" / "sweep.csv"));
    EXPECT_EQ(cli("sweep" + common + " --factors 0.9,1.1", dir).code, 2);
    EXPECT_EQ(cli("sweep" + common + " --target bias", dir).code, 2);

    r = cli("landscape" + common + " --grid 3 --radius 0.2", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream mat(slurp(dir / "an" / "landscape.txt"));
    std::string header;
    std::getline(mat, header);
    const auto h = Json::parse(header);
    EXPECT_EQ(h.at("grid"), 3);
    EXPECT_EQ(h.at("config_hash"), summary.at("config_hash"));
    std::vector<double> cells;
    for (double v; mat >> v;) cells.push_back(v);
    ASSERT_EQ(cells.size(), 9u);
    EXPECT_NEAR(cells[4], ev.at("loss").get<double>(), 1e-6);

    r = cli("hessian" + common + " --probes 3", dir);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "an" / "hessian.jsonl"));
    EXPECT_EQ(cli("hessian" + common + " --probes 1", dir).code, 2);

    EXPECT_EQ(slurp(ckpt), manifest);
    EXPECT_EQ(slurp(dir / "run" / "checkpoint.bin"), blob);
}

TEST(Cli, MismatchedCheckpointNamesTensor) {
    const auto dir = scratch("mismatch");
    const auto cfg = write_config(dir, small_config());
    ASSERT_EQ(cli("train --config " + cfg.string() + " --out " + (dir / "run").string(), dir).code, 0);
    auto j = small_config();
    j["network"]["hidden"] = {12};
    const auto other = write_config(dir, j, "other.json");
    const auto r = cli("eval --config " + other.string() + " --checkpoint " + (dir / "run" / "checkpoint.json").string() +
                           " --out " + (dir / "e").string(),
                       dir);
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("fc0.weight"), std::string::npos) << r.err;
}

TEST(Cli, ExportRoundTripReproducesEvaluation) {
    const auto dir = scratch("export");
    const auto cfg = write_config(dir, small_config());
    ASSERT_EQ(cli("train --config " + cfg.string() + " --out " + (dir / "run").string(), dir).code, 0);
    const auto r = cli("export --checkpoint " + (dir / "run" / "checkpoint.json").string() + " --out " + (dir / "x").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto meta = Json::parse(slurp(dir / "x" / "export.json"));
    EXPECT_EQ(meta.at("format"), "nipq-export");
    EXPECT_TRUE(meta.contains("config_hash"));

    Network net = load_checkpoint(dir / "run" / "checkpoint.json");
    const auto e = make_experiment(load_run_config(cfg));
    const auto before = evaluate(net, e.test);
    apply_export(net, read_export(dir / "x" / "export.json"));
    const auto after = evaluate(net, e.test);
    EXPECT_EQ(after.accuracy, before.accuracy);
    EXPECT_EQ(after.loss, before.loss);
}

TEST(Cli, CompareIsOrderedAndJobIndependent) {
    const auto dir = scratch("compare");
    auto j = small_config();
    j["train"]["stage1_epochs"] = 2;
    j["train"]["warmup_epochs"] = 0;
    const auto cfg = write_config(dir, j);
    auto r = cli("compare --config " + cfg.string() + " --bits 3,4 --jobs 1 --out " + (dir / "one").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    r = cli("compare --config " + cfg.string() + " --bits 3,4 --jobs 3 --out " + (dir / "three").string(), dir);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(dir / "one" / "compare.csv");
    EXPECT_EQ(csv, slurp(dir / "three" / "compare.csv"));
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);
    std::getline(lines, line);
    EXPECT_EQ(line, "bits,variant,seed,metric");
    std::vector<std::string> keys;
    while (std::getline(lines, line)) keys.push_back(line.substr(0, line.rfind(',')));
    EXPECT_EQ(keys, (std::vector<std::string>{"3,truncation,3", "3,minmax,3", "3,truncation,4", "3,minmax,4", "4,truncation,3",
                                              "4,minmax,3", "4,truncation,4", "4,minmax,4"}));
    EXPECT_EQ(Json::parse(slurp(dir / "one" / "compare.json")).at("table").size(), 4u);
    EXPECT_EQ(cli("compare --config " + cfg.string() + " --bits 1", dir).code, 2);
}
