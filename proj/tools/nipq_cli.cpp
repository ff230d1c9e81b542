#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "nipq/nipq.hpp"

namespace fs = std::filesystem;
using namespace nipq;

namespace {

struct Options {
    std::string config, checkpoint, out, target;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
    std::vector<double> factors, bits;
    std::optional<std::size_t> probes, grid;
    std::optional<double> radius;
};

struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;

    Json json() const { return {{"config_hash", config_hash}, {"seed", seed}}; }
    std::string csv_header() const { return "# config_hash=" + config_hash + ", seed=" + std::to_string(seed) + "\n"; }
};

RunConfig load_config(const Options& o) {
    if (o.config.empty()) throw ConfigError("--config: required");
    RunConfig c = load_run_config(o.config);
    if (o.seed) c.seed = c.train.seed = *o.seed;
    return c;
}

fs::path out_dir(const Options& o, const RunConfig* c) {
    if (!o.out.empty()) return o.out;
    if (c) return fs::path(c->output_dir) / c->experiment;
    return fs::path(o.checkpoint).parent_path();
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

void write_json(const fs::path& p, const Json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

void write_jsonl(const fs::path& p, const std::vector<Json>& rows) {
    std::string s;
    for (const auto& r : rows) s += r.dump() + "\n";
    write_file_atomic(p, s);
}

Json eval_json(const EvalResult& e) {
    Json j = {{"loss", e.loss}, {"metric", e.metric()}, {"task", e.task == TaskKind::classification ? "classification" : "regression"}};
    if (e.task == TaskKind::classification) j["accuracy"] = e.accuracy;
    return j;
}

Json layers_json(Network& net) {
    Json out = Json::array();
    for (auto* l : net.quant_layers())
        out.push_back({{"name", l->name},
                       {"bit_w", deployed_weight_bits(*l)},
                       {"bit_a", deployed_input_bits(*l)},
                       {"bit_w_continuous", l->w_quant.enabled ? effective_bit_value(l->w_quant) : 32.0f},
                       {"bit_a_continuous", l->a_quant.enabled ? effective_bit_value(l->a_quant) : 0.0f},
                       {"alpha_w", l->w_quant.enabled ? effective_alpha_value(l->w_quant) : 0.0f},
                       {"alpha_a", l->a_quant.enabled ? effective_alpha_value(l->a_quant) : 0.0f}});
    return out;
}

/// Loads the checkpoint into the network the config describes, or into the network recorded
/// in the manifest when no spec is given.
Network checkpoint_network(const Options& o, CheckpointInfo& info, const NetworkSpec* spec = nullptr) {
    if (o.checkpoint.empty()) throw ConfigError("--checkpoint: required");
    if (!fs::exists(o.checkpoint)) throw ConfigError("--checkpoint: file not found: " + o.checkpoint);
    if (!spec) return load_checkpoint(o.checkpoint, &info);
    Network net = build_network(*spec, 0);
    info = load_checkpoint_into(net, o.checkpoint);
    return net;
}

int cmd_train(const Options& o) {
    const RunConfig cfg = load_config(o);
    const Provenance prov{config_hash(cfg), cfg.seed};
    const auto dir = out_dir(o, &cfg);
    const auto e = make_experiment(cfg);
    Network net = build_network(e.spec, cfg.seed);
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = train_two_stage(net, e.train, e.test, cfg.train);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::string csv = prov.csv_header() + "stage,epoch,split,mode,loss,metric,penalty,lr";
    for (auto* l : net.quant_layers())
        for (const char* f : {"bit_w", "bit_a", "alpha_w", "alpha_a"}) csv += "," + l->name + "." + f;
    csv += "\n";
    std::vector<Json> jsonl;
    for (const auto& r : res.records) {
        csv += std::to_string(r.stage) + "," + std::to_string(r.epoch) + "," + r.split + "," + r.mode + "," + num(r.loss) +
               "," + num(r.metric) + "," + num(r.penalty) + "," + num(r.lr);
        Json layers = Json::array();
        for (const auto& s : r.layers) {
            csv += "," + num(s.bit_w) + "," + num(s.bit_a) + "," + num(s.alpha_w) + "," + num(s.alpha_a);
            layers.push_back({{"name", s.name}, {"bit_w", s.bit_w}, {"bit_a", s.bit_a}, {"alpha_w", s.alpha_w}, {"alpha_a", s.alpha_a}});
        }
        csv += "\n";
        Json j = prov.json();
        j.update({{"stage", r.stage}, {"epoch", r.epoch}, {"split", r.split}, {"mode", r.mode}, {"loss", r.loss},
                  {"penalty", r.penalty}, {"lr", r.lr}, {"layers", layers}});
        j["metric"] = std::isnan(r.metric) ? Json(nullptr) : Json(r.metric);
        jsonl.push_back(std::move(j));
    }
    write_file_atomic(dir / "metrics.csv", csv);
    write_jsonl(dir / "metrics.jsonl", jsonl);

    const auto rs = resource_summary(net);
    Json summary = prov.json();
    summary.update({{"experiment", cfg.experiment},
                    {"method", to_string(cfg.train.method)},
                    {"final", eval_json(res.final_eval)},
                    {"layers", layers_json(net)},
                    {"avg_bit_weight", rs.avg_bit_weight},
                    {"avg_bit_activation", rs.avg_bit_activation},
                    {"bops", rs.bops},
                    {"bops_fp32", uniform_bops(net, 32)}});
    if (res.transition_eval) summary["transition"] = eval_json(*res.transition_eval);
    write_json(dir / "summary.json", summary);
    write_json(dir / "config.json", to_json(cfg));
    const std::size_t steps = (cfg.train.stage1_epochs + cfg.train.stage2_epochs) *
                              ((e.train.size() + cfg.train.batch_size - 1) / cfg.train.batch_size);
    save_checkpoint(net, dir / "checkpoint.json", {prov.config_hash, prov.seed, to_string(cfg.train.optimizer), steps});
    std::cout << "final " << (res.final_eval.task == TaskKind::classification ? "accuracy " : "mse ")
              << num(res.final_eval.metric()) << "  avg_bit_w " << num(rs.avg_bit_weight) << "  bops " << rs.bops << "  ("
              << num(seconds) << " s)\n"
              << "wrote " << dir.string() << "\n";
    return 0;
}

int cmd_eval(const Options& o) {
    const RunConfig cfg = load_config(o);
    const auto e = make_experiment(cfg);
    CheckpointInfo info;
    Network net = checkpoint_network(o, info, &e.spec);
    const auto ev = evaluate(net, e.test);
    Json j = Provenance{info.config_hash, info.seed}.json();
    j.update(eval_json(ev));
    j["split"] = e.test.split;
    j["checkpoint"] = o.checkpoint;
    write_json(out_dir(o, &cfg) / "eval.json", j);
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_sweep(const Options& o) {
    const RunConfig cfg = load_config(o);
    const auto factors = o.factors.empty() ? cfg.analysis.sweep_factors : o.factors;
    if (std::find(factors.begin(), factors.end(), 1.0) == factors.end()) throw ConfigError("--factors: must include 1.0");
    SweepTarget target;
    try {
        target = parse_sweep_target(o.target.empty() ? cfg.analysis.sweep_target : o.target);
    } catch (const Error& err) {
        throw ConfigError(std::string("--target: ") + err.what());
    }
    const auto e = make_experiment(cfg);
    CheckpointInfo info;
    Network net = checkpoint_network(o, info, &e.spec);
    const auto r = robustness_sweep(net, e.test, factors, target);
    const Provenance prov{info.config_hash, info.seed};
    const auto dir = out_dir(o, &cfg);
    std::string csv = prov.csv_header() + "target,factor,metric,loss\n";
    std::vector<Json> rows;
    for (std::size_t i = 0; i < r.factors.size(); ++i) {
        csv += std::string(to_string(target)) + "," + num(r.factors[i]) + "," + num(r.metric[i]) + "," + num(r.loss[i]) + "\n";
        Json j = prov.json();
        j.update({{"target", to_string(target)}, {"factor", r.factors[i]}, {"metric", r.metric[i]}, {"loss", r.loss[i]}});
        rows.push_back(std::move(j));
    }
    write_file_atomic(dir / "sweep.csv", csv);
    write_jsonl(dir / "sweep.jsonl", rows);
    Json s = prov.json();
    s.update({{"target", to_string(target)}, {"baseline_metric", r.baseline_metric}, {"integrated_drop_0.8_1.2", integrated_drop(r)}});
    write_json(dir / "sweep.json", s);
    std::cout << s.dump() << "\n";
    return 0;
}

int cmd_landscape(const Options& o) {
    const RunConfig cfg = load_config(o);
    const std::size_t grid = o.grid.value_or(cfg.analysis.landscape_grid);
    const double radius = o.radius.value_or(cfg.analysis.landscape_radius);
    if (grid == 0) throw ConfigError("--grid: must be positive");
    const auto e = make_experiment(cfg);
    CheckpointInfo info;
    Network net = checkpoint_network(o, info, &e.spec);
    RngStream rng(cfg.seed, 0x1a4d);
    const auto r = landscape_slice(net, e.test, grid, radius, rng);
    const Provenance prov{info.config_hash, info.seed};
    const auto dir = out_dir(o, &cfg);
    std::string csv = prov.csv_header() + "a,b,loss\n";
    std::vector<Json> rows;
    for (std::size_t i = 0; i < grid; ++i)
        for (std::size_t j = 0; j < grid; ++j) {
            const double l = r.loss[i * grid + j];
            csv += num(r.coords[i]) + "," + num(r.coords[j]) + "," + num(l) + "\n";
            Json row = prov.json();
            row.update({{"a", r.coords[i]}, {"b", r.coords[j]}, {"loss", l}});
            rows.push_back(std::move(row));
        }
    write_file_atomic(dir / "landscape.csv", csv);
    write_jsonl(dir / "landscape.jsonl", rows);
    Json header = prov.json();
    header.update({{"grid", grid}, {"radius", radius}, {"coords", r.coords}, {"center_loss", r.center_loss},
                   {"mean_increase", r.mean_increase(radius)}, {"layout", "row a, column b"}});
    std::string matrix = header.dump() + "\n";
    for (std::size_t i = 0; i < grid; ++i) {
        for (std::size_t j = 0; j < grid; ++j) matrix += (j ? " " : "") + num(r.loss[i * grid + j]);
        matrix += "\n";
    }
    write_file_atomic(dir / "landscape.txt", matrix);
    std::cout << "center loss " << num(r.center_loss) << "  mean increase " << num(r.mean_increase(radius)) << "\n";
    return 0;
}

int cmd_hessian(const Options& o) {
    const RunConfig cfg = load_config(o);
    const std::size_t probes = o.probes.value_or(cfg.analysis.hessian_probes);
    if (probes < 2) throw ConfigError("--probes: must be at least 2, got " + std::to_string(probes));
    const auto e = make_experiment(cfg);
    CheckpointInfo info;
    Network net = checkpoint_network(o, info, &e.spec);
    RngStream rng(cfg.seed, 0x4e55);
    const auto rep = sensitivity_report(net, e.train, probes, rng);
    const Provenance prov{info.config_hash, info.seed};
    const auto dir = out_dir(o, &cfg);
    std::string csv = prov.csv_header() + "layer,trace,trace_per_element,std_error,bit_w\n";
    std::vector<Json> rows;
    for (const auto& r : rep.rows) {
        csv += r.name + "," + num(r.trace) + "," + num(r.trace_per_element) + "," + num(r.std_error) + "," +
               std::to_string(r.bit_w) + "\n";
        Json j = prov.json();
        j.update({{"layer", r.name}, {"trace", r.trace}, {"trace_per_element", r.trace_per_element},
                  {"std_error", r.std_error}, {"bit_w", r.bit_w}});
        rows.push_back(std::move(j));
    }
    write_file_atomic(dir / "hessian.csv", csv);
    write_jsonl(dir / "hessian.jsonl", rows);
    Json s = prov.json();
    s.update({{"n_probes", probes}, {"rank_correlation", rep.rank_correlation}});
    write_json(dir / "hessian.json", s);
    std::cout << csv;
    return 0;
}

int cmd_compare(const Options& o) {
    const RunConfig cfg = load_config(o);
    const auto bits = o.bits.empty() ? cfg.analysis.compare_bits : o.bits;
    for (double b : bits)
        if (!(b > 2.0 && b < 14.0)) throw ConfigError("--bits: " + num(b) + " outside (2, 14)");
    if (o.jobs == 0) throw ConfigError("--jobs: must be positive");
    struct Task {
        double bits;
        std::uint64_t seed;
        QuantVariant variant;
    };
    std::vector<Task> tasks;
    for (double b : bits)
        for (std::size_t s = 0; s < cfg.analysis.compare_seeds; ++s)
            for (auto v : {QuantVariant::truncation, QuantVariant::minmax}) tasks.push_back({b, cfg.seed + s, v});
    std::vector<CompareRow> rows(tasks.size());
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto worker = [&] {
        for (std::size_t i; (i = next++) < tasks.size();) {
            try {
                rows[i] = compare_run(cfg, tasks[i].bits, tasks[i].seed, tasks[i].variant);
            } catch (...) {
                std::lock_guard lk(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t j = 1; j < std::min(o.jobs, tasks.size()); ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);

    const Provenance prov{config_hash(cfg), cfg.seed};
    const auto dir = out_dir(o, &cfg);
    std::string csv = prov.csv_header() + "bits,variant,seed,metric\n";
    std::vector<Json> out;
    std::map<std::pair<double, std::string>, std::vector<double>> groups;
    for (const auto& r : rows) {
        csv += num(r.bits) + "," + r.variant + "," + std::to_string(r.seed) + "," + num(r.metric) + "\n";
        Json j = prov.json();
        j.update({{"bits", r.bits}, {"variant", r.variant}, {"run_seed", r.seed}, {"metric", r.metric}});
        out.push_back(std::move(j));
        groups[{r.bits, r.variant}].push_back(r.metric);
    }
    write_file_atomic(dir / "compare.csv", csv);
    write_jsonl(dir / "compare.jsonl", out);
    Json table = Json::array();
    for (const auto& [key, v] : groups) {
        double m = 0, sd = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) sd += (x - m) * (x - m);
        sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
        table.push_back({{"bits", key.first}, {"variant", key.second}, {"mean", m}, {"std", sd}, {"n", v.size()}});
        std::cout << num(key.first) << "-bit " << key.second << ": " << num(m) << " +- " << num(sd) << "\n";
    }
    Json s = prov.json();
    s["table"] = table;
    write_json(dir / "compare.json", s);
    return 0;
}

int cmd_export(const Options& o) {
    CheckpointInfo info;
    Network net = checkpoint_network(o, info);
    const auto codes = export_codes(net);
    const auto dir = out_dir(o, nullptr);
    Json extra = Provenance{info.config_hash, info.seed}.json();
    extra["source"] = o.checkpoint;
    write_export(codes, dir / "export.json", extra);
    std::cout << "exported " << codes.size() << " tensors to " << (dir / "export.json").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Noise-injection quantization-aware training lab"};
    app.require_subcommand(1);
    Options o;

    auto add_config = [&](CLI::App* c, bool required) {
        auto* opt = c->add_option("--config", o.config, "run configuration (JSON)");
        if (required) opt->required();
    };
    auto add_common = [&](CLI::App* c) {
        c->add_option("--out", o.out, "output directory");
        c->add_option("--seed", o.seed, "override the config seed");
    };
    auto add_checkpoint = [&](CLI::App* c) { c->add_option("--checkpoint", o.checkpoint, "checkpoint manifest")->required(); };

    auto* train = app.add_subcommand("train", "two-stage training run");
    add_config(train, true);
    add_common(train);
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the config's test split");
    add_config(eval, true);
    add_checkpoint(eval);
    add_common(eval);
    auto* sweep = app.add_subcommand("sweep", "accuracy under scaled truncation boundaries");
    add_config(sweep, true);
    add_checkpoint(sweep);
    add_common(sweep);
    sweep->add_option("--factors", o.factors, "scale factors (must include 1.0)")->delimiter(',');
    sweep->add_option("--target", o.target, "activation | weight | both");
    auto* land = app.add_subcommand("landscape", "2-D loss slice along filter-normalized directions");
    add_config(land, true);
    add_checkpoint(land);
    add_common(land);
    land->add_option("--grid", o.grid, "points per axis");
    land->add_option("--radius", o.radius, "half-width of the slice");
    auto* hess = app.add_subcommand("hessian", "per-layer Hutchinson traces and assigned bits");
    add_config(hess, true);
    add_checkpoint(hess);
    add_common(hess);
    hess->add_option("--probes", o.probes, "Rademacher probes (>= 2)");
    auto* cmp = app.add_subcommand("compare", "truncation versus min-max at fixed weight bit-widths");
    add_config(cmp, true);
    add_common(cmp);
    cmp->add_option("--bits", o.bits, "bit-widths")->delimiter(',');
    cmp->add_option("--jobs", o.jobs, "parallel runs");
    auto* exp = app.add_subcommand("export", "integer weight codes plus metadata");
    add_checkpoint(exp);
    exp->add_option("--out", o.out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(o);
        if (eval->parsed()) return cmd_eval(o);
        if (sweep->parsed()) return cmd_sweep(o);
        if (land->parsed()) return cmd_landscape(o);
        if (hess->parsed()) return cmd_hessian(o);
        if (cmp->parsed()) return cmd_compare(o);
        if (exp->parsed()) return cmd_export(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
