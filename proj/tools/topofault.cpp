// Command-line front end: gen, predict, eval, grid, report.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "topofault/config.hpp"
#include "topofault/errors.hpp"
#include "topofault/evaluation.hpp"
#include "topofault/topo_synth.hpp"

namespace fs = std::filesystem;
using namespace topofault;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr const char* kReportSchema = "topofault.report/1";
constexpr const char* kGridSchema = "topofault.grid/1";
constexpr const char* kPredictionSchema = "topofault.prediction/1";

enum Exit { kOk = 0, kIrrecoverable = 1, kUsage = 2, kBadInput = 3, kSchema = 4, kFailed = 5 };

/// Output path problems are usage errors, not input errors.
struct Unwritable : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Unwritable("cannot write '" + p.string() + "'");
    return out;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw Unwritable("cannot create directory '" + dir.string() + "'");
}

void write_text(const fs::path& p, const std::string& text) {
    auto out = open_out(p);
    out << text;
    if (!out) throw Unwritable("write failed for '" + p.string() + "'");
}

template <class F>
std::string render(F&& f) {
    std::ostringstream s;
    f(s);
    return s.str();
}

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<unsigned> threads;
};

RunConfig load_config(const Common& c) {
    RunConfig cfg;
    cfg.threads = std::max(1u, std::thread::hardware_concurrency());
    if (!c.config_path.empty()) apply_settings(cfg, read_settings_file(c.config_path));
    apply_settings(cfg, env_settings());
    Settings flags;
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected section.key=value, got '" + kv + "'");
        flags[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    try {
        apply_settings(cfg, flags);
    } catch (const InvalidInput& e) {
        throw CLI::ValidationError("--set", e.what());
    }
    if (c.threads) cfg.threads = *c.threads;
    cfg.normalize();
    return cfg;
}

EvalConfig eval_config(const RunConfig& c) {
    return {c.thresholds, c.bgmm, c.esn, c.quadrature, c.threads};
}

// ---- gen ----

struct GenArgs {
    std::size_t robots = 10;
    std::size_t records = 4600;
    uint64_t seed = 0;
    std::string out;
};

int run_gen(const Common& common, const GenArgs& a) {
    if (a.records == 0) throw CLI::ValidationError("--records", "must be at least 1");
    if (a.robots < 2) throw CLI::ValidationError("--robots", "must be at least 2");
    const RunConfig cfg = load_config(common);
    auto out = open_out(a.out);
    const Dataset ds = generate_dataset(a.robots, a.records, cfg.sim, a.seed, cfg.threads);
    write_dataset(out, ds);
    out.close();
    if (!out) throw Unwritable("write failed for '" + a.out + "'");

    std::map<std::string, std::size_t> kinds;
    std::size_t recoverable = 0;
    for (const auto& r : ds.records) {
        for (auto k : r.fault.kinds) ++kinds[to_string(k)];
        recoverable += r.label == Verdict::Recoverable;
    }
    std::cout << "records " << ds.records.size() << "\n";
    for (const auto& [k, n] : kinds) std::cout << "fault " << k << " " << n << "\n";
    std::cout << "recoverable " << recoverable << "\nirrecoverable " << ds.records.size() - recoverable << "\n"
              << "redraws " << ds.header.redraws << "\n";
    return kOk;
}

// ---- predict ----

struct PredictArgs {
    std::string dataset;
    long record = -1;
    std::string snapshot;
    std::string fault;
    std::string fault_kind = "collision";
};

nlohmann::json read_json(const std::string& path) {
    try {
        if (path == "-") return nlohmann::json::parse(std::cin);
        std::ifstream in(path);
        if (!in) throw InvalidInput("cannot open '" + path + "'");
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("malformed JSON in '" + path + "': " + e.what());
    }
}

std::vector<RobotId> parse_ids(const std::string& s) {
    std::vector<RobotId> ids;
    std::stringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        try {
            std::size_t used = 0;
            const long v = std::stol(tok, &used);
            if (used != tok.size() || v < 0) throw std::invalid_argument(tok);
            ids.push_back(static_cast<RobotId>(v));
        } catch (const std::exception&) {
            throw CLI::ValidationError("--fault", "expected comma-separated robot ids, got '" + s + "'");
        }
    }
    if (ids.empty()) throw CLI::ValidationError("--fault", "no robot ids");
    return ids;
}

/// A snapshot file holds "frames" (as in dataset records) or a single "positions" list, plus
/// optional "topology" and "fault". A missing topology is synthesized on the last frame.
DatasetRecord snapshot_record(const nlohmann::json& j, const RunConfig& cfg) {
    try {
        DatasetRecord r;
        if (j.contains("frames")) {
            for (const auto& f : j.at("frames")) {
                Frame fr;
                fr.time = f.value("t", 0.0);
                const auto flat = f.at("p").get<std::vector<double>>();
                if (flat.size() % 2) throw InvalidInput("odd coordinate count in frame");
                for (std::size_t k = 0; k < flat.size(); k += 2) fr.positions.push_back({flat[k], flat[k + 1]});
                r.window.push_back(std::move(fr));
            }
        } else {
            Frame fr;
            for (const auto& p : j.at("positions")) fr.positions.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
            r.window.push_back(std::move(fr));
        }
        if (r.window.empty() || r.window.back().positions.size() < 2) throw InvalidInput("snapshot needs two or more robots");
        if (j.contains("topology")) {
            std::vector<Edge> edges;
            for (const auto& e : j.at("topology")) edges.emplace_back(e.at(0).get<RobotId>(), e.at(1).get<RobotId>());
            r.topology = Topology(r.robots(), edges);
        } else {
            r.topology = synthesize_topology(NetworkSnapshot(r.final_frame(), cfg.thresholds.delta), cfg.sim.synth);
        }
        if (j.contains("fault")) {
            r.fault.robots = j.at("fault").at("robots").get<std::vector<RobotId>>();
            for (const auto& k : j.at("fault").at("kinds")) r.fault.kinds.push_back(fault_kind_from_string(k.get<std::string>()));
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidInput(std::string("malformed snapshot: ") + e.what());
    }
}

int run_predict(const Common& common, const PredictArgs& a) {
    const bool from_dataset = !a.dataset.empty();
    if (from_dataset == !a.snapshot.empty()) throw CLI::ValidationError("predict", "give exactly one of --dataset or --snapshot");
    if (from_dataset && a.record < 0) throw CLI::ValidationError("--record", "required with --dataset");
    const RunConfig cfg = load_config(common);

    DatasetRecord r;
    if (from_dataset) {
        Dataset ds = read_dataset(a.dataset);
        if (static_cast<std::size_t>(a.record) >= ds.records.size())
            throw InvalidInput("record " + std::to_string(a.record) + " out of range (" + std::to_string(ds.records.size()) + ")");
        r = std::move(ds.records[static_cast<std::size_t>(a.record)]);
    } else {
        r = snapshot_record(read_json(a.snapshot), cfg);
    }
    if (!a.fault.empty()) {
        const auto kind = fault_kind_from_string(a.fault_kind);
        r.fault = FaultEvent{};
        for (auto id : parse_ids(a.fault)) {
            r.fault.robots.push_back(id);
            r.fault.kinds.push_back(kind);
        }
    }
    if (r.fault.robots.empty()) throw CLI::ValidationError("--fault", "the snapshot names no faulty robot");
    r.fault.validate(r.robots());

    const auto res = predict(r.window, r.topology, r.fault, cfg.thresholds, cfg.bgmm, {cfg.threads, cfg.quadrature});
    nlohmann::json out = to_json(res);
    out["schema"] = kPredictionSchema;
    out["config"] = to_json(cfg);
    std::cout << out.dump(2) << "\n";
    return res.verdict == Verdict::Recoverable ? kOk : kIrrecoverable;
}

// ---- eval ----

struct SplitArgs {
    bool fit = false;  // rescale the split to the dataset size
};

SplitSpec effective_split(const RunConfig& cfg, std::size_t n, const SplitArgs& s) {
    SplitSpec spec = cfg.split;
    if (s.fit) {
        const double total = static_cast<double>(spec.total());
        spec.train = static_cast<std::size_t>(static_cast<double>(n) * static_cast<double>(cfg.split.train) / total);
        spec.validation = static_cast<std::size_t>(static_cast<double>(n) * static_cast<double>(cfg.split.validation) / total);
        spec.test = n - spec.train - spec.validation;
        if (spec.train < 2 || spec.test < 1) throw InvalidInput("dataset too small to split");
    }
    return spec;
}

nlohmann::json split_json(const SplitSpec& s) {
    return {{"train", s.train}, {"validation", s.validation}, {"test", s.test}, {"seed", s.seed}};
}

struct EvalArgs {
    std::string dataset;
    std::string method = "all";
    std::string out;
    bool noise = false;
    uint64_t noise_seed = 0;
    double noise_scale = 0.1;
    SplitArgs split;
};

int run_eval(const Common& common, const EvalArgs& a) {
    const RunConfig cfg = load_config(common);
    ensure_dir(a.out);
    std::vector<Method> methods;
    if (a.method == "all") methods = {Method::Bgmm, Method::Mlr, Method::Esn};
    else methods = {method_from_string(a.method)};

    Dataset ds = read_dataset(a.dataset);
    const std::size_t robots = ds.header.robots;
    const nlohmann::json dataset_info = {{"schema", ds.header.schema}, {"robots", robots}, {"records", ds.header.records},
                                         {"seed", ds.header.seed}, {"config", to_json(ds.header.config)}};
    const SplitSpec spec = effective_split(cfg, ds.records.size(), a.split);
    const Partition part(std::move(ds.records), spec);
    const EvalConfig ec = eval_config(cfg);

    for (Method m : methods) {
        const std::string stem = std::string("eval_") + to_string(m);
        nlohmann::json report = {{"schema", kReportSchema}, {"method", to_string(m)}, {"robots", robots},
                                 {"dataset", dataset_info}, {"split", split_json(spec)}, {"config", to_json(cfg)}};
        MetricsReport nominal;
        if (a.noise) {
            const auto study = noise_study(m, part.train(), part.test(), ec, a.noise_seed, a.noise_scale);
            nominal = study.nominal;
            report["noisy"] = to_json(study.noisy);
            report["noise"] = {{"seed", a.noise_seed}, {"scale", a.noise_scale}};
            write_text(fs::path(a.out) / (stem + "_noisy_metrics.csv"), render([&](auto& s) { write_metrics_csv(s, study.noisy); }));
        } else {
            nominal = evaluate(method_outcomes(m, part.train(), part.test(), ec));
        }
        report["nominal"] = to_json(nominal);
        write_text(fs::path(a.out) / (stem + ".json"), report.dump(2) + "\n");
        write_text(fs::path(a.out) / (stem + "_metrics.csv"), render([&](auto& s) { write_metrics_csv(s, nominal); }));
        write_text(fs::path(a.out) / (stem + "_confusion.csv"), render([&](auto& s) { write_confusion_csv(s, nominal); }));
        write_text(fs::path(a.out) / (stem + "_orphans.csv"), render([&](auto& s) { write_orphan_histogram_csv(s, nominal); }));
        std::cout << to_string(m) << " balanced_accuracy " << std::fixed << std::setprecision(1)
                  << nominal.rates.balanced_accuracy << " logloss " << std::setprecision(3) << nominal.logloss_total;
        if (report.contains("noisy")) std::cout << " noisy_logloss " << report["noisy"]["logloss"]["total"].get<double>();
        std::cout << "\n";
    }
    return kOk;
}

// ---- grid ----

struct GridArgs {
    std::string dataset;
    std::string out;
    std::string thresholds = "table";
    std::string bgmm = "single";
    bool count_only = false;
    SplitArgs split;
};

ThresholdGrid threshold_grid(const std::string& which, const RunConfig& cfg) {
    if (which == "table") return ThresholdGrid::table();
    if (which == "single") {
        const auto& t = cfg.thresholds;
        ThresholdGrid g;
        g.delta = {t.delta};
        g.omega = {t.omega};
        g.lambda = {t.lambda};
        g.mass_d = {t.mass_d};
        g.q_b = {t.q_b};
        g.q_d = {t.q_d};
        return g;
    }
    return threshold_grid_from_json(read_json(which));
}

BgmmGrid bgmm_grid(const std::string& which, const RunConfig& cfg) {
    if (which == "table") return BgmmGrid::table();
    if (which == "single") {
        BgmmGrid g;
        g.max_components = {cfg.bgmm.max_components};
        g.covariance = {cfg.bgmm.covariance_type};
        g.n_init = {cfg.bgmm.n_init};
        g.prior = {cfg.bgmm.prior_type};
        g.gamma0 = {cfg.bgmm.gamma0};
        g.max_iter = {cfg.bgmm.max_iter};
        return g;
    }
    return bgmm_grid_from_json(read_json(which));
}

int run_grid(const Common& common, const GridArgs& a) {
    const RunConfig cfg = load_config(common);
    const auto tg = threshold_grid(a.thresholds, cfg);
    const auto bg = bgmm_grid(a.bgmm, cfg);
    const auto cells = enumerate_grid(tg, bg, cfg.bgmm);
    std::cout << "cells " << cells.size() << "\n";
    if (a.count_only) return kOk;
    if (a.dataset.empty() || a.out.empty()) throw CLI::ValidationError("grid", "--dataset and --out are required");
    ensure_dir(a.out);

    Dataset ds = read_dataset(a.dataset);
    const SplitSpec spec = effective_split(cfg, ds.records.size(), a.split);
    const Partition part(std::move(ds.records), spec);
    const auto result = grid_search(part.pool(), cells, cfg.grid);

    nlohmann::json out = to_json(result);
    out["schema"] = kGridSchema;
    out["config"] = to_json(cfg);
    out["split"] = split_json(spec);
    out["grids"] = {{"thresholds", to_json(tg)}, {"bgmm", to_json(bg)}};
    write_text(fs::path(a.out) / "grid.json", out.dump(2) + "\n");
    write_text(fs::path(a.out) / "grid.csv", render([&](auto& s) { write_grid_csv(s, result); }));
    const auto& best = result.cells.at(result.best);
    std::cout << "selected " << result.best << " " << to_json(best.cell.thresholds).dump() << " balanced_accuracy "
              << std::fixed << std::setprecision(1) << best.balanced_accuracy << " logloss " << std::setprecision(3)
              << best.logloss << "\n";
    return kOk;
}

// ---- report ----

struct ReportArgs {
    std::vector<std::string> runs;
    std::string out;
};

int run_report(const ReportArgs& a) {
    struct Column {
        std::string name;
        MetricsReport nominal;
        std::optional<MetricsReport> noisy;
    };
    std::vector<Column> cols;
    for (const auto& path : a.runs) {
        const auto j = read_json(path);
        if (j.value("schema", "") != kReportSchema)
            throw SchemaMismatch("'" + path + "' is not a " + std::string(kReportSchema) + " file");
        try {
            Column c{j.at("method").get<std::string>() + " n=" + std::to_string(j.at("robots").get<std::size_t>()),
                     metrics_from_json(j.at("nominal")), std::nullopt};
            if (j.contains("noisy")) c.noisy = metrics_from_json(j.at("noisy"));
            cols.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw InvalidInput("malformed report '" + path + "': " + e.what());
        }
    }
    auto pct = [](double v) { return render([&](auto& s) { s << std::fixed << std::setprecision(1) << v; }); };
    auto ll = [](double v) { return render([&](auto& s) { s << std::fixed << std::setprecision(3) << v; }); };
    std::vector<std::pair<std::string, std::function<std::string(const Column&)>>> rows = {
        {"TPR (%)", [&](const Column& c) { return pct(c.nominal.rates.tpr); }},
        {"TNR (%)", [&](const Column& c) { return pct(c.nominal.rates.tnr); }},
        {"Balanced accuracy (%)", [&](const Column& c) { return pct(c.nominal.rates.balanced_accuracy); }},
        {"Precision (%)", [&](const Column& c) { return pct(c.nominal.rates.precision); }},
        {"F1 (%)", [&](const Column& c) { return pct(c.nominal.rates.f1); }},
        {"Positive-class average logloss", [&](const Column& c) { return ll(c.nominal.logloss_positive); }},
        {"Negative-class average logloss", [&](const Column& c) { return ll(c.nominal.logloss_negative); }},
        {"Total average logloss", [&](const Column& c) { return ll(c.nominal.logloss_total); }},
        {"Noisy positive-class average logloss",
         [&](const Column& c) { return c.noisy ? ll(c.noisy->logloss_positive) : std::string("-"); }},
        {"Noisy negative-class average logloss",
         [&](const Column& c) { return c.noisy ? ll(c.noisy->logloss_negative) : std::string("-"); }},
        {"Noisy total average logloss", [&](const Column& c) { return c.noisy ? ll(c.noisy->logloss_total) : std::string("-"); }},
    };
    std::ostringstream csv, md;
    csv << "metric";
    md << "| metric |";
    for (const auto& c : cols) {
        csv << "," << c.name;
        md << " " << c.name << " |";
    }
    csv << "\n";
    md << "\n|---|";
    for (std::size_t k = 0; k < cols.size(); ++k) md << "---|";
    md << "\n";
    for (const auto& [label, cell] : rows) {
        csv << label;
        md << "| " << label << " |";
        for (const auto& c : cols) {
            csv << "," << cell(c);
            md << " " << cell(c) << " |";
        }
        csv << "\n";
        md << "\n";
    }
    if (!a.out.empty()) write_text(a.out, csv.str());
    std::cout << md.str();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topology (ir)recoverability prediction toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version",
                         std::string("topofault ") + kVersion + "\ndataset schema " + kDatasetSchema + "\nreport schema " +
                             kReportSchema + "\ngrid schema " + kGridSchema + "\nprediction schema " + kPredictionSchema);
    Common common;
    app.add_option("--config", common.config_path, "sectioned key = value config file");
    app.add_option("--set", common.sets, "override a config key: section.key=value (repeatable)");
    app.add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a labelled faulted-network dataset (JSONL)");
    g->add_option("--robots", gen.robots, "robots per network")->required();
    g->add_option("--records", gen.records, "records to generate")->required();
    g->add_option("--seed", gen.seed, "root seed");
    g->add_option("--out", gen.out, "output path")->required();

    PredictArgs pred;
    auto* p = app.add_subcommand("predict", "predict (ir)recoverability for one instance; exit 0 recoverable, 1 irrecoverable");
    p->add_option("--dataset", pred.dataset, "dataset path");
    p->add_option("--record", pred.record, "record index within the dataset");
    p->add_option("--snapshot", pred.snapshot, "snapshot JSON path, '-' for stdin");
    p->add_option("--fault", pred.fault, "faulty robot ids, comma separated (overrides the input's fault)");
    p->add_option("--fault-kind", pred.fault_kind, "collision or congestion");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "split, score and write metric reports");
    e->add_option("--dataset", ev.dataset)->required();
    e->add_option("--method", ev.method, "bgmm, mlr, esn or all");
    e->add_option("--out", ev.out, "output directory")->required();
    e->add_flag("--noise", ev.noise, "also score a perturbed copy of the test set");
    e->add_option("--noise-seed", ev.noise_seed);
    e->add_option("--noise-scale", ev.noise_scale);
    e->add_flag("--split-fit", ev.split.fit, "scale the configured split proportions to the dataset size");

    GridArgs gr;
    auto* gs = app.add_subcommand("grid", "grid-search cross-validation");
    gs->add_option("--dataset", gr.dataset);
    gs->add_option("--out", gr.out, "output directory");
    gs->add_option("--thresholds", gr.thresholds, "table, single or a JSON grid file");
    gs->add_option("--bgmm-grid", gr.bgmm, "single, table or a JSON grid file");
    gs->add_flag("--count-only", gr.count_only, "print the number of cells and stop");
    gs->add_flag("--split-fit", gr.split.fit, "scale the configured split proportions to the dataset size");

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "side-by-side table of eval reports");
    r->add_option("--run", rep.runs, "eval JSON report (repeatable)")->required();
    r->add_option("--out", rep.out, "CSV output path");

    auto* cf = app.add_subcommand("config", "print the effective configuration in config-file format");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*g) return run_gen(common, gen);
        if (*p) return run_predict(common, pred);
        if (*e) return run_eval(common, ev);
        if (*gs) return run_grid(common, gr);
        if (*r) return run_report(rep);
        if (*cf) {
            std::cout << dump_settings(load_config(common));
            return kOk;
        }
    } catch (const CLI::Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsage;
    } catch (const Unwritable& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsage;
    } catch (const SchemaMismatch& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kSchema;
    } catch (const InvalidInput& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kBadInput;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kFailed;
    }
    return kUsage;
}
