// Command-line driver: run single analysis tasks or whole scenario files and
// emit deterministic reports.

#include <cstdint>
#include <exception>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "projmeas/projmeas.hpp"

namespace {

struct Cli {
    std::uint64_t seed = 1;
    bool seed_passed = false;
    int workers = 1;
    std::string out;
    std::string mode;
    std::string ensemble;
    std::string scenario_path;
};

/// Collects string-valued task parameters so every subcommand can forward
/// exactly the flags the user passed into a TaskSpec.
class ParamSet {
  public:
    void add(CLI::App* sub, const std::string& key, const std::string& help) {
        auto storage = std::make_shared<std::string>();
        CLI::Option* opt = sub->add_option("--" + key, *storage, help);
        entries_.push_back({key, storage, opt});
    }

    [[nodiscard]] std::map<std::string, std::pair<std::string, int>> collect() const {
        std::map<std::string, std::pair<std::string, int>> out;
        for (const auto& e : entries_)
            if (e.opt->count() > 0) out.emplace(e.key, std::make_pair(*e.storage, 0));
        return out;
    }

  private:
    struct Entry {
        std::string key;
        std::shared_ptr<std::string> storage;
        CLI::Option* opt;
    };
    std::vector<Entry> entries_;
};

int run_single_task(const Cli& cli, const std::string& task, const ParamSet& params) {
    projmeas::Scenario sc;
    sc.seed = cli.seed;
    sc.seed_set = true;
    sc.ensemble_path = cli.ensemble;
    sc.mode = cli.mode;
    sc.tasks.push_back(projmeas::TaskSpec{task, 0, params.collect()});

    projmeas::RunOverrides ov;
    ov.out_dir = cli.out.empty() ? ("projmeas-" + task) : cli.out;
    ov.workers = cli.workers;
    const projmeas::RunOutcome outcome = projmeas::run_scenario(sc, ov);
    for (const auto& t : outcome.tasks)
        std::cout << t.name << ": " << t.verdict << " -> " << outcome.out_dir << "/"
                  << t.report_file << "\n";
    return outcome.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stationary-measure laboratory for random matrix products"};
    app.require_subcommand(1);

    Cli cli;
    app.add_option("--seed", cli.seed, "root seed for all randomness")
        ->each([&cli](const std::string&) { cli.seed_passed = true; });
    app.add_option("--workers", cli.workers, "worker threads for trial-parallel stages")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", cli.out, "output directory");
    app.add_option("--mode", cli.mode, "arithmetic mode override")
        ->check(CLI::IsMember({"float", "rational"}));

    struct SubDef {
        CLI::App* sub = nullptr;
        ParamSet params;
    };
    std::map<std::string, SubDef> subs;

    auto make_sub = [&](const std::string& name, const std::string& desc,
                        const std::vector<std::pair<std::string, std::string>>& keys) {
        SubDef def;
        def.sub = app.add_subcommand(name, desc);
        def.sub->fallthrough();
        def.sub->add_option("ensemble", cli.ensemble, "ensemble file")->required();
        for (const auto& [key, help] : keys) def.params.add(def.sub, key, help);
        subs.emplace(name, std::move(def));
    };

    make_sub("spectrum", "estimate the Lyapunov spectrum",
             {{"steps", "chain length per trial"},
              {"trials", "independent trials"},
              {"block", "full|restrict|quotient|invtrans|atomsq"},
              {"subspace", "coordinate indices, e.g. 0,1"},
              {"convergence", "record running means (0/1)"}});
    make_sub("filtration", "deflating filtration with exponents",
             {{"steps", "chain length per trial"}, {"trials", "independent trials"}});
    make_sub("stationary", "simulate a candidate stationary measure",
             {{"kind", "cesaro|backward"},
              {"steps", "forward chain length"},
              {"burn_in", "discarded prefix"},
              {"thinning", "keep every k-th point"},
              {"start", "homogeneous start coordinates"},
              {"n", "backward word length"},
              {"base_points", "backward base cloud size"},
              {"cap", "atom cap before resampling"}});
    make_sub("escape", "mass-escape profile near an invariant subspace",
             {{"subspace", "coordinate indices"},
              {"start", "homogeneous start coordinates"},
              {"delta", "tube radius"},
              {"schedule", "checkpoints, e.g. 100,1000,10000"}});
    make_sub("lift", "decide lift existence over a quotient measure",
             {{"subspace", "coordinate indices of the invariant subspace"},
              {"steps", "simulation length"},
              {"trials", "exponent trials"}});
    make_sub("critical", "critical-case survey and semisimplicity certificate",
             {{"steps", "survey chain length"},
              {"starts", "survey chain count"},
              {"trials", "filtration trials"}});
    make_sub("orbit", "orbit compactness probe",
             {{"start", "homogeneous start coordinates"},
              {"samples", "number of sampled words"},
              {"max_len", "maximum word length"}});
    make_sub("recurrence", "log norm-ratio recurrence probe",
             {{"n", "word length"},
              {"seeds", "independent seeds"},
              {"against", "invtrans|atomsq"}});

    CLI::App* run_cmd = app.add_subcommand("run", "execute a scenario file");
    run_cmd->fallthrough();
    run_cmd->add_option("scenario", cli.scenario_path, "scenario file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (run_cmd->parsed()) {
            projmeas::RunOverrides ov;
            ov.out_dir = cli.out;
            ov.workers = cli.workers;
            if (cli.seed_passed) ov.seed = cli.seed;
            if (!cli.mode.empty()) ov.mode = cli.mode;
            const projmeas::RunOutcome outcome =
                projmeas::run_scenario_file(cli.scenario_path, ov);
            for (const auto& t : outcome.tasks)
                std::cout << t.name << ": " << t.verdict << " -> " << outcome.out_dir << "/"
                          << t.report_file << "\n";
            std::cout << "summary: " << outcome.out_dir << "/summary.txt\n";
            return outcome.exit_code;
        }
        for (auto& [name, def] : subs)
            if (def.sub->parsed()) return run_single_task(cli, name, def.params);
        std::cerr << "error: no subcommand\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
