// tdm: travel-demand-management pipeline CLI. One subcommand per stage;
// artifacts land in --out with manifests. Exit codes: 0 success, 1 validation
// error, 2 runtime error.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tdm/pipeline.hpp"

namespace {

using tdm::pipeline::PipelineConfig;

struct CommonArgs {
    std::string config_path;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    // path overrides
    std::string cdr, towers, counts, background, nodes, links, node_towers;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "pipeline config JSON");
    cmd->add_option("--out", args.out, "output directory");
    cmd->add_option("--seed", args.seed, "root seed")->each([&](const std::string&) {
        args.seed_set = true;
    });
    cmd->add_option("--cdr", args.cdr, "cdr.csv path");
    cmd->add_option("--towers", args.towers, "towers.csv path");
    cmd->add_option("--counts", args.counts, "counts.csv path");
    cmd->add_option("--background", args.background, "background flows.csv path");
    cmd->add_option("--nodes", args.nodes, "nodes.csv path");
    cmd->add_option("--links", args.links, "links.csv path");
    cmd->add_option("--node-towers", args.node_towers, "node_towers.csv path");
}

PipelineConfig resolve_config(const CommonArgs& args) {
    PipelineConfig config;
    if (!args.config_path.empty()) config = tdm::pipeline::load_config(args.config_path);
    if (!args.out.empty()) config.out = args.out;
    if (args.seed_set) config.seed = args.seed;
    if (!args.cdr.empty()) config.cdr = args.cdr;
    if (!args.towers.empty()) config.towers = args.towers;
    if (!args.counts.empty()) config.counts = args.counts;
    if (!args.background.empty()) config.background = args.background;
    if (!args.nodes.empty()) config.net.nodes = args.nodes;
    if (!args.links.empty()) config.net.links = args.links;
    if (!args.node_towers.empty()) config.net.node_towers = args.node_towers;
    return config;
}

// default artifact paths inside --out when not overridden
void default_paths_from_out(PipelineConfig& config) {
    const auto in_out = [&](const char* name) { return config.out / name; };
    if (config.cdr.empty()) config.cdr = in_out("cdr.csv");
    if (config.towers.empty()) config.towers = in_out("towers.csv");
    if (config.counts.empty() && std::filesystem::exists(in_out("counts.csv")))
        config.counts = in_out("counts.csv");
    if (config.net.nodes.empty()) config.net.nodes = in_out("nodes.csv");
    if (config.net.links.empty()) config.net.links = in_out("links.csv");
    if (config.net.node_towers.empty()) config.net.node_towers = in_out("node_towers.csv");
}

int run_guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const tdm::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const tdm::SchemaError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const tdm::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime error: %s\n", e.what());
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"travel demand management pipeline (CDR -> flows -> preferences -> "
                 "capacity-constrained recommendations -> compliance scenarios)"};
    app.require_subcommand(1);
    int exit_code = 0;

    // gen-synthetic
    auto gen_args = std::make_shared<CommonArgs>();
    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic city dataset");
    add_common(gen, *gen_args);
    auto gen_travelers = std::make_shared<int>(-1);
    gen->add_option("--travelers", *gen_travelers, "override traveler count");
    gen->callback([gen_args, gen_travelers, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*gen_args);
            if (*gen_travelers > 0) config.synthetic.n_travelers = *gen_travelers;
            tdm::pipeline::run_gen_synthetic(config);
            std::printf("gen-synthetic: wrote synthetic dataset to %s\n",
                        config.out.string().c_str());
        });
    });

    // ingest
    auto ingest_args = std::make_shared<CommonArgs>();
    auto* ingest = app.add_subcommand("ingest", "parse CDR + towers into trajectories/profiles");
    add_common(ingest, *ingest_args);
    auto home = std::make_shared<std::string>();
    auto min_towers = std::make_shared<bool>(false);
    ingest->add_option("--home-country", *home, "filter out this nationality (tourists only)");
    ingest->add_flag("--min-towers", *min_towers, "drop users seen at a single tower");
    ingest->callback([ingest_args, home, min_towers, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*ingest_args);
            default_paths_from_out(config);
            if (!home->empty()) config.home_country = *home;
            if (*min_towers) config.min_towers = true;
            const auto summary = tdm::pipeline::run_ingest(config);
            std::printf("ingest: %zu records, %zu parse errors, %zu users, %zu kept\n",
                        summary.records, summary.parse_errors, summary.users, summary.tourists);
        });
    });

    // od
    auto od_args = std::make_shared<CommonArgs>();
    auto* od = app.add_subcommand("od", "extract hour-binned O-D matrices");
    add_common(od, *od_args);
    od->callback([od_args, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*od_args);
            default_paths_from_out(config);
            tdm::pipeline::run_od(config);
            std::printf("od: wrote %s\n", (config.out / "od.csv").string().c_str());
        });
    });

    // assign
    auto assign_args = std::make_shared<CommonArgs>();
    auto* assign = app.add_subcommand("assign", "assign O-D trips to links and calibrate scale");
    add_common(assign, *assign_args);
    assign->callback([assign_args, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*assign_args);
            default_paths_from_out(config);
            tdm::pipeline::run_assign(config);
            std::printf("assign: wrote %s\n", (config.out / "flows.csv").string().c_str());
        });
    });

    // fit-pref
    auto fit_args = std::make_shared<CommonArgs>();
    auto* fit = app.add_subcommand("fit-pref", "fit the latent-factor preference model");
    add_common(fit, *fit_args);
    auto fit_k = std::make_shared<int>(-1);
    auto fit_lambda = std::make_shared<double>(-1);
    auto fit_epochs = std::make_shared<int>(-1);
    auto fit_resolution = std::make_shared<std::string>();
    fit->add_option("--k", *fit_k, "latent dimensionality");
    fit->add_option("--lambda", *fit_lambda, "L2 regularization");
    fit->add_option("--epochs", *fit_epochs, "training epochs");
    fit->add_option("--resolution", *fit_resolution, "tower | merged | node");
    fit->callback([fit_args, fit_k, fit_lambda, fit_epochs, fit_resolution, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*fit_args);
            default_paths_from_out(config);
            if (*fit_k > 0) config.mf.k = *fit_k;
            if (*fit_lambda >= 0) config.mf.lambda = *fit_lambda;
            if (*fit_epochs >= 0) config.mf.epochs = *fit_epochs;
            if (!fit_resolution->empty()) config.resolution = *fit_resolution;
            tdm::pipeline::run_fit_pref(config);
            std::printf("fit-pref: wrote %s\n", (config.out / "model.json").string().c_str());
        });
    });

    // recommend
    auto rec_args = std::make_shared<CommonArgs>();
    auto* rec = app.add_subcommand("recommend", "capacity-constrained recommendation plan");
    add_common(rec, *rec_args);
    auto rec_theta = std::make_shared<double>(std::nan(""));
    auto rec_top_n = std::make_shared<int>(-1);
    rec->add_option("--theta", *rec_theta, "tolerable excess throughput");
    rec->add_option("--top-n", *rec_top_n, "candidate locations per traveler");
    rec->callback([rec_args, rec_theta, rec_top_n, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*rec_args);
            default_paths_from_out(config);
            if (!std::isnan(*rec_theta)) config.theta = *rec_theta;
            if (*rec_top_n > 0) config.top_n = *rec_top_n;
            tdm::pipeline::run_recommend(config);
            std::printf("recommend: wrote %s and %s\n",
                        (config.out / "plan.json").string().c_str(),
                        (config.out / "baseline_plan.json").string().c_str());
        });
    });

    // simulate
    auto sim_args = std::make_shared<CommonArgs>();
    auto* sim = app.add_subcommand("simulate", "one compliance realization");
    add_common(sim, *sim_args);
    auto sim_rho = std::make_shared<double>(1.0);
    sim->add_option("--rho", *sim_rho, "compliance rate in [0, 1]")->required();
    sim->callback([sim_args, sim_rho, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*sim_args);
            default_paths_from_out(config);
            tdm::pipeline::run_simulate(config, *sim_rho);
            std::printf("simulate: wrote %s\n", (config.out / "results.csv").string().c_str());
        });
    });

    // sweep
    auto sweep_args = std::make_shared<CommonArgs>();
    auto* sweep = app.add_subcommand("sweep", "compliance (and theta) sweeps");
    add_common(sweep, *sweep_args);
    auto rho_grid = std::make_shared<std::vector<double>>();
    auto theta_grid = std::make_shared<std::vector<double>>();
    sweep->add_option("--rho-grid", *rho_grid, "compliance grid")->delimiter(',');
    sweep->add_option("--theta-grid", *theta_grid, "theta grid (ascending)")->delimiter(',');
    sweep->callback([sweep_args, rho_grid, theta_grid, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*sweep_args);
            default_paths_from_out(config);
            if (!rho_grid->empty()) config.rho_grid = *rho_grid;
            if (!theta_grid->empty()) config.theta_grid = *theta_grid;
            tdm::pipeline::run_sweep(config);
            std::printf("sweep: wrote %s\n", (config.out / "results.csv").string().c_str());
        });
    });

    // predict
    auto pred_args = std::make_shared<CommonArgs>();
    auto* pred = app.add_subcommand("predict", "next-location prediction / evaluation");
    add_common(pred, *pred_args);
    auto pred_model = std::make_shared<std::string>("markov");
    auto pred_resolution = std::make_shared<std::string>();
    auto pred_eval = std::make_shared<bool>(false);
    pred->add_option("--model", *pred_model, "naive | markov | rnn");
    pred->add_option("--resolution", *pred_resolution, "tower | merged");
    pred->add_flag("--eval", *pred_eval, "leave-last-out accuracy table for all models");
    pred->callback([pred_args, pred_model, pred_resolution, pred_eval, &exit_code] {
        exit_code = run_guarded([&] {
            PipelineConfig config = resolve_config(*pred_args);
            default_paths_from_out(config);
            if (!pred_resolution->empty()) config.nextloc_resolution = *pred_resolution;
            const auto summary = tdm::pipeline::run_predict(config, *pred_model, *pred_eval);
            if (*pred_eval) {
                for (const auto& row : summary.rows)
                    std::printf("%s: accuracy %.4f improvement %.4f (n=%d)\n", row.model.c_str(),
                                row.accuracy, row.improvement, summary.n_test);
            } else {
                std::printf("predict: wrote %s\n",
                            (config.out / "predictions.csv").string().c_str());
            }
        });
    });

    CLI11_PARSE(app, argc, argv);
    return exit_code;
}
