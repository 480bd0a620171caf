#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "fsp/experiment.hpp"

namespace {

// Flags are applied after the config file is loaded so that flags win.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& name, std::function<T&(fsp::RunConfig&)> field,
                   const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(name, *value, help);
    appliers_.push_back([opt, value, field](fsp::RunConfig& cfg) {
      if (opt->count() > 0) field(cfg) = *value;
    });
    return opt;
  }

  void apply(fsp::RunConfig& cfg) const {
    for (const auto& f : appliers_) f(cfg);
  }

 private:
  std::vector<std::function<void(fsp::RunConfig&)>> appliers_;
};

#define FSP_FIELD(expr) \
  std::function<std::remove_reference_t<decltype(std::declval<fsp::RunConfig&>().expr)>&(fsp::RunConfig&)>( \
      [](fsp::RunConfig& c) -> auto& { return c.expr; })

void add_data_flags(Overrides& o, CLI::App* app) {
  o.add(app, "--dataset", FSP_FIELD(data.path), "Dataset JSONL path");
  o.add(app, "--chain", FSP_FIELD(chain), "Chain definition JSON (default: built-in planar arm)");
}

void add_train_flags(Overrides& o, CLI::App* app) {
  o.add(app, "--lambda", FSP_FIELD(train.lambda), "Feasibility loss weight (0 = MSE baseline)");
  o.add(app, "--delta", FSP_FIELD(train.delta), "Safety margin in metres");
  o.add(app, "--steps", FSP_FIELD(train.steps), "Training steps");
  o.add(app, "--batch-size", FSP_FIELD(train.batch_size), "Batch size");
  o.add(app, "--lr", FSP_FIELD(train.learning_rate), "Adam step size");
  o.add(app, "--train-seed", FSP_FIELD(train.seed), "Training seed");
  o.add(app, "--train-episodes", FSP_FIELD(train.episodes), "Train on the first N episodes (0 = all)");
  o.add(app, "--horizon", FSP_FIELD(policy.horizon), "Action chunk length T_a");
  o.add(app, "--diffusion-steps", FSP_FIELD(policy.diffusion_steps), "Diffusion steps K");
  o.add(app, "--beta-start", FSP_FIELD(policy.beta_start), "First noise level");
  o.add(app, "--beta-end", FSP_FIELD(policy.beta_end), "Last noise level");
  o.add(app, "--action-stride", FSP_FIELD(policy.action_stride), "Waypoints per action step");
}

void add_eval_flags(Overrides& o, CLI::App* app) {
  o.add(app, "--level", FSP_FIELD(eval.level), "Perturbation level: small or large");
  o.add(app, "--eval-seed", FSP_FIELD(eval.seed), "Evaluation seed");
  o.add(app, "--eval-episodes", FSP_FIELD(eval.episodes), "Evaluate on the first N episodes (0 = all)");
  o.add(app, "--bootstrap", FSP_FIELD(eval.bootstrap), "Bootstrap replicates");
  o.add(app, "--chunks", FSP_FIELD(eval.chunks_per_episode), "Chunks executed per rollout");
}

void print_row(const fsp::GridRow& r) {
  const auto& m = r.summary.metrics;
  std::cout << r.method << " n=" << r.data_size << " delta=" << fsp::fixed(r.delta, 2)
            << " lambda=" << fsp::fixed(r.lambda, 2);
  for (std::size_t i = 0; i < m.pairs.size(); ++i) {
    std::cout << ' ' << fsp::ssr_label(m.pairs[i]) << '=' << fsp::fixed(100.0 * m.ssr[i], 2) << "%+-"
              << fsp::fixed(m.ci_half_width_pp[i], 2);
  }
  std::cout << " Pr(d_min<0.05)=" << fsp::fixed(100.0 * m.p_dmin_lt_005, 2) << "%\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feasibility-supervised action-chunk policy toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  std::size_t jobs = 1;
  bool dump_config = false;
  Overrides o;
  app.add_option("--config", config_path, "Run config JSON");
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--dump-config", dump_config, "Print the effective config and exit");
  o.add(&app, "--out-dir", FSP_FIELD(out_dir), "Root for all relative paths");

  auto* gen = app.add_subcommand("gen", "Generate the counterfactual dataset");
  o.add(gen, "--count", FSP_FIELD(data.count), "Episodes to generate");
  o.add(gen, "--seed", FSP_FIELD(data.seed), "Master seed");
  o.add(gen, "--epsilon", FSP_FIELD(data.epsilon), "Interference threshold in metres");
  add_data_flags(o, gen);

  auto* train = app.add_subcommand("train", "Train one policy");
  add_data_flags(o, train);
  add_train_flags(o, train);
  o.add(train, "--checkpoint", FSP_FIELD(train.checkpoint), "Checkpoint output path");
  o.add(train, "--log", FSP_FIELD(train.log), "Loss log CSV path");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_data_flags(o, eval);
  add_eval_flags(o, eval);
  o.add(eval, "--checkpoint", FSP_FIELD(eval.checkpoint), "Checkpoint to evaluate");
  o.add(eval, "--report", FSP_FIELD(eval.report), "Report path prefix");

  auto* ablate = app.add_subcommand("ablate", "Supervision strength grid");
  add_data_flags(o, ablate);
  add_train_flags(o, ablate);
  add_eval_flags(o, ablate);
  o.add(ablate, "--deltas", FSP_FIELD(ablate.deltas), "Safety margins")->expected(1, -1);
  o.add(ablate, "--lambdas", FSP_FIELD(ablate.lambdas), "Loss weights")->expected(1, -1);
  o.add(ablate, "--report", FSP_FIELD(ablate.report), "Report path prefix");

  auto* datascale = app.add_subcommand("datascale", "Training data size grid");
  add_data_flags(o, datascale);
  add_train_flags(o, datascale);
  add_eval_flags(o, datascale);
  o.add(datascale, "--sizes", FSP_FIELD(datascale.sizes), "Training subset sizes")->expected(1, -1);
  o.add(datascale, "--report", FSP_FIELD(datascale.report), "Report path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  fsp::RunConfig cfg;
  try {
    if (!config_path.empty()) {
      cfg = fsp::RunConfig::from_json(nlohmann::json::parse(fsp::read_file(config_path)));
    }
    o.apply(cfg);
    cfg.validate();
  } catch (const fsp::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  if (dump_config) {
    std::cout << cfg.to_json().dump(2) << '\n';
    return 0;
  }

  const fsp::Workspace ws{cfg.out_dir, jobs};
  try {
    std::filesystem::create_directories(ws.out_dir);
    if (gen->parsed()) {
      const auto r = fsp::cmd_gen(cfg, ws);
      std::cout << fsp::format_stats(r.stats) << "dataset " << ws.path(cfg.data.path) << " " << r.dataset_hash << '\n';
    } else if (train->parsed()) {
      const auto r = fsp::cmd_train(cfg, ws);
      std::cout << "step 1: L_MSE=" << r.first.mse << " L_geo=" << r.first.geo << "\nfinal: L_MSE=" << r.last.mse
                << " L_geo=" << r.last.geo << "\ncheckpoint " << ws.path(cfg.train.checkpoint) << " "
                << r.checkpoint_hash << '\n';
    } else if (eval->parsed()) {
      print_row(fsp::cmd_eval(cfg, ws));
    } else if (ablate->parsed()) {
      for (const auto& r : fsp::cmd_ablate(cfg, ws)) print_row(r);
    } else if (datascale->parsed()) {
      for (const auto& r : fsp::cmd_datascale(cfg, ws)) print_row(r);
    }
  } catch (const fsp::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
