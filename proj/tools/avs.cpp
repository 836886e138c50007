// avs: dataset curation, validation, training, evaluation and serving.

#include <avs/curate.hpp>
#include <avs/eval.hpp>
#include <avs/server.hpp>
#include <avs/train.hpp>

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <sstream>

namespace {

std::vector<avs::QuestionType> parse_qtypes(const std::string& csv) {
  std::vector<avs::QuestionType> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(avs::parse_question_type(item));
  if (out.empty()) throw avs::DomainError("no question types given");
  return out;
}

avs::EnvServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active view selection environment"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Curate a dataset");
  avs::CurationConfig ccfg;
  std::string qtypes = "existence";
  std::string gen_out;
  int res = 512;
  gen->add_option("--seed", ccfg.seed, "Master seed")->default_val(1);
  gen->add_option("--scenes", ccfg.num_scenes, "Number of base scenes")->default_val(10);
  gen->add_option("--per-scene", ccfg.per_scene, "Sample quota per scene")->default_val(4);
  gen->add_option("--samples", ccfg.max_samples, "Stop after this many samples (0 = no cap)")->default_val(0);
  gen->add_option("--qtypes", qtypes, "Comma-separated: existence,counting,state")->default_val("existence");
  gen->add_option("--res", res, "Square image resolution")->default_val(512)->check(CLI::Range(16, 4096));
  gen->add_option("--threads", ccfg.threads, "Worker threads")->default_val(1);
  gen->add_option("--catalog", ccfg.catalog_path, "Class catalog JSON")->default_val(ccfg.catalog_path);
  gen->add_flag("--mc-existence", ccfg.multiple_choice_existence, "Multiple-choice existence questions");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // validate
  auto* val = app.add_subcommand("validate", "Re-check a curated dataset");
  std::string val_dir;
  bool val_json = false;
  val->add_option("dir", val_dir, "Dataset directory")->required();
  val->add_flag("--json", val_json, "Print the full report as JSON");

  // train
  auto* train = app.add_subcommand("train", "Train a policy checkpoint");
  avs::TrainConfig tcfg;
  std::string train_ds, train_mode = "sft-rl", train_out;
  std::size_t max_records = 0;
  train->add_option("--dataset", train_ds, "Training dataset")->required();
  train->add_option("--mode", train_mode, "sft | rl | sft-rl")->default_val("sft-rl");
  train->add_option("--seed", tcfg.seed, "Seed")->default_val(1);
  train->add_option("--sft-iters", tcfg.sft_iters, "SFT stage iterations")->default_val(tcfg.sft_iters);
  train->add_option("--sft-lr", tcfg.sft_lr, "SFT learning rate")->default_val(tcfg.sft_lr);
  train->add_option("--rl-steps", tcfg.rl_steps, "GRPO stage steps")->default_val(tcfg.rl_steps);
  train->add_option("--rl-lr", tcfg.grpo.lr, "GRPO learning rate")->default_val(tcfg.grpo.lr);
  train->add_option("--group-size", tcfg.grpo.group_size, "GRPO group size")->default_val(tcfg.grpo.group_size);
  train->add_option("--batch", tcfg.grpo.batch_records, "Records per GRPO step")->default_val(tcfg.grpo.batch_records);
  train->add_option("--kl", tcfg.grpo.kl_beta, "KL coefficient")->default_val(tcfg.grpo.kl_beta);
  train->add_option("--threads", tcfg.grpo.threads, "Reward worker threads")->default_val(1);
  train->add_option("--max-records", max_records, "Use only the first N records (0 = all)")->default_val(0);
  train->add_option("--out", train_out, "Checkpoint path")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a policy or an action file");
  std::string eval_ds, eval_policy, eval_actions, eval_mode = "single", eval_out;
  std::uint64_t eval_random = 0;
  unsigned eval_threads = 1;
  ev->add_option("--dataset", eval_ds, "Dataset directory")->required();
  auto* src_policy = ev->add_option("--policy", eval_policy, "Policy checkpoint");
  auto* src_actions = ev->add_option("--actions", eval_actions, "JSONL action file {sample_id, text}");
  auto* src_random = ev->add_option("--random", eval_random, "Uniform random actions with this seed");
  src_policy->excludes(src_actions)->excludes(src_random);
  src_actions->excludes(src_random);
  ev->add_option("--mode", eval_mode, "single | multi:k")->default_val("single");
  ev->add_option("--threads", eval_threads, "Worker threads")->default_val(1);
  ev->add_option("--out", eval_out, "Report path")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP environment server");
  avs::ServerConfig scfg;
  std::string datasets_root, data_dir = "avs-data";
  serve->add_option("--datasets", datasets_root, "Directory of named datasets")->required();
  serve->add_option("--data", data_dir, "Session data directory (AVS_DATA_DIR overrides)")->default_val("avs-data");
  serve->add_option("--host", scfg.host, "Bind address")->default_val(scfg.host);
  serve->add_option("--port", scfg.port, "Port (0 = any free port)")->default_val(8080);
  serve->add_option("--threads", scfg.threads, "Request worker threads")->default_val(4);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ccfg.qtypes = parse_qtypes(qtypes);
      ccfg.camera.width = ccfg.camera.height = res;
      const auto result = avs::curate_dataset(ccfg, gen_out);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << nlohmann::json(result.stats).dump(2) << "\n";
      return 0;
    }
    if (*val) {
      const auto report = avs::validate_dataset(val_dir);
      if (val_json) {
        std::cout << nlohmann::json(report).dump(2) << "\n";
      } else {
        for (const auto& v : report.violations) std::cout << v.sample_id << "\t" << v.check << "\t" << v.detail << "\n";
        std::cout << report.samples_checked << " samples checked, " << report.violations.size() << " violation(s)\n";
      }
      return report.ok() ? 0 : 1;
    }
    if (*train) {
      tcfg.mode = avs::parse_train_mode(train_mode);
      avs::Dataset ds = avs::load_dataset(train_ds);
      if (max_records > 0 && ds.records.size() > max_records) ds.records.resize(max_records);
      const auto result = avs::train_policy(ds, tcfg);
      avs::save_training(result, tcfg, train_out);
      std::cout << "wrote " << train_out << " (" << result.curve.size() << " curve points)\n";
      return 0;
    }
    if (*ev) {
      const avs::Dataset ds = avs::load_dataset(eval_ds);
      const avs::EvalMode mode = avs::parse_eval_mode(eval_mode);
      avs::PredictionSource source = avs::RandomActions{eval_random};
      if (*src_policy) {
        source = avs::load_policy(eval_policy);
      } else if (*src_actions) {
        source = avs::load_action_log(eval_actions);
      } else if (!*src_random) {
        std::cerr << "eval: one of --policy, --actions or --random is required\n";
        return 2;
      }
      avs::Evaluation result;
      try {
        result = avs::evaluate_policy(ds, source, mode, ds.verifier, {}, eval_threads);
      } catch (const avs::MissingSamplesError& e) {
        std::cerr << "error: action file is missing " << e.missing.size() << " sample id(s):\n";
        for (const auto& id : e.missing) std::cerr << "  " << id << "\n";
        return 1;
      }
      avs::write_evaluation(result, eval_out);
      std::cout << nlohmann::json(result.report).dump(2) << "\n";
      return 0;
    }
    if (*serve) {
      scfg.datasets_root = datasets_root;
      scfg.data_dir = data_dir;
      avs::EnvServer server(scfg);
      const std::size_t restored = server.manager().recover();
      const int port = server.bind();
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "restored " << restored << " session(s)\nlistening on " << scfg.host << ":" << port << std::endl;
      return server.serve() ? 0 : 1;
    }
  } catch (const avs::DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
