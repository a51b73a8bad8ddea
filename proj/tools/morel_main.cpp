// Command-line entry point: train, evaluate, export and report commands
// driven by a flat key=value config with named presets.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "morel/config/config.hpp"
#include "morel/data/dataset.hpp"
#include "morel/eval/report.hpp"
#include "morel/train/checkpoint.hpp"
#include "morel/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace morel;

namespace {

struct CommonArgs {
  std::optional<std::string> config_path;
  std::optional<std::string> preset_name;
  std::vector<std::string> sets;
  std::optional<std::string> out_dir;
  std::optional<int64_t> seed;
  std::optional<std::string> device;
  // convenience aliases
  std::optional<int64_t> epochs;
  std::optional<std::string> dataset;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (flat key = value lines)");
  cmd->add_option("--preset", args.preset_name, "preset: morel-t, morel-m, trades, mart, natural");
  cmd->add_option("--set", args.sets, "override, repeatable: --set key=value");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "root seed (fans out to data/attack/init streams)");
  cmd->add_option("--device", args.device, "compute device (cpu)");
  cmd->add_option("--epochs", args.epochs, "shorthand for --set train.epochs=N");
  cmd->add_option("--dataset", args.dataset, "shorthand for --set dataset.name=NAME");
}

config::KeyValues merged_config(const CommonArgs& args,
                                const std::optional<std::string>& base_echo = std::nullopt) {
  auto sets = args.sets;
  if (args.out_dir) sets.push_back("out=" + *args.out_dir);
  if (args.seed) sets.push_back("seed=" + std::to_string(*args.seed));
  if (args.device) sets.push_back("device=" + *args.device);
  if (args.epochs) sets.push_back("train.epochs=" + std::to_string(*args.epochs));
  if (args.dataset) sets.push_back("dataset.name=" + *args.dataset);

  config::KeyValues kv = config::defaults();
  if (base_echo && !base_echo->empty())
    kv.merge_from(config::KeyValues::parse_text(*base_echo, "<checkpoint>"));
  if (args.preset_name) kv.merge_from(config::preset(*args.preset_name));
  if (args.config_path) kv.merge_from(config::KeyValues::parse_file(*args.config_path));
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw config::ConfigError("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  return kv;
}

data::LabeledImages load_split(const config::RunConfig& run, data::Split split) {
  data::LabeledImages d = data::load_dataset(run.dataset, split, run.dataset_root, run.synthetic_spec());
  const int64_t want = split == data::Split::train ? run.train_subsample : run.test_subsample;
  if (want > 0 && want < d.size())
    d = data::subsample(d, want, Rng(run.train.seed).fork(split == data::Split::train
                                                              ? "train-subsample"
                                                              : "test-subsample").seed());
  return d;
}

int cmd_train(const CommonArgs& args) {
  config::KeyValues kv = merged_config(args);
  config::RunConfig run = config::build_run_config(kv);

  data::LabeledImages train_data = load_split(run, data::Split::train);
  data::LabeledImages test_data = load_split(run, data::Split::test);

  nn::ModelSpec spec = run.model;
  spec.input_shape = {train_data.images.dim(1), train_data.images.dim(2), train_data.images.dim(3)};
  spec.classes = train_data.class_count;

  Rng init = Rng(run.train.seed).fork("model-init");
  auto model = nn::make_classifier<float>(spec, init);
  train::Trainer<float> trainer(run.train, spec, *model, kv.to_text());

  fs::create_directories(run.out_dir);
  {
    std::ofstream echo(fs::path(run.out_dir) / "config.effective");
    echo << kv.to_text();
  }
  std::cerr << "[train] method " << train::method_name(run.train.method) << ", dataset "
            << run.dataset << " (" << train_data.size() << " train / " << test_data.size()
            << " test), " << run.train.epochs << " epochs\n";
  auto result = trainer.fit(train_data, test_data, run.out_dir);
  std::cout << "best robust accuracy " << result.best_metric << "% at epoch " << result.best_epoch
            << "\nbest checkpoint: " << result.best_path << "\nlast checkpoint: " << result.last_path
            << "\nhistory: " << result.history_path << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& checkpoint_path, const std::string& mode,
                 const std::optional<std::string>& surrogate_path, bool chart) {
  if (mode != "whitebox" && mode != "blackbox")
    throw config::ConfigError("--mode must be whitebox or blackbox");
  if (mode == "blackbox" && !surrogate_path)
    throw config::ConfigError("blackbox evaluation requires --surrogate CHECKPOINT");

  auto loaded = train::load_checkpoint<float>(checkpoint_path);
  config::KeyValues kv = merged_config(args, loaded.info.config_echo);
  config::RunConfig run = config::build_run_config(kv);

  data::LabeledImages test_data = load_split(run, data::Split::test);
  auto suite = evaluation::suite_from_names(run.eval_suite, run.eval_epsilon);

  std::unique_ptr<nn::Classifier<float>> surrogate;
  std::string surrogate_id;
  if (surrogate_path) {
    auto s = train::load_checkpoint<float>(*surrogate_path);
    surrogate = std::move(s.model);
    surrogate_id = s.info.method + "/" + s.info.kind;
  }

  auto report = evaluation::build_report(loaded.info.method, loaded.info.kind, run.dataset,
                                         *loaded.model, test_data, suite, mode, surrogate.get(),
                                         surrogate_id, run.train.seed, run.eval_batch);
  const std::string out_dir = args.out_dir.value_or(run.out_dir + "/eval");
  const std::string json_path = evaluation::write_report_artifacts(report, out_dir, chart);
  std::cout << evaluation::render_table({report});
  std::cout << "report: " << json_path << "\n";
  return 0;
}

int cmd_export(const std::string& checkpoint_path, std::optional<std::string> out_file) {
  if (!out_file) {
    fs::path p(checkpoint_path);
    out_file = (p.parent_path() / (p.stem().string() + "_export.ckpt")).string();
  }
  train::export_model<float>(checkpoint_path, *out_file);
  std::cout << "exported inference model: " << *out_file << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::optional<std::string>& out_dir,
               bool chart) {
  if (inputs.empty()) throw config::ConfigError("report: no input report files given");
  std::vector<evaluation::RobustnessReport> reports;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open report: " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw std::runtime_error("corrupt report JSON: " + path);
    reports.push_back(evaluation::report_from_json(j));
  }
  const std::string table = evaluation::render_table(reports);
  std::cout << table;
  if (out_dir) {
    fs::create_directories(*out_dir);
    std::ofstream out(fs::path(*out_dir) / "summary_table.txt");
    out << table;
    if (chart)
      for (const auto& r : reports) {
        std::ofstream svg(fs::path(*out_dir) /
                          ("chart_" + r.model_id + "_" + r.checkpoint_kind + ".svg"));
        svg << evaluation::render_svg(r);
      }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"morel: multi-objective robust representation learning toolkit"};
  app.require_subcommand(1);

  CommonArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "train a model and write best/last checkpoints");
  add_common(train_cmd, train_args);

  CommonArgs eval_args;
  std::string eval_checkpoint;
  std::string eval_mode = "whitebox";
  std::optional<std::string> eval_surrogate;
  bool eval_chart = false;
  auto* eval_cmd = app.add_subcommand("evaluate", "measure clean and per-attack robust accuracy");
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();
  eval_cmd->add_option("--mode", eval_mode, "whitebox (default) or blackbox");
  eval_cmd->add_option("--surrogate", eval_surrogate, "surrogate checkpoint (blackbox mode)");
  eval_cmd->add_flag("--chart", eval_chart, "also write an SVG bar chart");
  add_common(eval_cmd, eval_args);

  std::string export_checkpoint;
  std::optional<std::string> export_out;
  auto* export_cmd = app.add_subcommand("export", "strip training-only state for inference");
  export_cmd->add_option("--checkpoint", export_checkpoint, "checkpoint to export")->required();
  export_cmd->add_option("--out", export_out, "output file (default: <stem>_export.ckpt)");

  std::vector<std::string> report_inputs;
  std::optional<std::string> report_out;
  bool report_chart = false;
  auto* report_cmd = app.add_subcommand("report", "combine report JSONs into a comparison table");
  report_cmd->add_option("inputs", report_inputs, "report JSON files");
  report_cmd->add_option("--out", report_out, "directory for the combined table");
  report_cmd->add_flag("--chart", report_chart, "also write SVG charts");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*eval_cmd) return cmd_evaluate(eval_args, eval_checkpoint, eval_mode, eval_surrogate, eval_chart);
    if (*export_cmd) return cmd_export(export_checkpoint, export_out);
    if (*report_cmd) return cmd_report(report_inputs, report_out, report_chart);
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
