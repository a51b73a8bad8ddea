// End-to-end checks of the command-line interface; spawns the real binary.

#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

using namespace std::chrono;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("morel_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(MOREL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// quick toy run: tiny model, natural training, one epoch, short epoch eval
std::string toy_train_args(const fs::path& out, int seed) {
  std::ostringstream os;
  os << "train --preset natural --dataset synthetic --epochs 1 --seed " << seed << " --out "
     << out.string() << " --set dataset.synth.per_class=8"
     << " --set model.widths=4,4,4"
     << " --set train.eval_subsample=16 --set eval_attack.iterations=3";
  return os.str();
}

}  // namespace

TEST_CASE("train command produces checkpoints, history and the effective config") {
  TempDir tmp("train");
  const auto t0 = steady_clock::now();
  const int rc = run_cli(toy_train_args(tmp.path / "run", 7), tmp.path / "train.log");
  const auto elapsed = duration_cast<seconds>(steady_clock::now() - t0).count();
  REQUIRE_MESSAGE(rc == 0, slurp(tmp.path / "train.log"));
  CHECK(elapsed < 60);  // the documented quick-start budget
  CHECK(fs::exists(tmp.path / "run" / "best.ckpt"));
  CHECK(fs::exists(tmp.path / "run" / "last.ckpt"));
  CHECK(fs::exists(tmp.path / "run" / "history.csv"));
  const std::string echo = slurp(tmp.path / "run" / "config.effective");
  CHECK(echo.find("method = natural") != std::string::npos);
  CHECK(echo.find("seed = 7") != std::string::npos);
  CHECK(echo.find("train.epochs = 1") != std::string::npos);
}

TEST_CASE("identical seeds give identical history files") {
  TempDir tmp("det");
  REQUIRE(run_cli(toy_train_args(tmp.path / "a", 11), tmp.path / "a.log") == 0);
  REQUIRE(run_cli(toy_train_args(tmp.path / "b", 11), tmp.path / "b.log") == 0);
  REQUIRE(run_cli(toy_train_args(tmp.path / "c", 12), tmp.path / "c.log") == 0);
  CHECK(slurp(tmp.path / "a" / "history.csv") == slurp(tmp.path / "b" / "history.csv"));
  CHECK(slurp(tmp.path / "a" / "history.csv") != slurp(tmp.path / "c" / "history.csv"));
}

TEST_CASE("evaluate command writes a report and is deterministic given the seed") {
  TempDir tmp("eval");
  REQUIRE(run_cli(toy_train_args(tmp.path / "run", 3), tmp.path / "train.log") == 0);
  const std::string ckpt = (tmp.path / "run" / "last.ckpt").string();
  const std::string eval_args = "evaluate --checkpoint " + ckpt +
                                " --set eval.suite=fgsm --set dataset.test_subsample=16 --out ";
  REQUIRE(run_cli(eval_args + (tmp.path / "e1").string(), tmp.path / "e1.log") == 0);
  REQUIRE(run_cli(eval_args + (tmp.path / "e2").string(), tmp.path / "e2.log") == 0);
  REQUIRE(fs::exists(tmp.path / "e1" / "report_last.json"));
  CHECK(fs::exists(tmp.path / "e1" / "report_last.txt"));

  // identical up to the timestamp
  auto strip_ts = [](std::string s) {
    const auto pos = s.find("\"timestamp\"");
    if (pos != std::string::npos) {
      const auto end = s.find('\n', pos);
      s.erase(pos, end - pos);
    }
    return s;
  };
  CHECK(strip_ts(slurp(tmp.path / "e1" / "report_last.json")) ==
        strip_ts(slurp(tmp.path / "e2" / "report_last.json")));
}

TEST_CASE("export produces a smaller, evaluable model file") {
  TempDir tmp("export");
  REQUIRE(run_cli(toy_train_args(tmp.path / "run", 5), tmp.path / "train.log") == 0);
  const fs::path ckpt = tmp.path / "run" / "last.ckpt";
  const fs::path exported = tmp.path / "model.ckpt";
  REQUIRE(run_cli("export --checkpoint " + ckpt.string() + " --out " + exported.string(),
                  tmp.path / "export.log") == 0);
  REQUIRE(fs::exists(exported));
  CHECK(fs::file_size(exported) < fs::file_size(ckpt));
  const int rc = run_cli("evaluate --checkpoint " + exported.string() +
                             " --set eval.suite=none --set dataset.test_subsample=8 --out " +
                             (tmp.path / "eval").string(),
                         tmp.path / "eval.log");
  REQUIRE_MESSAGE(rc == 0, slurp(tmp.path / "eval.log"));
  CHECK(fs::exists(tmp.path / "eval" / "report_export.json"));
}

TEST_CASE("report command combines multiple result files") {
  TempDir tmp("report");
  REQUIRE(run_cli(toy_train_args(tmp.path / "run", 9), tmp.path / "train.log") == 0);
  const std::string ckpt_last = (tmp.path / "run" / "last.ckpt").string();
  const std::string ckpt_best = (tmp.path / "run" / "best.ckpt").string();
  const std::string common = " --set eval.suite=fgsm --set dataset.test_subsample=8 --out ";
  REQUIRE(run_cli("evaluate --checkpoint " + ckpt_last + common + (tmp.path / "el").string(),
                  tmp.path / "el.log") == 0);
  REQUIRE(run_cli("evaluate --checkpoint " + ckpt_best + common + (tmp.path / "eb").string(),
                  tmp.path / "eb.log") == 0);
  const int rc = run_cli("report " + (tmp.path / "el" / "report_last.json").string() + " " +
                             (tmp.path / "eb" / "report_best.json").string() + " --chart --out " +
                             (tmp.path / "combined").string(),
                         tmp.path / "report.log");
  REQUIRE(rc == 0);
  const std::string table = slurp(tmp.path / "combined" / "summary_table.txt");
  CHECK(table.find("clean(best)") != std::string::npos);
  CHECK(table.find("clean(last)") != std::string::npos);
}

TEST_CASE("exit codes: 2 for configuration errors, 3 for runtime failures") {
  TempDir tmp("codes");
  CHECK(run_cli("train --set bogus.key=1 --out " + (tmp.path / "x").string(),
                tmp.path / "a.log") == 2);
  CHECK(slurp(tmp.path / "a.log").find("bogus.key") != std::string::npos);
  CHECK(run_cli("train --preset nonexistent --out " + (tmp.path / "y").string(),
                tmp.path / "b.log") == 2);
  CHECK(run_cli("evaluate --checkpoint " + (tmp.path / "missing.ckpt").string(),
                tmp.path / "c.log") == 3);
  CHECK(run_cli("train --device cuda:0 --out " + (tmp.path / "z").string(),
                tmp.path / "d.log") == 2);
}

TEST_CASE("blackbox evaluation requires a surrogate") {
  TempDir tmp("bb");
  REQUIRE(run_cli(toy_train_args(tmp.path / "run", 13), tmp.path / "train.log") == 0);
  const std::string ckpt = (tmp.path / "run" / "last.ckpt").string();
  CHECK(run_cli("evaluate --checkpoint " + ckpt + " --mode blackbox", tmp.path / "bb.log") == 2);
  CHECK(slurp(tmp.path / "bb.log").find("surrogate") != std::string::npos);
}
