#include "morel/eval/report.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace morel::evaluation {

namespace {

std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string fmt_pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

nlohmann::json attack_spec_to_json(const attacks::AttackSpec& spec) {
  return {{"family", attacks::to_string(spec.family)},
          {"epsilon", spec.epsilon},
          {"step_size", spec.step_size},
          {"iterations", spec.iterations},
          {"random_start", spec.random_start},
          {"inner_loss", attacks::to_string(spec.inner_loss)},
          {"confidence", spec.confidence},
          {"c_const", spec.c_const},
          {"lr", spec.lr}};
}

attacks::AttackSpec attack_spec_from_json(const nlohmann::json& j) {
  attacks::AttackSpec spec;
  spec.family = attacks::family_from_string(j.at("family").get<std::string>());
  spec.epsilon = j.at("epsilon").get<double>();
  spec.step_size = j.at("step_size").get<double>();
  spec.iterations = j.at("iterations").get<int64_t>();
  spec.random_start = j.at("random_start").get<bool>();
  spec.inner_loss = attacks::inner_loss_from_string(j.at("inner_loss").get<std::string>());
  spec.confidence = j.at("confidence").get<double>();
  spec.c_const = j.at("c_const").get<double>();
  spec.lr = j.at("lr").get<double>();
  return spec;
}

nlohmann::json report_to_json(const RobustnessReport& report) {
  nlohmann::json j;
  j["model_id"] = report.model_id;
  j["checkpoint_kind"] = report.checkpoint_kind;
  j["dataset"] = report.dataset;
  j["mode"] = report.mode;
  j["surrogate_id"] = report.surrogate_id;
  j["clean_acc"] = report.clean_acc;
  nlohmann::json attacks_json = nlohmann::json::array();
  for (const auto& [name, acc] : report.per_attack)
    attacks_json.push_back({{"name", name}, {"accuracy", acc}});
  j["per_attack"] = attacks_json;
  j["avg_robust"] = report.avg_robust;
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& [name, spec] : report.specs) {
    nlohmann::json s = attack_spec_to_json(spec);
    s["name"] = name;
    specs.push_back(s);
  }
  j["specs"] = specs;
  j["sample_count"] = report.sample_count;
  j["seed"] = report.seed;
  j["timestamp"] = report.timestamp.empty() ? utc_now_iso8601() : report.timestamp;
  return j;
}

RobustnessReport report_from_json(const nlohmann::json& j) {
  RobustnessReport r;
  r.model_id = j.at("model_id").get<std::string>();
  r.checkpoint_kind = j.at("checkpoint_kind").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.surrogate_id = j.at("surrogate_id").get<std::string>();
  r.clean_acc = j.at("clean_acc").get<double>();
  for (const auto& a : j.at("per_attack"))
    r.per_attack.emplace_back(a.at("name").get<std::string>(), a.at("accuracy").get<double>());
  r.avg_robust = j.at("avg_robust").get<double>();
  for (const auto& s : j.at("specs"))
    r.specs.emplace_back(s.at("name").get<std::string>(), attack_spec_from_json(s));
  r.sample_count = j.at("sample_count").get<int64_t>();
  r.seed = j.at("seed").get<uint64_t>();
  r.timestamp = j.at("timestamp").get<std::string>();
  return r;
}

std::string render_table(const std::vector<RobustnessReport>& reports) {
  // column order: clean, every attack seen (suite order of first appearance), avg
  std::vector<std::string> attack_names;
  for (const auto& r : reports)
    for (const auto& [name, acc] : r.per_attack)
      if (std::find(attack_names.begin(), attack_names.end(), name) == attack_names.end())
        attack_names.push_back(name);

  struct Row {
    std::map<std::string, const RobustnessReport*> by_kind;
  };
  std::vector<std::pair<std::string, Row>> rows;  // key = model_id|mode|dataset
  for (const auto& r : reports) {
    const std::string key = r.model_id + " [" + r.mode + ", " + r.dataset + "]";
    auto it = std::find_if(rows.begin(), rows.end(), [&](const auto& p) { return p.first == key; });
    if (it == rows.end()) {
      rows.emplace_back(key, Row{});
      it = rows.end() - 1;
    }
    it->second.by_kind[r.checkpoint_kind] = &r;
  }

  std::vector<std::string> kinds;
  for (const auto& [key, row] : rows)
    for (const auto& [kind, rep] : row.by_kind)
      if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) kinds.push_back(kind);
  std::sort(kinds.begin(), kinds.end());  // best before last

  std::ostringstream os;
  os << "model";
  auto emit_cols = [&](const std::string& metric) {
    for (const auto& kind : kinds) os << '\t' << metric << '(' << kind << ')';
  };
  emit_cols("clean");
  for (const auto& a : attack_names) emit_cols(a);
  emit_cols("avg-robust");
  os << '\n';

  for (const auto& [key, row] : rows) {
    os << key;
    auto emit_metric = [&](auto get) {
      for (const auto& kind : kinds) {
        auto it = row.by_kind.find(kind);
        os << '\t' << (it == row.by_kind.end() ? std::string("-") : fmt_pct(get(*it->second)));
      }
    };
    emit_metric([](const RobustnessReport& r) { return r.clean_acc; });
    for (const auto& a : attack_names)
      emit_metric([&](const RobustnessReport& r) {
        for (const auto& [name, acc] : r.per_attack)
          if (name == a) return acc;
        return -1.0;
      });
    emit_metric([](const RobustnessReport& r) { return r.avg_robust; });
    os << '\n';
  }
  return os.str();
}

std::string render_svg(const RobustnessReport& report) {
  std::vector<std::pair<std::string, double>> bars;
  bars.emplace_back("clean", report.clean_acc);
  for (const auto& [name, acc] : report.per_attack) bars.emplace_back(name, acc);
  bars.emplace_back("avg-robust", report.avg_robust);

  const int bar_w = 72, gap = 18, h = 280, base = 230, left = 50;
  const int w = left + static_cast<int>(bars.size()) * (bar_w + gap) + gap;
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  os << "<text x='" << left << "' y='20' font-size='14'>" << report.model_id << " ("
     << report.checkpoint_kind << ", " << report.mode << ", " << report.dataset << ")</text>\n";
  for (int gl = 0; gl <= 100; gl += 25) {
    const int y = base - gl * 2;
    os << "<line x1='" << left - 6 << "' y1='" << y << "' x2='" << w - gap << "' y2='" << y
       << "' stroke='#ccc'/>\n<text x='4' y='" << y + 4 << "' font-size='10'>" << gl << "%</text>\n";
  }
  int x = left;
  for (const auto& [name, acc] : bars) {
    const int bh = static_cast<int>(acc * 2.0);
    os << "<rect x='" << x << "' y='" << base - bh << "' width='" << bar_w << "' height='" << bh
       << "' fill='#4878a8'/>\n";
    os << "<text x='" << x + bar_w / 2 << "' y='" << base - bh - 5
       << "' font-size='10' text-anchor='middle'>" << fmt_pct(acc) << "</text>\n";
    os << "<text x='" << x + bar_w / 2 << "' y='" << base + 14
       << "' font-size='10' text-anchor='middle'>" << name << "</text>\n";
    x += bar_w + gap;
  }
  os << "</svg>\n";
  return os.str();
}

std::string write_report_artifacts(const RobustnessReport& report, const std::string& out_dir,
                                   bool chart) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string stem = "report_" + report.checkpoint_kind +
                           (report.mode == "blackbox" ? "_blackbox" : "");
  const std::string json_path = (fs::path(out_dir) / (stem + ".json")).string();
  {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("cannot write report: " + json_path);
    out << report_to_json(report).dump(2) << "\n";
  }
  {
    std::ofstream out((fs::path(out_dir) / (stem + ".txt")).string());
    out << render_table({report});
  }
  if (chart) {
    std::ofstream out((fs::path(out_dir) / (stem + ".svg")).string());
    out << render_svg(report);
  }
  return json_path;
}

}  // namespace morel::evaluation
