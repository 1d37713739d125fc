#include "xdg/sweep.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

namespace xdg {

using json = nlohmann::ordered_json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

json row_json(const TrialRow& r) {
  json j;
  j["trial"] = r.trial;
  j["split_seed"] = r.split_seed;
  j["status"] = r.status;
  j["td_val"] = r.td_val;
  j["td_test"] = r.td_test;
  j["oracle_val"] = r.oracle_val;
  j["oracle_test"] = r.oracle_test;
  j["hparams"] = r.hparams;
  return j;
}

std::optional<TrialRow> load_row(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    const json j = json::parse(in);
    TrialRow r;
    r.trial = j.at("trial").get<std::size_t>();
    r.split_seed = j.at("split_seed").get<std::size_t>();
    r.status = j.at("status").get<std::string>();
    r.td_val = j.at("td_val").get<double>();
    r.td_test = j.at("td_test").get<double>();
    r.oracle_val = j.at("oracle_val").get<double>();
    r.oracle_test = j.at("oracle_test").get<double>();
    r.hparams = j.at("hparams").get<std::string>();
    return r;
  } catch (const json::exception&) {
    return std::nullopt;  // incomplete file from an interrupted run
  }
}

void mean_std(const std::vector<double>& v, double& mean, double& stdev) {
  mean = stdev = 0.0;
  if (v.empty()) return;
  double s = 0.0;
  for (double x : v) s += x;
  mean = s / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  stdev = std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

SweepSummary summarize(std::span<const TrialRow> rows) {
  std::map<std::size_t, std::pair<const TrialRow*, const TrialRow*>> best;  // seed -> (td, oracle)
  for (const auto& r : rows) {
    if (!r.ok()) continue;
    auto [it, fresh] = best.try_emplace(r.split_seed, &r, &r);
    if (fresh) continue;
    auto& [td, oracle] = it->second;
    if (r.td_val > td->td_val || (r.td_val == td->td_val && r.trial < td->trial)) td = &r;
    if (r.oracle_val > oracle->oracle_val || (r.oracle_val == oracle->oracle_val && r.trial < oracle->trial)) oracle = &r;
  }
  std::vector<double> td, oracle;
  for (const auto& [seed, pick] : best) {
    td.push_back(pick.first->td_test);
    oracle.push_back(pick.second->oracle_test);
  }
  SweepSummary s;
  s.seeds = best.size();
  mean_std(td, s.td_mean, s.td_std);
  mean_std(oracle, s.oracle_mean, s.oracle_std);
  return s;
}

SweepReport run_sweep(const SweepConfig& cfg, const std::function<void(const TrialRow&)>& progress) {
  return run_sweep(cfg, build_dataset(cfg.dataset), progress);
}

SweepReport run_sweep(const SweepConfig& cfg, const MultiDomainDataset& data,
                      const std::function<void(const TrialRow&)>& progress) {
  if (cfg.n_trials < 1) throw ConfigError("sweep.n_trials", "must be at least 1");
  if (cfg.split_seeds < 1) throw ConfigError("sweep.split_seeds", "must be at least 1");
  const int test_env = cfg.dataset.resolved_test_env(data.envs.size());

  SweepReport report;
  for (std::size_t trial = 0; trial < cfg.n_trials; ++trial) {
    Rng draw(mix_seed(cfg.seed, trial));
    HyperParams hp = sample_hyperparams(cfg.table, draw, cfg.base);
    for (std::size_t s = 0; s < cfg.split_seeds; ++s) {
      hp.seed = mix_seed(mix_seed(cfg.seed, trial), s);
      std::filesystem::path dir;
      if (!cfg.out_dir.empty()) {
        char name[64];
        std::snprintf(name, sizeof name, "trial_%03zu_seed_%zu", trial, s);
        dir = cfg.out_dir / name;
        if (auto done = load_row(dir / "result.json")) {
          report.rows.push_back(*done);
          if (progress) progress(*done);
          continue;
        }
      }
      TrialRow row;
      row.trial = trial;
      row.split_seed = s;
      row.hparams = hyperparams_to_json(hp);
      try {
        TrainOptions opts;
        if (!dir.empty()) opts.metrics_path = dir / "metrics.jsonl";
        const TrainResult res = train(cfg.algorithm, data, test_env, hp, SplitSpec{0.2, s}, opts);
        const auto& td = res.records[select_model(Selection::training_domain, res.records)];
        const auto& last = res.records[select_model(Selection::oracle, res.records)];
        row.td_val = td.pooled_val_acc;
        row.td_test = td.test_acc;
        row.oracle_val = last.oracle_acc;
        row.oracle_test = last.test_acc;
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
      }
      if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        const auto tmp = dir / "result.json.tmp";
        {
          std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
          out << row_json(row).dump() << '\n';
        }
        std::filesystem::rename(tmp, dir / "result.json");
      }
      report.rows.push_back(row);
      if (progress) progress(row);
    }
  }
  report.summary = summarize(report.rows);
  return report;
}

std::string sweep_csv(const SweepReport& report) {
  std::ostringstream out;
  out << "kind,trial,split_seed,status,td_val,td_test,oracle_val,oracle_test,td_mean,td_std,oracle_mean,oracle_std,"
         "seeds,hparams\n";
  for (const auto& r : report.rows) {
    out << "trial," << r.trial << ',' << r.split_seed << ',' << quote(r.status) << ',' << num(r.td_val) << ','
        << num(r.td_test) << ',' << num(r.oracle_val) << ',' << num(r.oracle_test) << ",,,,,," << quote(r.hparams)
        << '\n';
  }
  const auto& s = report.summary;
  out << "summary,,,,,,,," << num(s.td_mean) << ',' << num(s.td_std) << ',' << num(s.oracle_mean) << ','
      << num(s.oracle_std) << ',' << s.seeds << ",\n";
  return out.str();
}

std::vector<TrialRow> parse_sweep_csv(const std::string& text) {
  std::vector<TrialRow> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    const auto c = split_csv_line(line);
    if (c.empty() || c[0] != "trial") continue;
    if (c.size() != 14) throw FormatError("trial row with " + std::to_string(c.size()) + " cells");
    TrialRow r;
    r.trial = std::stoul(c[1]);
    r.split_seed = std::stoul(c[2]);
    r.status = c[3];
    r.td_val = std::stod(c[4]);
    r.td_test = std::stod(c[5]);
    r.oracle_val = std::stod(c[6]);
    r.oracle_test = std::stod(c[7]);
    r.hparams = c[13];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace xdg
