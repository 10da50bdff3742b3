#include "dlsim/harness/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dlsim/adversary.hpp"
#include "dlsim/errors.hpp"
#include "dlsim/harness/config.hpp"
#include "dlsim/harness/experiment.hpp"

namespace dlsim::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  t.header = split(line, ',');
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (cells.size() != t.header.size()) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(t.header.size()) + " columns");
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string run_name(const fs::path& dir) {
  const fs::path clean = dir.lexically_normal();
  return clean.filename().empty() ? clean.parent_path().filename().string()
                                  : clean.filename().string();
}

void privacy_rows(const fs::path& dir, Table& out) {
  const Table t = read_csv(dir / "report.csv");
  if (t.header != AttackReport::columns()) {
    throw PreconditionError("schema drift: " + (dir / "report.csv").string() +
                            " is not a mia-passive report");
  }
  const std::string run = run_name(dir);
  for (const auto& r : t.rows) {
    // round,victim,generalization_error,mia_received,mia_marginalized,
    // mia_fl_global,consensus_distance,fl_generalization_error
    out.rows.push_back({run, "dpsgd", r[0], r[1], r[2], r[3], r[6]});
    if (!r[4].empty()) out.rows.push_back({run, "dpsgd-marginalized", r[0], r[1], r[2], r[4], r[6]});
    out.rows.push_back({run, "fedavg", r[0], r[1], r[7], r[5], "0"});
  }
}

void consensus_rows(const fs::path& dir, Table& out) {
  if (!fs::exists(dir / "rounds.jsonl")) {
    bool any = false;
    for (const char* sub : {"dl", "fl", "run", "echo", "passive"}) {
      if (fs::exists(dir / sub / "rounds.jsonl")) {
        consensus_rows(dir / sub, out);
        any = true;
      }
    }
    if (!any) throw IoError("no rounds.jsonl under " + dir.string());
    return;
  }
  const json manifest = read_json(dir / "manifest.json");
  const std::string engine = manifest.at("engine").get<std::string>();
  std::ifstream in(dir / "rounds.jsonl", std::ios::binary);
  if (!in) throw IoError("cannot read " + (dir / "rounds.jsonl").string());
  std::string line;
  const std::string run = run_name(dir);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json rec = json::parse(line);
    out.rows.push_back({run, engine, std::to_string(rec.at("round").get<std::size_t>()),
                        num(rec.at("consensus_distance").get<double>())});
  }
}

void influence_rows(const fs::path& dir, Table& out) {
  const json manifest = read_json(dir / "manifest.json");
  ExperimentConfig cfg = parse_config(manifest.at("config"));
  if (manifest.contains("config_dir")) {
    resolve_paths(cfg, manifest.at("config_dir").get<std::string>());
  }
  const Topology topo = make_topology(cfg);
  const auto dist = shortest_path_distances(topo);
  std::size_t diameter = 1;
  for (const auto& row : dist) diameter = std::max(diameter, *std::max_element(row.begin(), row.end()));
  const std::string run = run_name(dir);
  for (std::size_t t = 1; t <= diameter; ++t) {
    const Matrix w = influence_matrix(topo, t);
    for (NodeId v = 0; v < topo.size(); ++v) {
      for (NodeId u = 0; u < topo.size(); ++u) {
        out.rows.push_back({run, std::to_string(t), std::to_string(v), std::to_string(u),
                            std::to_string(dist[v][u]), num(w(v, u))});
      }
    }
  }
}

}  // namespace

ReportKind parse_report_kind(const std::string& name) {
  if (name == "privacy") return ReportKind::kPrivacy;
  if (name == "consensus") return ReportKind::kConsensus;
  if (name == "influence") return ReportKind::kInfluence;
  throw ConfigError("unknown report kind \"" + name + "\" (known: privacy, consensus, influence)");
}

Table build_report(const std::vector<fs::path>& inputs, ReportKind kind) {
  if (inputs.empty()) throw ConfigError("report needs at least one input directory");
  Table out;
  switch (kind) {
    case ReportKind::kPrivacy:
      out.header = {"run", "engine", "round", "victim", "gen_error", "mia", "consensus"};
      for (const auto& d : inputs) privacy_rows(d, out);
      break;
    case ReportKind::kConsensus:
      out.header = {"run", "engine", "round", "consensus"};
      for (const auto& d : inputs) consensus_rows(d, out);
      break;
    case ReportKind::kInfluence:
      out.header = {"run", "rounds", "node", "source", "hops", "coefficient"};
      for (const auto& d : inputs) influence_rows(d, out);
      break;
  }
  if (out.rows.empty()) throw PreconditionError("inputs produced no report rows");
  return out;
}

void write_csv(const Table& table, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  if (!out) throw IoError("write failed for " + path.string());
}

void write_gnuplot(const Table& table, const std::vector<std::string>& group_by,
                   const fs::path& path) {
  std::vector<std::size_t> keys;
  std::vector<std::size_t> values;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    const bool is_key = std::find(group_by.begin(), group_by.end(), table.header[i]) !=
                        group_by.end();
    (is_key ? keys : values).push_back(i);
  }
  std::map<std::vector<std::string>, std::vector<const std::vector<std::string>*>> groups;
  std::vector<std::vector<std::string>> order;
  for (const auto& r : table.rows) {
    std::vector<std::string> k;
    for (auto i : keys) k.push_back(r[i]);
    auto [it, inserted] = groups.try_emplace(k);
    if (inserted) order.push_back(k);
    it->second.push_back(&r);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << '#';
  for (auto i : values) out << ' ' << table.header[i];
  out << '\n';
  bool first = true;
  for (const auto& k : order) {
    if (!first) out << "\n\n";
    first = false;
    out << "#";
    for (std::size_t j = 0; j < keys.size(); ++j) out << ' ' << table.header[keys[j]] << '=' << k[j];
    out << '\n';
    for (const auto* r : groups[k]) {
      for (std::size_t j = 0; j < values.size(); ++j) {
        const std::string& cell = (*r)[values[j]];
        out << (j ? " " : "") << (cell.empty() ? "NaN" : cell);
      }
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace dlsim::harness
