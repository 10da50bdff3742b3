#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dlsim::harness {

// privacy:   attack directories holding a mia-passive report.csv
// consensus: run directories (or attack directories with dl/ and fl/ runs)
// influence: run directories; W^t coefficients of the run's topology for
//            t = 1..diameter
enum class ReportKind { kPrivacy, kConsensus, kInfluence };

ReportKind parse_report_kind(const std::string& name);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

Table build_report(const std::vector<std::filesystem::path>& inputs, ReportKind kind);

void write_csv(const Table& table, const std::filesystem::path& path);

// Whitespace-separated numeric columns, one gnuplot data block per group of
// rows sharing the given key columns. Non-numeric columns become comments.
void write_gnuplot(const Table& table, const std::vector<std::string>& group_by,
                   const std::filesystem::path& path);

}  // namespace dlsim::harness
