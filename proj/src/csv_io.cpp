#include "ecgcl/csv_io.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "ecgcl/error.hpp"

ECGCL_NAMESPACE_BEGIN

namespace fs = std::filesystem;

namespace {

constexpr const char* kHeader = "fs,leads,patient_id";

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void chomp(std::string& s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
}

double parse_double(const std::string& s, int line) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw ParseError("'" + s + "' is not a number", line);
  return v;
}

long parse_long(const std::string& s, int line) {
  errno = 0;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE)
    throw ParseError("'" + s + "' is not an integer", line);
  return v;
}

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open '" + p.string() + "' for reading");
  return in;
}

std::vector<int> read_qrs(const fs::path& p) {
  std::vector<int> qrs;
  if (!fs::exists(p)) return qrs;
  auto in = open_in(p);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    chomp(line);
    if (line.empty()) continue;
    qrs.push_back(static_cast<int>(parse_long(line, no)));
  }
  return qrs;
}

std::vector<int> read_labels(const fs::path& p) {
  std::vector<int> labels;
  if (!fs::exists(p)) return labels;
  auto in = open_in(p);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    chomp(line);
    if (line.empty()) continue;
    for (const auto& f : split_fields(line)) labels.push_back(static_cast<int>(parse_long(f, no)));
  }
  return labels;
}

}  // namespace

EcgRecord load_record_csv(const fs::path& file) {
  auto in = open_in(file);
  std::string line;
  int no = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) return false;
    ++no;
    chomp(line);
    return true;
  };
  if (!next() || line != kHeader)
    throw ParseError(file.string() + ": header must read '" + std::string(kHeader) + "'", std::max(no, 1));
  if (!next()) throw ParseError(file.string() + ": missing header values", 2);
  const auto head = split_fields(line);
  if (head.size() != 3) throw ParseError(file.string() + ": header values need 3 fields", no);
  EcgRecord rec;
  rec.fs = parse_double(head[0], no);
  if (!(rec.fs > 0)) throw ParseError(file.string() + ": fs must be positive", no);
  const long leads = parse_long(head[1], no);
  if (leads < 1 || leads > 4096) throw ParseError(file.string() + ": lead count out of range", no);
  rec.leads = static_cast<int>(leads);
  rec.patient_id = head[2];

  std::vector<std::vector<double>> columns(rec.leads);
  while (next()) {
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (static_cast<int>(fields.size()) != rec.leads)
      throw ParseError(file.string() + ": expected " + std::to_string(rec.leads) + " lead columns, found " +
                           std::to_string(fields.size()),
                       no);
    for (int ld = 0; ld < rec.leads; ++ld) columns[ld].push_back(parse_double(fields[ld], no));
  }
  for (const auto& col : columns) rec.signal.insert(rec.signal.end(), col.begin(), col.end());

  fs::path stem = file;
  rec.qrs = read_qrs(stem.replace_extension(".qrs"));
  rec.labels = read_labels(stem.replace_extension(".labels"));
  try {
    rec.validate();
  } catch (const ConfigError& e) {
    throw ParseError(file.string() + ": " + e.what(), no);
  }
  return rec;
}

std::vector<EcgRecord> load_csv(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("'" + path.string() + "' does not exist");
  if (!fs::is_directory(path)) return {load_record_csv(path)};
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<EcgRecord> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_record_csv(f));
  return out;
}

void save_record_csv(const EcgRecord& record, const fs::path& file) {
  record.validate();
  if (record.patient_id.find_first_of(",\n\r") != std::string::npos)
    throw ConfigError("patient_id may not contain commas or line breaks");
  std::ofstream out(file);
  if (!out) throw IoError("cannot open '" + file.string() + "' for writing");
  out << kHeader << '\n' << fmt::format("{:.9g},{},{}\n", record.fs, record.leads, record.patient_id);
  const int n = record.samples();
  std::string row;
  for (int t = 0; t < n; ++t) {
    row.clear();
    for (int ld = 0; ld < record.leads; ++ld) {
      if (ld) row += ',';
      row += fmt::format("{:.9g}", record.lead(ld)[t]);
    }
    row += '\n';
    out << row;
  }
  fs::path stem = file;
  if (!record.qrs.empty()) {
    std::ofstream q(stem.replace_extension(".qrs"));
    if (!q) throw IoError("cannot write '" + stem.string() + "'");
    for (int v : record.qrs) q << v << '\n';
  }
  if (!record.labels.empty()) {
    std::ofstream l(stem.replace_extension(".labels"));
    if (!l) throw IoError("cannot write '" + stem.string() + "'");
    for (std::size_t i = 0; i < record.labels.size(); ++i) l << (i ? "," : "") << record.labels[i];
    l << '\n';
  }
  if (!out) throw IoError("write to '" + file.string() + "' failed");
}

std::vector<fs::path> save_csv(const std::vector<EcgRecord>& records, const fs::path& dir, const std::string& stem) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  std::vector<fs::path> written;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const fs::path file = dir / fmt::format("{}_{:05d}.csv", stem, i);
    save_record_csv(records[i], file);
    written.push_back(file);
  }
  return written;
}

ECGCL_NAMESPACE_END
