#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ecgcl/data.hpp"

ECGCL_NAMESPACE_BEGIN

/// Reads one record file, or every *.csv in a directory (sorted by name).
/// Sidecars `<stem>.qrs` and `<stem>.labels` are optional. Malformed content
/// raises ParseError carrying the 1-based line number; unreadable paths raise
/// IoError.
std::vector<EcgRecord> load_csv(const std::filesystem::path& path);

/// Writes `<dir>/<stem>_<i>.csv` plus sidecars for every record and returns
/// the written CSV paths. Values are printed with 9 significant digits.
std::vector<std::filesystem::path> save_csv(const std::vector<EcgRecord>& records,
                                            const std::filesystem::path& dir, const std::string& stem = "record");

/// Single record at an explicit file path.
void save_record_csv(const EcgRecord& record, const std::filesystem::path& file);
EcgRecord load_record_csv(const std::filesystem::path& file);

ECGCL_NAMESPACE_END
