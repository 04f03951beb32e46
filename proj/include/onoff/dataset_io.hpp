#pragma once

// Dataset CSV format:
//
//   # optional comment lines
//   eta,no_click,total
//   0.2,9800000,10000000
//   ...
//
// One row per efficiency, η strictly increasing. Efficiencies are written in
// shortest round-trip form, so load(save(d)) == d exactly.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "onoff/error.hpp"
#include "onoff/forward_model.hpp"

namespace onoff {

inline constexpr std::string_view kDatasetHeader = "eta,no_click,total";

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, const char* what) {
  field = trim(field);
  T value{};
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (field.empty() || ec != std::errc() || ptr != end) {
    throw ParseError(line, std::string("cannot parse ") + what + " '" + std::string(field) + "'");
  }
  return value;
}

inline std::string format_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

}  // namespace detail

inline OnOffDataset read_dataset(std::istream& in) {
  std::vector<double> etas;
  std::vector<std::uint64_t> no_click;
  std::vector<std::uint64_t> total;
  bool header_seen = false;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view text = detail::trim(raw);
    if (text.empty() || text.front() == '#') continue;
    if (!header_seen) {
      if (text != kDatasetHeader) {
        throw ParseError(line, "expected header '" + std::string(kDatasetHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    const auto c1 = text.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : text.find(',', c1 + 1);
    if (c2 == std::string_view::npos || text.find(',', c2 + 1) != std::string_view::npos) {
      throw ParseError(line, "expected 3 comma-separated fields");
    }
    const auto eta = detail::parse_number<double>(text.substr(0, c1), line, "efficiency");
    const auto n0 = detail::parse_number<std::uint64_t>(text.substr(c1 + 1, c2 - c1 - 1), line, "no-click count");
    const auto n = detail::parse_number<std::uint64_t>(text.substr(c2 + 1), line, "total count");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ParseError(line, "efficiency outside [0,1]");
    if (!etas.empty() && !(eta > etas.back())) throw ParseError(line, "efficiencies must be strictly increasing");
    if (n < 1) throw ParseError(line, "total runs must be >= 1");
    if (n0 > n) throw ParseError(line, "no-click count exceeds total runs");
    etas.push_back(eta);
    no_click.push_back(n0);
    total.push_back(n);
  }
  if (!header_seen) throw ParseError(line, "missing header '" + std::string(kDatasetHeader) + "'");
  if (etas.empty()) throw ParseError(line, "dataset has no rows");
  return OnOffDataset(EfficiencyGrid(std::move(etas)), std::move(no_click), std::move(total));
}

inline void write_dataset(std::ostream& out, const OnOffDataset& data) {
  out << kDatasetHeader << '\n';
  for (std::size_t v = 0; v < data.size(); ++v) {
    out << detail::format_double(data.grid()[v]) << ',' << data.no_click()[v] << ',' << data.total()[v] << '\n';
  }
}

inline OnOffDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  return read_dataset(in);
}

/// Writes `contents` to a sibling temporary file and renames it over `path`.
inline void write_file_atomically(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

inline void save_dataset(const OnOffDataset& data, const std::filesystem::path& path) {
  std::ostringstream out;
  write_dataset(out, data);
  write_file_atomically(path, out.str());
}

}  // namespace onoff
