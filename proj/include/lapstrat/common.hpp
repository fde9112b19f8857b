#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lapstrat {

// Parsing / formatting helpers shared by the delimited-text readers and writers.

std::string trim(const std::string& s);
std::vector<std::string> split(const std::string& s, char delim);

// Formats a double with enough digits to round-trip, in a stable way across runs.
std::string fmt_double(double v);
// Fixed-precision variant for report files.
std::string fmt_fixed(double v, int digits);

double parse_double(const std::string& s, const std::string& context);
long parse_long(const std::string& s, const std::string& context);

struct DelimitedTable {
  char delimiter = ',';
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // comment lines ("# ...") seen before the header, without the leading '#'
  std::vector<std::string> preamble;

  int column(const std::string& name) const;                // -1 if absent
  int require_column(const std::string& name) const;        // throws if absent
};

// Reads a delimited text table. The delimiter is detected from the header
// line (';' if it contains more semicolons than commas, ',' otherwise).
DelimitedTable read_delimited(const std::string& path);
DelimitedTable read_delimited_string(const std::string& text, const std::string& name);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
bool file_exists(const std::string& path);

// FNV-1a 64-bit content hash, hex encoded. Used for artifact manifests.
std::uint64_t fnv1a64(const void* data, std::size_t n);
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::string& path);

// Deterministic index-sharded parallel loop. Results must be written by
// index; the partition of indices onto threads never affects the output.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace lapstrat
