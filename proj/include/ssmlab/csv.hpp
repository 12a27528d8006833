#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <vector>

namespace ssmlab {

// Doubles rendered with 17 significant digits round-trip exactly.
inline std::string csv_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// RFC-4180 quoting: fields containing commas, quotes, or newlines are quoted
// with embedded quotes doubled.
inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char c : field) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void write_header(const std::vector<std::string>& names) {
    begin_row();
    for (const std::string& n : names) field(n);
    end_row();
  }

  void begin_row() { first_ = true; }

  void field(const std::string& s) {
    if (!first_) out_ << ',';
    out_ << csv_escape(s);
    first_ = false;
  }
  void field(const char* s) { field(std::string(s)); }
  void field(double x) { field(csv_double(x)); }
  void field(int x) { field(std::to_string(x)); }
  void field(long long x) { field(std::to_string(x)); }
  void field(unsigned long long x) { field(std::to_string(x)); }

  void end_row() { out_ << '\n'; }

 private:
  std::ostream& out_;
  bool first_ = true;
};

}  // namespace ssmlab
