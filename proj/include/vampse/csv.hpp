#pragma once

#include <cstdio>
#include <initializer_list>
#include <ostream>
#include <string>

namespace vampse {

// fixed "%.12g" so re-runs are byte-identical; C locale, dot decimal
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

// round-trip exact, used where the text is parsed back
inline std::string format_double_exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void header(std::initializer_list<const char*> names) {
    bool first = true;
    for (const char* n : names) {
      if (!first) out_ << ',';
      out_ << n;
      first = false;
    }
    out_ << '\n';
  }

  void field(double v) {
    sep();
    out_ << format_double(v);
  }
  void field(int v) {
    sep();
    out_ << v;
  }
  void field(std::uint64_t v) {
    sep();
    out_ << v;
  }
  void field(const std::string& v) {
    sep();
    out_ << v;
  }

  void end_row() {
    out_ << '\n';
    row_open_ = false;
  }

 private:
  void sep() {
    if (row_open_) out_ << ',';
    row_open_ = true;
  }
  std::ostream& out_;
  bool row_open_ = false;
};

}  // namespace vampse
