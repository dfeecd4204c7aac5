#pragma once

#include <charconv>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

namespace xmerge {

/// Shortest round-trippable text for a double.
inline std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

/// Minimal CSV emitter: '#'-prefixed comment lines, then a header row, then
/// data rows. Numeric cells use round-trippable formatting.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void comment(std::string_view line) { out_ << "# " << line << '\n'; }

  template <typename... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((write_cell(cells, first)), ...);
    out_ << '\n';
  }

 private:
  template <typename T>
  void write_cell(const T& cell, bool& first) {
    if (!first) out_ << ',';
    first = false;
    if constexpr (std::is_floating_point_v<T>) {
      out_ << format_double(cell);
    } else {
      out_ << cell;
    }
  }

  std::ostream& out_;
};

}  // namespace xmerge
