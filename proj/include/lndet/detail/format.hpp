#pragma once

#include <cstdio>
#include <string>

namespace lndet::detail {

// All numeric text output (JSONL, CSV, reports) goes through this so that
// files are reproducible byte-for-byte: 9 significant digits, C locale.
inline std::string format_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace lndet::detail
