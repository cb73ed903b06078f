#pragma once

#include <array>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace lndet {

// Map from station names to classifier head indices. Head indices must
// cover [0, num_heads) with no gaps; a head nobody maps to would never
// receive training data.
class StationGrouping {
 public:
  StationGrouping(int num_heads, std::map<std::string, int> station_to_head)
      : num_heads_(num_heads), map_(std::move(station_to_head)) {
    if (num_heads_ < 1)
      throw std::invalid_argument("StationGrouping: num_heads < 1");
    if (map_.empty()) throw std::invalid_argument("StationGrouping: empty map");
    std::set<int> used;
    for (const auto& [name, head] : map_) {
      if (head < 0 || head >= num_heads_)
        throw std::invalid_argument("StationGrouping: head index for '" + name +
                                    "' outside [0," + std::to_string(num_heads_) + ")");
      used.insert(head);
    }
    if (static_cast<int>(used.size()) != num_heads_)
      throw std::invalid_argument("StationGrouping: some head has no station mapped to it");
  }

  int num_heads() const { return num_heads_; }
  const std::map<std::string, int>& mapping() const { return map_; }

  bool contains(const std::string& station) const { return map_.count(station) != 0; }

  int head_of(const std::string& station) const {
    auto it = map_.find(station);
    if (it == map_.end())
      throw std::invalid_argument("StationGrouping: unknown station '" + station + "'");
    return it->second;
  }

  // The 14 IASLC thoracic station names; "10-14" names the pulmonary group.
  static const std::array<std::string, 14>& iaslc_stations() {
    static const std::array<std::string, 14> names = {
        "1L", "1R", "2L", "2R", "3A", "3P", "4L",
        "4R", "5",  "6",  "7",  "8",  "9",  "10-14"};
    return names;
  }

  // Built-in presets over the IASLC names.
  //   c=1  : everything in one head.
  //   c=6  : supraclavicular / superior mediastinal / aortopulmonary /
  //          subcarinal / inferior mediastinal / pulmonary super-stations.
  //   c=14 : one head per station.
  static StationGrouping iaslc_preset(int c) {
    const auto& names = iaslc_stations();
    std::map<std::string, int> m;
    if (c == 1) {
      for (const auto& n : names) m[n] = 0;
    } else if (c == 6) {
      m["1L"] = 0; m["1R"] = 0;
      m["2L"] = 1; m["2R"] = 1; m["3A"] = 1; m["3P"] = 1; m["4L"] = 1; m["4R"] = 1;
      m["5"] = 2;  m["6"] = 2;
      m["7"] = 3;
      m["8"] = 4;  m["9"] = 4;
      m["10-14"] = 5;
    } else if (c == 14) {
      for (size_t i = 0; i < names.size(); ++i) m[names[i]] = static_cast<int>(i);
    } else {
      throw std::invalid_argument("StationGrouping: no preset for c=" + std::to_string(c));
    }
    return StationGrouping(c, std::move(m));
  }

  // Identity grouping over stations named "0".."c-1" (synthetic data).
  static StationGrouping identity(int c) {
    if (c < 1) throw std::invalid_argument("StationGrouping: c < 1");
    std::map<std::string, int> m;
    for (int i = 0; i < c; ++i) m[std::to_string(i)] = i;
    return StationGrouping(c, std::move(m));
  }

 private:
  int num_heads_;
  std::map<std::string, int> map_;
};

/// Parse a grouping file: one `station_name = head_index` per line,
/// '#' starts a comment, blank lines ignored. num_heads is inferred as
/// max index + 1; the usual StationGrouping validation applies.
inline StationGrouping parse_grouping(std::istream& in) {
  std::map<std::string, int> m;
  int max_head = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (eq == std::string::npos) {
      if (!trim(line).empty())
        throw std::invalid_argument("grouping file line " + std::to_string(line_no) +
                                    ": expected 'station = head_index'");
      continue;
    }
    const std::string name = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (name.empty() || value.empty())
      throw std::invalid_argument("grouping file line " + std::to_string(line_no) +
                                  ": expected 'station = head_index'");
    int head = 0;
    try {
      size_t pos = 0;
      head = std::stoi(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw std::invalid_argument("grouping file line " + std::to_string(line_no) +
                                  ": bad head index '" + value + "'");
    }
    if (m.count(name))
      throw std::invalid_argument("grouping file line " + std::to_string(line_no) +
                                  ": duplicate station '" + name + "'");
    m[name] = head;
    max_head = std::max(max_head, head);
  }
  if (m.empty()) throw std::invalid_argument("grouping file: no mappings");
  return StationGrouping(max_head + 1, std::move(m));
}

}  // namespace lndet
