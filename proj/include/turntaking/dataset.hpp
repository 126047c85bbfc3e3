#pragma once

// Groups (roster + conversation, optionally ground-truth scores) and their
// CSV representations:
//
//   conversations  group_id,turn,speaker     (1-based turn and speaker)
//   rosters        group_id,member,trait     (1-based member)
//   ground truth   group_id,member,pi,d
//
// Rows are sorted by group, then by turn or member.

#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace turntaking {

struct GroupData {
  std::size_t group_id = 0;
  Roster roster;
  Conversation conversation;
  std::optional<ScoreParams> truth;

  std::size_t turns() const noexcept { return conversation.size(); }
};

using GroupList = std::vector<GroupData>;

namespace csv_detail {

inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::size_t to_index(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size() || v < 1) throw FormatError("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError(where + ": expected a positive integer, got '" + s + "'");
  }
}

inline double to_real(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw FormatError("");
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": expected a number, got '" + s + "'");
  }
}

/// Reads rows of `columns` fields after checking the header. Strips a trailing CR.
inline std::vector<std::vector<std::string>> read_table(std::istream& is, const std::string& header,
                                                        const std::string& what) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError(what + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw FormatError(what + ": expected header '" + header + "', got '" + line + "'");
  const std::size_t columns = split(header).size();
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != columns)
      throw FormatError(what + " line " + std::to_string(lineno) + ": expected " + std::to_string(columns) + " fields");
    f.push_back(std::to_string(lineno));
    rows.push_back(std::move(f));
  }
  return rows;
}

/// Per group, the (index, row) pairs in file order; checks groups are
/// contiguous and indices run 1, 2, 3, ...
template <class RowFn>
void for_each_group_sequence(const std::vector<std::vector<std::string>>& rows, const std::string& what, RowFn&& fn) {
  std::optional<std::size_t> current;
  std::size_t expected = 1;
  std::map<std::size_t, bool> seen;
  for (const auto& r : rows) {
    const std::string where = what + " line " + r.back();
    const std::size_t g = to_index(r[0], where);
    const std::size_t k = to_index(r[1], where);
    if (!current || *current != g) {
      if (seen.count(g)) throw FormatError(where + ": rows of group " + std::to_string(g) + " are not contiguous");
      seen[g] = true;
      current = g;
      expected = 1;
    }
    if (k != expected)
      throw FormatError(where + ": expected index " + std::to_string(expected) + ", got " + std::to_string(k));
    ++expected;
    fn(g, r, where);
  }
}

}  // namespace csv_detail

inline void write_conversations_csv(std::ostream& os, const GroupList& groups) {
  os << "group_id,turn,speaker\n";
  for (const auto& g : groups)
    for (std::size_t t = 0; t < g.conversation.size(); ++t)
      os << g.group_id << ',' << t + 1 << ',' << g.conversation[t] + 1 << '\n';
}

inline void write_rosters_csv(std::ostream& os, const GroupList& groups) {
  os << "group_id,member,trait\n";
  auto old = os.precision(17);
  for (const auto& g : groups)
    for (std::size_t i = 0; i < g.roster.size(); ++i) os << g.group_id << ',' << i + 1 << ',' << g.roster[i] << '\n';
  os.precision(old);
}

inline void write_truth_csv(std::ostream& os, const GroupList& groups) {
  os << "group_id,member,pi,d\n";
  auto old = os.precision(17);
  for (const auto& g : groups) {
    if (!g.truth) continue;
    for (std::size_t i = 0; i < g.truth->size(); ++i)
      os << g.group_id << ',' << i + 1 << ',' << g.truth->inherent[i] << ',' << g.truth->memory[i] << '\n';
  }
  os.precision(old);
}

/// Joins roster and conversation tables (and optionally ground truth) into
/// groups ordered as in the roster file.
inline GroupList read_groups(std::istream& rosters, std::istream& conversations, std::istream* truth = nullptr) {
  using namespace csv_detail;
  std::vector<std::size_t> order;
  std::map<std::size_t, std::vector<double>> traits;
  for_each_group_sequence(read_table(rosters, "group_id,member,trait", "roster"), "roster",
                          [&](std::size_t g, const auto& r, const std::string& where) {
                            if (!traits.count(g)) order.push_back(g);
                            traits[g].push_back(to_real(r[2], where));
                          });
  std::map<std::size_t, std::vector<std::size_t>> speakers;
  for_each_group_sequence(read_table(conversations, "group_id,turn,speaker", "conversation"), "conversation",
                          [&](std::size_t g, const auto& r, const std::string& where) {
                            if (!traits.count(g))
                              throw FormatError(where + ": group " + std::to_string(g) + " has no roster");
                            const std::size_t s = to_index(r[2], where);
                            if (s > traits[g].size())
                              throw FormatError(where + ": speaker " + std::to_string(s) + " is not in the roster");
                            speakers[g].push_back(s - 1);
                          });
  std::map<std::size_t, ScoreParams> truths;
  if (truth) {
    for_each_group_sequence(read_table(*truth, "group_id,member,pi,d", "ground truth"), "ground truth",
                            [&](std::size_t g, const auto& r, const std::string& where) {
                              truths[g].inherent.push_back(to_real(r[2], where));
                              truths[g].memory.push_back(to_real(r[3], where));
                            });
  }
  GroupList groups;
  for (auto g : order) {
    GroupData gd;
    gd.group_id = g;
    try {
      gd.roster = Roster(traits[g]);
      gd.conversation = Conversation(speakers[g], traits[g].size());
      if (truths.count(g)) {
        truths[g].validate(traits[g].size());
        gd.truth = truths[g];
      }
    } catch (const DomainError& e) {
      throw FormatError("group " + std::to_string(g) + ": " + e.what());
    }
    if (gd.conversation.size() == 0) throw FormatError("group " + std::to_string(g) + " has no turns");
    groups.push_back(std::move(gd));
  }
  return groups;
}

}  // namespace turntaking
