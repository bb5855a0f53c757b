#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scaffold/core.hpp"
#include "scaffold/errors.hpp"
#include "scaffold/hashing.hpp"
#include "scaffold/scripted.hpp"

namespace scaffold {

// ============================================================================
// File IO helpers
// ============================================================================

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IO_ERROR, "cannot open for reading: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) fail(ErrorCode::IO_ERROR, "read failed: " + path);
  return buf.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IO_ERROR, "cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  out.flush();
  if (!out) fail(ErrorCode::IO_ERROR, "write failed: " + path);
}

// ============================================================================
// Dataset manifest
// ============================================================================

/**
 * Summary of a loaded problem file. content_hash is a hash of the raw file
 * bytes, so two loads of the same bytes always agree, and a run record can
 * pin exactly which dataset revision it saw.
 */
struct DatasetManifest {
  std::string name;
  std::string path;
  int count = 0;
  std::map<int, int> level_histogram;
  std::string content_hash;

  bool operator==(const DatasetManifest&) const = default;
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [level, n] : m.level_histogram) hist[std::to_string(level)] = n;
  j = nlohmann::json{{"name", m.name},
                     {"path", m.path},
                     {"count", m.count},
                     {"level_histogram", hist},
                     {"content_hash", m.content_hash}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  j.at("name").get_to(m.name);
  j.at("path").get_to(m.path);
  j.at("count").get_to(m.count);
  m.level_histogram.clear();
  for (const auto& [key, value] : j.at("level_histogram").items()) {
    m.level_histogram[std::stoi(key)] = value.get<int>();
  }
  j.at("content_hash").get_to(m.content_hash);
}

struct Dataset {
  std::vector<Problem> problems;
  DatasetManifest manifest;
};

// ============================================================================
// Problem JSONL ingestion
// ============================================================================

namespace detail {

// Levels arrive either as a bare integer or as strings like "Level 3".
// Anything unparsable is preserved verbatim in extra and left unset.
inline std::optional<int> parse_level(const nlohmann::json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    size_t i = s.find_last_not_of("0123456789");
    const std::string digits = (i == std::string::npos) ? s : s.substr(i + 1);
    if (!digits.empty() && digits.size() <= 9) return std::stoi(digits);
  }
  return std::nullopt;
}

inline std::string fallback_id(int line_number) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "item-%04d", line_number);
  return buf;
}

inline Problem parse_problem_line(const nlohmann::json& j, int line_number) {
  if (!j.is_object()) {
    fail(ErrorCode::PARSE_ERROR, "line " + std::to_string(line_number) + ": expected a JSON object");
  }
  auto require_text = [&](const char* field) -> std::string {
    if (!j.contains(field)) {
      fail(ErrorCode::MISSING_FIELD,
           "line " + std::to_string(line_number) + ": missing \"" + field + "\"");
    }
    const nlohmann::json& v = j.at(field);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) return v.dump();
    fail(ErrorCode::PARSE_ERROR,
         "line " + std::to_string(line_number) + ": \"" + field + "\" must be a string");
  };

  Problem p;
  p.statement = require_text("problem");
  p.gold_answer = require_text("answer");
  if (j.contains("unique_id") && j.at("unique_id").is_string()) {
    p.id = j.at("unique_id").get<std::string>();
  }
  if (p.id.empty()) p.id = fallback_id(line_number);

  p.extra = nlohmann::json::object();
  for (const auto& [key, value] : j.items()) {
    if (key == "problem" || key == "answer" || key == "unique_id") continue;
    if (key == "level") {
      if (auto lvl = parse_level(value)) {
        p.level = *lvl;
        continue;
      }
      p.extra["level"] = value;
      continue;
    }
    if (key == "subject" && value.is_string()) {
      p.subject = value.get<std::string>();
      continue;
    }
    p.extra[key] = value;
  }
  return p;
}

} // namespace detail

/**
 * Load a JSONL problem file (one JSON object per line; blank lines ignored).
 *
 * Recognized fields: problem (required), answer (required), unique_id,
 * level, subject. Unknown fields ride along in Problem::extra. Records
 * without a unique_id get a deterministic "item-NNNN" id from their line
 * number. Duplicate ids are rejected.
 */
inline Dataset load_problems(const std::string& path) {
  const std::string bytes = read_text_file(path);

  Dataset ds;
  ds.manifest.path = path;
  ds.manifest.name = std::filesystem::path(path).stem().string();
  ds.manifest.content_hash = hex64(fnv1a64(bytes));

  std::set<std::string> seen_ids;
  std::istringstream lines(bytes);
  std::string line;
  int line_number = 0;
  while (std::getline(lines, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::PARSE_ERROR, "line " + std::to_string(line_number) + ": " + e.what());
    }
    Problem p = detail::parse_problem_line(j, line_number);
    if (!seen_ids.insert(p.id).second) {
      fail(ErrorCode::DUPLICATE_ID,
           "line " + std::to_string(line_number) + ": id \"" + p.id + "\" appears twice");
    }
    if (p.level) ++ds.manifest.level_histogram[*p.level];
    ds.problems.push_back(std::move(p));
  }
  ds.manifest.count = static_cast<int>(ds.problems.size());
  return ds;
}

/** Write problems back out as JSONL, one canonical-form object per line. */
inline void write_problems(const std::string& path, const std::vector<Problem>& problems) {
  std::string out;
  for (const Problem& p : problems) {
    nlohmann::json j = nlohmann::json::object();
    j["problem"] = p.statement;
    j["answer"] = p.gold_answer;
    j["unique_id"] = p.id;
    if (p.level) j["level"] = *p.level;
    if (p.subject) j["subject"] = *p.subject;
    if (p.extra.is_object()) {
      for (const auto& [key, value] : p.extra.items()) j[key] = value;
    }
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

// ============================================================================
// Scripted suite IO
// ============================================================================

inline ScriptedSuite load_scripted_suite(const std::string& path) {
  const std::string bytes = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SCHEMA_ERROR, std::string("suite is not valid JSON: ") + e.what());
  }
  ScriptedSuite suite;
  try {
    suite = j.get<ScriptedSuite>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SCHEMA_ERROR, std::string("suite shape mismatch: ") + e.what());
  }
  validate_scripted_suite(suite);
  return suite;
}

/**
 * Load a suite and cross-check it against the dataset it claims to script:
 * every problem_id referenced by an SLM or LLM table entry must exist.
 */
inline ScriptedSuite load_scripted_suite(const std::string& path,
                                         const std::vector<Problem>& problems) {
  ScriptedSuite suite = load_scripted_suite(path);
  std::set<std::string> known;
  for (const Problem& p : problems) known.insert(p.id);
  auto check = [&](const ScriptedBehavior& behavior, const char* which) {
    for (const ScriptedEntry& e : behavior.step_table) {
      if (!known.count(e.problem_id)) {
        fail(ErrorCode::DANGLING_PROBLEM_ID,
             std::string(which) + " entry references unknown problem \"" + e.problem_id + "\"");
      }
    }
  };
  check(suite.slm, "slm");
  check(suite.llm, "llm");
  return suite;
}

inline void save_scripted_suite(const std::string& path, const ScriptedSuite& suite) {
  nlohmann::json j = suite;
  write_text_file(path, j.dump(2) + "\n");
}

} // namespace scaffold
