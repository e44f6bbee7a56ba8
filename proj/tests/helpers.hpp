#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace testutil {

inline std::string source_dir() { return DHRAG_SOURCE_DIR; }
inline std::string cli_path() { return DHRAG_CLI_PATH; }

inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("dhrag_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

/// Random space-separated pseudo-word strings for property tests.
inline std::string random_text(std::mt19937& rng, int min_tokens = 1, int max_tokens = 8) {
  static const std::vector<std::string> pool = {
      "alpha", "bravo", "charlie", "delta", "echo",  "foxtrot", "golf",   "hotel",
      "india", "juliet", "kilo",   "lima",  "mike",  "november", "oscar", "papa",
      "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey", "xray",
      "yankee", "zulu"};
  std::uniform_int_distribution<int> count(min_tokens, max_tokens);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  int n = count(rng);
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i) out += " ";
    out += pool[pick(rng)];
  }
  return out;
}

}  // namespace testutil
