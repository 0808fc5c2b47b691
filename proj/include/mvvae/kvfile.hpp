#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace mvvae {

// Flat "key = value" configuration text. Lines starting with '#' and blank
// lines are ignored. Keys are dotted paths ("experiment.mode"). Consumers
// read values through the typed getters; finish() then rejects any key that
// was never consumed, so misspelled options fail loudly.
class KeyValueFile {
 public:
  static KeyValueFile parse_text(const std::string& text);   // throws ConfigError
  static KeyValueFile parse_file(const std::string& path);   // throws ConfigError

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<int> get_int_list(const std::string& key, std::vector<int> fallback);
  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback);
  std::vector<std::string> get_string_list(const std::string& key,
                                           std::vector<std::string> fallback);
  std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                          std::vector<std::uint64_t> fallback);

  // Throws ConfigError listing every present-but-unconsumed key.
  void finish() const;

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

}  // namespace mvvae
