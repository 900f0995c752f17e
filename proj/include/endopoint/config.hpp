#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace endopoint {

/// Bad configuration or input; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

/// Every key the run configuration accepts.
const std::vector<ConfigKey>& config_keys();

class RunConfig {
 public:
  RunConfig();  // all defaults

  /// Parses `key = value` lines; `#` starts a comment. Unknown keys,
  /// duplicates and malformed lines throw ConfigError naming `origin:line`.
  static RunConfig parse(const std::string& text,
                         const std::string& origin = "config");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;  // set to a nonempty value

  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  long integer(const std::string& key) const;
  std::size_t count(const std::string& key) const;  // nonnegative integer
  std::uint64_t seed(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;  // comma separated
  std::vector<int> int_list(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;

  /// Canonical `key = value` dump in table order.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace endopoint
