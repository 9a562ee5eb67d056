#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace modwatch::cli {

// Flat "section.key" configuration. Values come from built-in defaults, the
// scale preset, an INI file and command flags, in increasing precedence.
// Unknown keys are rejected everywhere.
class RunConfig {
 public:
  struct Key {
    std::string name;
    std::string fallback;
    std::string help;
  };

  RunConfig();

  static const std::vector<Key>& keys();
  static bool known(const std::string& key);

  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  bool is_explicit(const std::string& key) const;

  // Replaces the value of every listed key that was not set explicitly.
  void apply_defaults(const std::map<std::string, std::string>& values);

  // Fills paper-scale values for keys nobody set explicitly, and takes the
  // run seed from MODWATCH_SEED when neither file nor flag gave one.
  void resolve();

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::size_t> get_sizes(const std::string& key) const;

  std::map<std::string, std::string> flat() const;
  void write(const std::filesystem::path& path) const;

 private:
  struct Value {
    std::string text;
    bool explicit_ = false;
  };
  std::map<std::string, Value> values_;
};

}  // namespace modwatch::cli
