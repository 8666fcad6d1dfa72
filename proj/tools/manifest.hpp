// Run manifests: a JSON record of one CLI invocation, written atomically.
#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace egopose::cli {

class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  void set_config(nlohmann::json config) { doc_["config"] = std::move(config); }
  void add_seed(const std::string& name, std::uint64_t seed) { doc_["seeds"][name] = seed; }
  void add_input(const std::filesystem::path& p) { doc_["inputs"].push_back(p.string()); }
  void add_output(const std::filesystem::path& p) { doc_["outputs"].push_back(p.string()); }
  void add_timing(const std::string& name, double seconds) { doc_["timings_s"][name] = seconds; }
  nlohmann::json& extra() { return doc_["results"]; }

  /// Stamps total wall time and renames a temporary file into place.
  void write(const std::filesystem::path& path);

 private:
  nlohmann::json doc_;
  std::chrono::steady_clock::time_point start_;
};

/// Writes text to path through a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

std::string code_version();

}  // namespace egopose::cli
