#include "manifest.hpp"

#include <fstream>

#include "egopose/errors.hpp"

#ifndef EGOPOSE_CODE_VERSION
#define EGOPOSE_CODE_VERSION "unknown"
#endif

namespace egopose::cli {

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : start_(std::chrono::steady_clock::now()) {
  doc_["manifest_version"] = 1;
  doc_["command"] = std::move(command);
  doc_["argv"] = std::move(argv);
  doc_["code_version"] = code_version();
  doc_["config"] = nlohmann::json::object();
  doc_["seeds"] = nlohmann::json::object();
  doc_["inputs"] = nlohmann::json::array();
  doc_["outputs"] = nlohmann::json::array();
  doc_["timings_s"] = nlohmann::json::object();
}

void RunManifest::write(const std::filesystem::path& path) {
  doc_["timings_s"]["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  write_file_atomic(path, doc_.dump(2) + "\n");
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string code_version() { return EGOPOSE_CODE_VERSION; }

}  // namespace egopose::cli
