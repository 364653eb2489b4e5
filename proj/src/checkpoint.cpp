#include "mtms/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

#include "mtms/checksum.hpp"
#include "mtms/manifest.hpp"

namespace mtms {

using nlohmann::json;

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

json read_manifest(const std::filesystem::path& stem) {
  std::ifstream in(with_ext(stem, ".json"));
  if (!in) throw std::runtime_error("cannot open checkpoint " + with_ext(stem, ".json").string());
  return json::parse(in);
}

}  // namespace

std::string serialize_values(const nn::ParameterSet<float>& params) {
  std::string blob;
  blob.reserve(params.scalar_count() * 4);
  for (const auto* p : params) {
    // Column-major flat order, matching Eigen's storage.
    for (Eigen::Index i = 0; i < p->value.size(); ++i) append_f32_le(blob, p->value.data()[i]);
  }
  return blob;
}

std::string parameter_checksum(const nn::ParameterSet<float>& params) {
  const std::string blob = serialize_values(params);
  return sha256_hex(std::as_bytes(std::span(blob.data(), blob.size())));
}

void save_checkpoint(const nn::ParameterSet<float>& params, const std::filesystem::path& stem, const json& metadata) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  json entries = json::array();
  for (const auto* p : params) {
    entries.push_back({{"name", p->name}, {"shape", {p->value.rows(), p->value.cols()}}, {"trainable", p->trainable}});
  }
  const std::string blob = serialize_values(params);
  json manifest = {{"format", "mtms-checkpoint-v1"},
                   {"dtype", "float32-le"},
                   {"parameters", entries},
                   {"blob_sha256", sha256_hex(std::as_bytes(std::span(blob.data(), blob.size())))},
                   {"metadata", metadata}};
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + with_ext(stem, ".bin").string());
  bin.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream js(with_ext(stem, ".json"));
  if (!js) throw std::runtime_error("cannot write " + with_ext(stem, ".json").string());
  js << manifest.dump(1) << '\n';
}

json load_checkpoint(const nn::ParameterSet<float>& params, const std::filesystem::path& stem) {
  const json manifest = read_manifest(stem);
  const auto& entries = manifest.at("parameters");
  if (entries.size() != params.size()) {
    throw std::runtime_error("checkpoint " + stem.string() + ": " + std::to_string(entries.size()) +
                             " parameters stored, model has " + std::to_string(params.size()));
  }
  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + with_ext(stem, ".bin").string());
  const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (blob.size() != params.scalar_count() * 4) {
    throw std::runtime_error("checkpoint " + stem.string() + ": blob size mismatch");
  }
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& e = entries[i];
    const auto rows = e.at("shape")[0].get<Eigen::Index>();
    const auto cols = e.at("shape")[1].get<Eigen::Index>();
    if (e.at("name").get<std::string>() != p.name || rows != p.value.rows() || cols != p.value.cols()) {
      throw std::runtime_error("checkpoint " + stem.string() + ": entry " + std::to_string(i) + " is " +
                               e.at("name").get<std::string>() + " but model expects " + p.name);
    }
    for (Eigen::Index k = 0; k < p.value.size(); ++k, off += 4) p.value.data()[k] = read_f32_le(blob.data() + off);
  }
  return manifest.at("metadata");
}

json read_checkpoint_metadata(const std::filesystem::path& stem) { return read_manifest(stem).at("metadata"); }

}  // namespace mtms
