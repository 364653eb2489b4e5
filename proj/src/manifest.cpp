#include "mtms/manifest.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace mtms {

using nlohmann::json;

void append_f32_le(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float read_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::filesystem::path write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const long h = ds.empty() ? 0 : ds.samples.front().image.rows();
  const long w = ds.empty() ? 0 : ds.samples.front().image.cols();

  std::string payload;
  payload.reserve(ds.size() * static_cast<std::size_t>(h * w) * 4);
  json records = json::array();
  for (const auto& s : ds.samples) {
    if (s.image.rows() != h || s.image.cols() != w) {
      throw std::invalid_argument("write_dataset: mixed image shapes in " + ds.name);
    }
    for (Eigen::Index i = 0; i < s.image.size(); ++i) append_f32_le(payload, s.image.data()[i]);
    records.push_back({{"id", s.id}, {"label", s.label ? json(*s.label) : json(nullptr)}});
  }
  const auto counts = ds.class_counts();
  const std::string bin_name = ds.name + ".bin";
  json manifest = {{"name", ds.name},
                   {"domain_id", ds.domain_id},
                   {"height", h},
                   {"width", w},
                   {"count", ds.size()},
                   {"class_counts", {counts[0], counts[1]}},
                   {"payload", bin_name},
                   {"samples", records}};

  const auto bin_path = dir / bin_name;
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + bin_path.string());
  bin.write(payload.data(), static_cast<std::streamsize>(payload.size()));

  const auto manifest_path = dir / (ds.name + ".json");
  std::ofstream js(manifest_path);
  if (!js) throw std::runtime_error("cannot write " + manifest_path.string());
  js << manifest.dump(1) << '\n';
  return manifest_path;
}

Dataset read_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream js(manifest_path);
  if (!js) throw std::runtime_error("cannot open dataset manifest " + manifest_path.string());
  const json m = json::parse(js);

  Dataset ds;
  ds.name = m.at("name").get<std::string>();
  ds.domain_id = m.at("domain_id").get<int>();
  const long h = m.at("height").get<long>();
  const long w = m.at("width").get<long>();
  const auto& records = m.at("samples");

  const auto bin_path = manifest_path.parent_path() / m.at("payload").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open dataset payload " + bin_path.string());
  const std::string payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  const std::size_t per_image = static_cast<std::size_t>(h * w) * 4;
  if (payload.size() != per_image * records.size()) {
    throw std::runtime_error("payload size mismatch for " + bin_path.string());
  }

  ds.samples.reserve(records.size());
  for (std::size_t k = 0; k < records.size(); ++k) {
    Sample s;
    s.image.resize(h, w);
    const char* p = payload.data() + k * per_image;
    for (long i = 0; i < h * w; ++i) s.image.data()[i] = read_f32_le(p + 4 * i);
    s.id = records[k].at("id").get<std::uint32_t>();
    if (!records[k].at("label").is_null()) s.label = records[k].at("label").get<int>();
    s.domain_id = ds.domain_id;
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace mtms
