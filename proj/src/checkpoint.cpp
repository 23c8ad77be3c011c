#include "dnas/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace dnas::nn {

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  std::filesystem::path p = stem;
  p += ext;
  return p;
}

std::uint64_t to_little(std::uint64_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((bits >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return out;
  }
  return bits;
}

}  // namespace

void save_checkpoint(const ParamStore<double>& store, const std::filesystem::path& stem) {
  nlohmann::json index{{"format", "dnas-tensors"}, {"version", 1},       {"dtype", "float64"},
                       {"byte_order", "little"},   {"step", store.step()}, {"tensors", nlohmann::json::array()}};
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw Error(ErrorCode::kIoError, "cannot write " + with_ext(stem, ".bin").string());
  std::uint64_t offset = 0;
  for (const auto& [name, p] : store) {
    const auto rows = p.value.rows(), cols = p.value.cols();
    index["tensors"].push_back({{"name", name},
                                {"shape", {rows, cols}},
                                {"offset", offset},
                                {"count", rows * cols}});
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        const std::uint64_t bits = to_little(std::bit_cast<std::uint64_t>(p.value(r, c)));
        bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    offset += static_cast<std::uint64_t>(rows * cols) * 8u;
  }
  std::ofstream js(with_ext(stem, ".json"));
  if (!js) throw Error(ErrorCode::kIoError, "cannot write " + with_ext(stem, ".json").string());
  js << index.dump(2) << '\n';
}

void load_checkpoint(ParamStore<double>& store, const std::filesystem::path& stem) {
  const auto json_path = with_ext(stem, ".json");
  const auto bin_path = with_ext(stem, ".bin");
  std::ifstream js(json_path);
  if (!js) throw Error(ErrorCode::kMissingCheckpoint, json_path.string());
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, json_path.string() + ": " + e.what());
  }
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw Error(ErrorCode::kMissingCheckpoint, bin_path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  std::size_t loaded = 0;
  for (const auto& t : index.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    auto& value = store.value(name);
    const auto rows = t.at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at("shape").at(1).get<Eigen::Index>();
    if (rows != value.rows() || cols != value.cols())
      throw Error(ErrorCode::kShapeMismatch, "checkpoint tensor " + name + " has a different shape");
    const auto offset = t.at("offset").get<std::uint64_t>();
    if (offset + static_cast<std::uint64_t>(rows * cols) * 8u > bytes.size())
      throw Error(ErrorCode::kParseError, "checkpoint binary truncated at " + name);
    const char* src = bytes.data() + offset;
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c, src += 8) {
        std::uint64_t bits;
        std::memcpy(&bits, src, 8);
        value(r, c) = std::bit_cast<double>(to_little(bits));
      }
    ++loaded;
  }
  if (loaded != store.size())
    throw Error(ErrorCode::kShapeMismatch, "checkpoint does not cover every parameter");
  store.set_step(index.value("step", std::uint64_t{0}));
}

}  // namespace dnas::nn
